import type { Choice, Demographics, NextResponse, SessionInfo, SubmitAck } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

/** Network-level failure (server unreachable); retryable, unlike ApiError. */
export class NetworkError extends Error {
  constructor(cause: unknown) {
    super(`network failure: ${String(cause)}`);
    this.name = "NetworkError";
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  let resp: Response;
  try {
    resp = await fetch(url, init);
  } catch (err) {
    throw new NetworkError(err);
  }
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = await resp.json();
      if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

export class StudyApi {
  constructor(private baseUrl: string = "") {}

  createSession(experimentId: string, demographics: Demographics): Promise<SessionInfo> {
    return request<SessionInfo>(`${this.baseUrl}/api/sessions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ experiment_id: experimentId, demographics }),
    });
  }

  nextTrial(sessionId: string): Promise<NextResponse> {
    return request<NextResponse>(
      `${this.baseUrl}/api/sessions/${encodeURIComponent(sessionId)}/next`,
    );
  }

  submitResponse(
    sessionId: string,
    trialIndex: number,
    choice: Choice,
    responseMs: number,
  ): Promise<SubmitAck> {
    return request<SubmitAck>(
      `${this.baseUrl}/api/sessions/${encodeURIComponent(sessionId)}/responses`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({
          trial_index: trialIndex,
          choice,
          response_ms: Math.max(0, Math.round(responseMs)),
        }),
      },
    );
  }
}
