import { NetworkError, StudyApi } from "./api.js";
import type { Choice, Demographics, SessionInfo, TrialPayload } from "./types.js";

export type ControllerState =
  | "idle"
  | "creating"
  | "loading"
  | "trial"
  | "submitting"
  | "done"
  | "error";

/**
 * Headless session state machine.
 *
 * Guarantees the protocol invariants independently of any DOM:
 *  - exactly one request in flight; the next trial is never fetched
 *    before the previous submission was acknowledged;
 *  - a trial can only be submitted after a choice is selected AND every
 *    audio stimulus was played to the end at least once;
 *  - network failures park the machine in "error" with the interrupted
 *    operation retryable (submissions are idempotent server-side);
 *  - nothing the server never sent (truth, trial kind) exists here, so no
 *    correctness feedback can leak into a view.
 */
export class SessionController {
  state: ControllerState = "idle";
  session: SessionInfo | null = null;
  trial: TrialPayload | null = null;
  selected: Choice | null = null;
  completionCode: string | null = null;
  lastError: string | null = null;

  private played = new Set<string>();
  private trialShownAt = 0;
  private pendingOp: (() => Promise<void>) | null = null;
  private listener: (() => void) | null;

  constructor(private api: StudyApi, onChange?: () => void) {
    this.listener = onChange ?? null;
  }

  private emit(): void {
    if (this.listener) this.listener();
  }

  private fail(op: () => Promise<void>, err: unknown): void {
    if (err instanceof NetworkError) {
      this.pendingOp = op;
      this.lastError = "Could not reach the study server.";
    } else {
      this.pendingOp = null;
      this.lastError = err instanceof Error ? err.message : String(err);
    }
    this.state = "error";
    this.emit();
  }

  /** Audio slots that must finish playing before the trial can advance. */
  requiredAudioSlots(): string[] {
    if (!this.trial) return [];
    const slots: string[] = [];
    if (this.trial.probe.kind === "audio") slots.push("probe");
    if (this.trial.choices.A.kind === "audio") slots.push("A", "B");
    return slots;
  }

  audioComplete(): boolean {
    return this.requiredAudioSlots().every((s) => this.played.has(s));
  }

  canAdvance(): boolean {
    return this.state === "trial" && this.selected !== null && this.audioComplete();
  }

  markPlayed(slot: string): void {
    if (this.state !== "trial") return;
    this.played.add(slot);
    this.emit();
  }

  select(choice: Choice): void {
    if (this.state !== "trial") return;
    this.selected = choice;
    this.emit();
  }

  async begin(experimentId: string, demographics: Demographics): Promise<void> {
    if (this.state !== "idle" && this.state !== "error") {
      throw new Error(`cannot begin from state ${this.state}`);
    }
    const op = async () => {
      this.state = "creating";
      this.emit();
      if (!this.session) {
        // a retry after a failed first fetch must not create a second session
        this.session = await this.api.createSession(experimentId, demographics);
      }
      await this.fetchNext();
    };
    try {
      await op();
    } catch (err) {
      this.fail(op, err);
    }
  }

  private async fetchNext(): Promise<void> {
    if (!this.session) throw new Error("no session");
    this.state = "loading";
    this.emit();
    const next = await this.api.nextTrial(this.session.session_id);
    if (next.done) {
      this.state = "done";
      this.completionCode = next.completion_code;
      this.trial = null;
    } else {
      this.trial = next.trial;
      this.selected = null;
      this.played = new Set();
      this.trialShownAt = Date.now();
      this.state = "trial";
    }
    this.emit();
  }

  async submit(): Promise<void> {
    if (!this.canAdvance() || !this.trial || !this.session) return;
    const trialIndex = this.trial.index;
    const choice = this.selected as Choice;
    const responseMs = Date.now() - this.trialShownAt;
    const op = async () => {
      this.state = "submitting";
      this.emit();
      await this.api.submitResponse(
        this.session!.session_id,
        trialIndex,
        choice,
        responseMs,
      );
      await this.fetchNext();
    };
    try {
      await op();
    } catch (err) {
      this.fail(op, err);
    }
  }

  /** Re-run the operation interrupted by a network failure. */
  async retry(): Promise<void> {
    if (this.state !== "error" || !this.pendingOp) return;
    const op = this.pendingOp;
    this.pendingOp = null;
    this.lastError = null;
    try {
      await op();
    } catch (err) {
      this.fail(op, err);
    }
  }
}
