export type Choice = "A" | "B";
export type StimulusKind = "audio" | "image";

export interface Demographics {
  gender: "m" | "f";
  ethnicity: number;
  fluency: "Y" | "N";
  age_group: string;
  contributed_stimuli: boolean;
}

export interface Stimulus {
  kind: StimulusKind;
  url: string;
}

export interface TrialPayload {
  index: number;
  total: number;
  direction: "V2F" | "F2V";
  probe: Stimulus;
  choices: { A: Stimulus; B: Stimulus };
}

export interface SessionInfo {
  session_id: string;
  experiment_id: string;
  n_trials: number;
}

export type NextResponse =
  | { done: false; trial: TrialPayload }
  | { done: true; completion_code: string };

export interface SubmitAck {
  accepted: boolean;
  next_index: number;
  completed: boolean;
}
