/** JSON shapes served by the orchestrator API (see ../schema/run_api.schema.json). */

export type RunPhase =
  | "Planning"
  | "Coding"
  | "Evaluating"
  | "Certified"
  | "Exhausted"
  | "Abandoned";

export interface IterationCard {
  iteration: number;
  status: "SUCCESS" | "FAIL";
  layer: "L1" | "L2" | "none";
  reason: string;
}

export interface RunState {
  run_id: string;
  query_id: string;
  phase: RunPhase;
  plan_version: number;
  verdicts: Array<{ version: number; status: string; cycles: number }>;
  awaiting_user: boolean;
  clarification: boolean;
  approved_version: number;
  modules: Record<string, string>;
  iterations: IterationCard[];
  outcome: "Running" | "Certified" | "Exhausted";
  last_seq: number;
}

export interface RunEvent {
  seq: number;
  ts: string;
  kind: string;
  payload: Record<string, unknown>;
}

export type DecisionAction = "approve" | "revise" | "abandon";

export interface DecisionRequest {
  action: DecisionAction;
  feedback: string;
}

export const TERMINAL_PHASES: ReadonlySet<RunPhase> = new Set([
  "Certified",
  "Exhausted",
  "Abandoned",
]);
