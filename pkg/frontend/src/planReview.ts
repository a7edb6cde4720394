/** View-model for the plan review screen: which actions are live, what the
 * banner says, and client-side validation of revise feedback. State is never
 * mutated locally - every action maps to POST /runs/{id}/decision. */

import { DecisionRequest, RunState, TERMINAL_PHASES } from "./types.js";

export interface PlanReviewModel {
  planVersion: number;
  actionsEnabled: boolean;
  banner: string;
  verdicts: Array<{ version: number; status: string; cycles: number }>;
}

export function planReviewModel(state: RunState): PlanReviewModel {
  const actionsEnabled = state.phase === "Planning" && state.awaiting_user;
  let banner = "";
  if (actionsEnabled) {
    banner = state.clarification
      ? "planner asked a clarification question"
      : "plan awaiting review";
  } else if (state.approved_version > 0) {
    banner = `plan approved v${state.approved_version}`;
  } else if (TERMINAL_PHASES.has(state.phase)) {
    banner = `run ${state.phase.toLowerCase()}`;
  } else {
    banner = `run is ${state.phase.toLowerCase()}`;
  }
  return {
    planVersion: state.plan_version,
    actionsEnabled,
    banner,
    verdicts: state.verdicts,
  };
}

/** Build the decision request; returns an error string instead when the
 * input is invalid (empty revise feedback). */
export function buildDecision(
  action: "approve" | "revise" | "abandon",
  feedback: string,
): DecisionRequest | { error: string } {
  if (action === "revise" && feedback.trim() === "") {
    return { error: "revision feedback must not be empty" };
  }
  return { action, feedback: feedback.trim() };
}
