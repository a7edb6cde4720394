/** View-model for runs that spent their correction budget.
 *
 * Exhausted is terminal on the orchestrator side, so "replan" starts a fresh
 * run for the same query (POST /runs) with the old plan shown as reference
 * context, and "abandon" records a closing decision event on the exhausted
 * run (POST /runs/{id}/decision).
 */

import { RunState } from "./types.js";

export interface ExhaustedModel {
  visible: boolean;
  failedIterations: number;
  lastReason: string;
  replanRequest: { path: string; body: { query_id: string } } | null;
  abandonRequest: { path: string; body: { action: "abandon"; feedback: string } } | null;
}

export function exhaustedModel(state: RunState): ExhaustedModel {
  if (state.phase !== "Exhausted") {
    return {
      visible: false,
      failedIterations: 0,
      lastReason: "",
      replanRequest: null,
      abandonRequest: null,
    };
  }
  const last = state.iterations[state.iterations.length - 1];
  return {
    visible: true,
    failedIterations: state.iterations.filter((i) => i.status === "FAIL").length,
    lastReason: last ? `${last.layer}: ${last.reason}` : "",
    replanRequest: { path: "/runs", body: { query_id: state.query_id } },
    abandonRequest: {
      path: `/runs/${state.run_id}/decision`,
      body: { action: "abandon", feedback: "exhausted: operator closed the run" },
    },
  };
}
