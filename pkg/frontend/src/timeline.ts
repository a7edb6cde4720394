/** Event-stream reducer for the live run view.
 *
 * Delivery is at-least-once: reconnects replay from the last stored seq, so
 * ingestion dedupes by seq and rendering stays idempotent. Iteration cards
 * fold diagnosis + patch events; the sparkline series folds per-round loss
 * from simulation summaries.
 */

import { IterationCard, RunEvent } from "./types.js";

export interface TimelineIterationCard extends IterationCard {
  patchFiles: string[];
  returnCode: number | null;
}

export interface TimelineState {
  lastSeq: number;
  seenSeqs: Set<number>;
  phase: string;
  planVersion: number;
  awaitingUser: boolean;
  iterations: Map<number, TimelineIterationCard>;
  lossSeries: Array<{ iteration: number; losses: number[] }>;
  duplicatesDropped: number;
}

export function emptyTimeline(): TimelineState {
  return {
    lastSeq: 0,
    seenSeqs: new Set(),
    phase: "Planning",
    planVersion: 0,
    awaitingUser: false,
    iterations: new Map(),
    lossSeries: [],
    duplicatesDropped: 0,
  };
}

function card(state: TimelineState, iteration: number): TimelineIterationCard {
  let existing = state.iterations.get(iteration);
  if (!existing) {
    existing = {
      iteration,
      status: "FAIL",
      layer: "none",
      reason: "",
      patchFiles: [],
      returnCode: null,
    };
    state.iterations.set(iteration, existing);
  }
  return existing;
}

/** Fold one event into the timeline; duplicate seqs are dropped. */
export function applyEvent(state: TimelineState, event: RunEvent): TimelineState {
  if (state.seenSeqs.has(event.seq)) {
    state.duplicatesDropped += 1;
    return state;
  }
  state.seenSeqs.add(event.seq);
  state.lastSeq = Math.max(state.lastSeq, event.seq);
  const payload = event.payload as Record<string, any>;
  switch (event.kind) {
    case "plan.drafted":
      state.planVersion = payload.version;
      state.awaitingUser = false;
      break;
    case "plan.awaiting_user":
    case "plan.clarification":
      state.awaitingUser = true;
      break;
    case "decision":
      state.awaitingUser = false;
      break;
    case "sim.finished": {
      const c = card(state, payload.iteration);
      c.returnCode = payload.return_code;
      state.lossSeries.push({
        iteration: payload.iteration,
        losses: (payload.losses ?? []) as number[],
      });
      break;
    }
    case "diagnosis": {
      const c = card(state, payload.iteration);
      c.status = payload.status;
      c.layer = payload.layer;
      c.reason = payload.reason;
      break;
    }
    case "patch.applied": {
      const c = card(state, payload.iteration);
      c.patchFiles = payload.files ?? [];
      break;
    }
    case "run.phase":
      state.phase = payload.phase;
      break;
  }
  return state;
}

export function applyEvents(state: TimelineState, events: RunEvent[]): TimelineState {
  for (const event of events) applyEvent(state, event);
  return state;
}

export function iterationCards(state: TimelineState): TimelineIterationCard[] {
  return [...state.iterations.values()].sort((a, b) => a.iteration - b.iteration);
}

/** Points for an inline SVG sparkline of the latest iteration's loss curve. */
export function sparklinePoints(state: TimelineState, width = 120, height = 28): string {
  const latest = state.lossSeries[state.lossSeries.length - 1];
  if (!latest || latest.losses.length < 2) return "";
  const lo = Math.min(...latest.losses);
  const hi = Math.max(...latest.losses);
  const span = hi - lo || 1;
  const step = width / (latest.losses.length - 1);
  return latest.losses
    .map((loss, i) => {
      const x = (i * step).toFixed(1);
      const y = (height - ((loss - lo) / span) * height).toFixed(1);
      return `${x},${y}`;
    })
    .join(" ");
}
