/** Browser entry point: a single run view with plan review, module board,
 * live iteration timeline, and decision buttons. State lives in the
 * orchestrator; this page only renders GET /runs/{id} plus the event stream
 * and posts decisions. Polling keeps the transport dumb; dedupe-by-seq in
 * the reducer makes redelivery harmless. */

import { ApiError, OrchestratorClient } from "./api.js";
import { exhaustedModel } from "./exhausted.js";
import { buildDecision, planReviewModel } from "./planReview.js";
import {
  TimelineState,
  applyEvents,
  emptyTimeline,
  iterationCards,
  sparklinePoints,
} from "./timeline.js";
import { RunState, TERMINAL_PHASES } from "./types.js";

const POLL_MS = 1000;

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node;
}

function esc(text: string): string {
  const div = document.createElement("div");
  div.textContent = text;
  return div.innerHTML;
}

class RunView {
  private timeline: TimelineState = emptyTimeline();
  private timer: number | null = null;

  constructor(private client: OrchestratorClient, private runId: string) {}

  async refresh(): Promise<void> {
    const state = await this.client.getRun(this.runId);
    const events = await this.client.fetchEvents(this.runId, this.timeline.lastSeq + 1);
    applyEvents(this.timeline, events);
    this.render(state);
    if (TERMINAL_PHASES.has(state.phase) && this.timer !== null) {
      window.clearInterval(this.timer);
      this.timer = null;
    }
  }

  start(): void {
    this.timer = window.setInterval(() => void this.refresh(), POLL_MS);
    void this.refresh();
  }

  private render(state: RunState & { plan_text?: string }): void {
    el("phase").textContent = `${state.query_id} - ${state.phase}`;
    const review = planReviewModel(state);
    el("banner").textContent = review.banner;
    el("plan").innerHTML = esc(state.plan_text ?? "");
    el("verdicts").innerHTML = review.verdicts
      .map((v) => `<li>v${v.version}: ${esc(v.status)} (cycle ${v.cycles})</li>`)
      .join("");
    (el("approve") as HTMLButtonElement).disabled = !review.actionsEnabled;
    (el("revise") as HTMLButtonElement).disabled = !review.actionsEnabled;
    (el("abandon") as HTMLButtonElement).disabled = !review.actionsEnabled;

    el("modules").innerHTML = Object.entries(state.modules)
      .map(([kind, status]) => `<li>${esc(kind)}: ${esc(status)}</li>`)
      .join("");

    el("timeline").innerHTML = iterationCards(this.timeline)
      .map(
        (card) =>
          `<li class="${card.status.toLowerCase()}">i=${card.iteration} ` +
          `${card.status} ${card.layer} ${esc(card.reason)}` +
          (card.patchFiles.length ? ` [patched: ${esc(card.patchFiles.join(", "))}]` : "") +
          `</li>`,
      )
      .join("");

    const points = sparklinePoints(this.timeline);
    el("spark").innerHTML = points
      ? `<svg width="120" height="28"><polyline fill="none" stroke="currentColor" points="${points}"/></svg>`
      : "";

    const exhausted = exhaustedModel(state);
    el("exhausted").style.display = exhausted.visible ? "block" : "none";
    if (exhausted.visible) {
      el("exhausted-reason").textContent =
        `${exhausted.failedIterations} failing iterations; last: ${exhausted.lastReason}`;
    }
  }

  async decide(action: "approve" | "revise" | "abandon"): Promise<void> {
    const feedback = (el("feedback") as HTMLTextAreaElement).value;
    const decision = buildDecision(action, feedback);
    if ("error" in decision) {
      el("banner").textContent = decision.error;
      return;
    }
    try {
      await this.client.postDecision(this.runId, decision);
    } catch (err) {
      el("banner").textContent = err instanceof ApiError ? err.message : String(err);
      return;
    }
    await this.refresh();
  }

  async replan(): Promise<void> {
    const state = await this.client.getRun(this.runId);
    const model = exhaustedModel(state);
    if (model.replanRequest) {
      const newRun = await this.client.startRun(model.replanRequest.body.query_id);
      window.location.hash = `#/runs/${newRun}`;
      window.location.reload();
    }
  }
}

export function boot(): void {
  const match = window.location.hash.match(/#\/runs\/(.+)$/);
  if (!match) {
    el("banner").textContent = "open a run as #/runs/<run_id>";
    return;
  }
  const view = new RunView(new OrchestratorClient(""), match[1]);
  el("approve").addEventListener("click", () => void view.decide("approve"));
  el("revise").addEventListener("click", () => void view.decide("revise"));
  el("abandon").addEventListener("click", () => void view.decide("abandon"));
  el("replan").addEventListener("click", () => void view.replan());
  view.start();
}

if (typeof window !== "undefined" && typeof document !== "undefined") {
  window.addEventListener("DOMContentLoaded", boot);
}
