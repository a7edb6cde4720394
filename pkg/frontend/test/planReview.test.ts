import assert from "node:assert/strict";
import { test } from "node:test";

import { buildDecision, planReviewModel } from "../src/planReview.js";
import { RunState } from "../src/types.js";

function state(overrides: Partial<RunState> = {}): RunState {
  return {
    run_id: "r1",
    query_id: "Q5",
    phase: "Planning",
    plan_version: 1,
    verdicts: [{ version: 1, status: "COMPLETE", cycles: 0 }],
    awaiting_user: true,
    clarification: false,
    approved_version: 0,
    modules: {},
    iterations: [],
    outcome: "Running",
    last_seq: 5,
    ...overrides,
  };
}

test("actions enabled while awaiting user", () => {
  const model = planReviewModel(state());
  assert.equal(model.actionsEnabled, true);
  assert.equal(model.banner, "plan awaiting review");
});

test("actions disabled once coding, banner names approved version", () => {
  const model = planReviewModel(state({
    phase: "Coding",
    awaiting_user: false,
    approved_version: 2,
    plan_version: 2,
  }));
  assert.equal(model.actionsEnabled, false);
  assert.equal(model.banner, "plan approved v2");
});

test("clarification request is labeled", () => {
  const model = planReviewModel(state({ clarification: true }));
  assert.equal(model.banner, "planner asked a clarification question");
});

test("empty revise feedback is a client-side validation error", () => {
  const result = buildDecision("revise", "   ");
  assert.deepEqual(result, { error: "revision feedback must not be empty" });
});

test("approve needs no feedback", () => {
  assert.deepEqual(buildDecision("approve", ""), { action: "approve", feedback: "" });
});

test("revise trims feedback", () => {
  assert.deepEqual(buildDecision("revise", "  add privacy  "),
    { action: "revise", feedback: "add privacy" });
});
