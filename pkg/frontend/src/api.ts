/** Typed client for the orchestrator HTTP API. Event streaming parses SSE
 * frames from a fetch body, so it works in both browsers and node. */

import { DecisionRequest, RunEvent, RunState } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function asJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    const body = await response.text();
    throw new ApiError(response.status, `${response.status}: ${body}`);
  }
  return (await response.json()) as T;
}

export class OrchestratorClient {
  constructor(private baseUrl: string) {}

  async getRun(runId: string): Promise<RunState> {
    return asJson<RunState>(await fetch(`${this.baseUrl}/runs/${runId}`));
  }

  async startRun(queryId: string, tMax = 10, nRounds = 5): Promise<string> {
    const response = await fetch(`${this.baseUrl}/runs`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ query_id: queryId, t_max: tMax, n_rounds: nRounds }),
    });
    const body = await asJson<{ run_id: string }>(response);
    return body.run_id;
  }

  async postDecision(runId: string, decision: DecisionRequest): Promise<RunState> {
    const response = await fetch(`${this.baseUrl}/runs/${runId}/decision`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(decision),
    });
    return asJson<RunState>(response);
  }

  async getFile(runId: string, iteration: number, name: string): Promise<string> {
    const response = await fetch(
      `${this.baseUrl}/runs/${runId}/iterations/${iteration}/files/${name}`,
    );
    if (!response.ok) throw new ApiError(response.status, `no such file: ${name}`);
    return response.text();
  }

  /** Fetch one batch of events starting at fromSeq (SSE frames, non-follow). */
  async fetchEvents(runId: string, fromSeq: number): Promise<RunEvent[]> {
    const response = await fetch(
      `${this.baseUrl}/runs/${runId}/events?from_seq=${fromSeq}`,
    );
    if (!response.ok) throw new ApiError(response.status, "event fetch failed");
    return parseSseEvents(await response.text());
  }
}

export function parseSseEvents(text: string): RunEvent[] {
  const events: RunEvent[] = [];
  for (const line of text.split("\n")) {
    if (line.startsWith("data: ")) {
      events.push(JSON.parse(line.slice(6)) as RunEvent);
    }
  }
  return events;
}
