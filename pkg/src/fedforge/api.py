"""HTTP surface for the console: run CRUD, decisions, and a live event stream.

The API is a thin read/command layer over the event-sourced store; the JSON
shapes it serves are the contract the console builds against (see
schema/run_api.schema.json at the repository root).
"""

from __future__ import annotations

import threading

from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse, StreamingResponse
from pydantic import BaseModel, Field

from .errors import FedforgeError, NotReadyError, UnknownQueryError
from .orchestrator import RunController, stream_events
from .util import dump_json_line


class StartRunBody(BaseModel):
    query_id: str
    t_max: int = Field(default=10, ge=1)
    n_rounds: int = Field(default=5, ge=1)


class DecisionBody(BaseModel):
    action: str  # approve | revise | abandon
    feedback: str = ""


def create_app(controller: RunController) -> FastAPI:
    app = FastAPI(title="fedforge", version="0.1.0")
    app.state.controller = controller
    app.state.threads = {}

    def _spawn(run_id: str, target) -> None:
        thread = threading.Thread(target=target, name=f"run-{run_id}", daemon=True)
        app.state.threads[run_id] = thread
        thread.start()

    @app.post("/runs")
    def start_run(body: StartRunBody):
        try:
            run_id = controller.start_run(body.query_id, t_max=body.t_max,
                                          n_rounds=body.n_rounds)
        except UnknownQueryError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        _spawn(run_id, lambda: controller.run_to_completion(run_id))
        return {"run_id": run_id}

    @app.get("/runs")
    def list_runs():
        return {"runs": controller.store.list_runs()}

    @app.get("/runs/{run_id}")
    def get_run(run_id: str):
        if not controller.store.run_dir(run_id).exists():
            raise HTTPException(status_code=404, detail=f"no such run: {run_id}")
        state = controller.state(run_id).to_json()
        state["config"] = controller.run_config(run_id)
        plan_path = controller.store.run_dir(run_id) / f"plan.v{state['plan_version']}.md"
        state["plan_text"] = (
            plan_path.read_text(encoding="utf-8") if state["plan_version"] and
            plan_path.exists() else ""
        )
        return state

    @app.get("/runs/{run_id}/events")
    def get_events(run_id: str, from_seq: int = 1, follow: bool = False):
        if not controller.store.run_dir(run_id).exists():
            raise HTTPException(status_code=404, detail=f"no such run: {run_id}")

        def _sse():
            for event in stream_events(controller.store, run_id, from_seq=from_seq,
                                       follow=follow):
                yield f"id: {event.seq}\ndata: {dump_json_line(event.to_json())}\n\n"

        return StreamingResponse(_sse(), media_type="text/event-stream")

    @app.post("/runs/{run_id}/decision")
    def post_decision(run_id: str, body: DecisionBody):
        if body.action not in ("approve", "revise", "abandon"):
            raise HTTPException(status_code=422, detail=f"unknown action: {body.action}")
        try:
            state = controller.apply_decision(run_id, body.action, body.feedback)
        except NotReadyError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except FedforgeError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        if state.phase.value in ("Coding", "Evaluating") or body.action == "revise":
            _spawn(run_id, lambda: controller.run_to_completion(run_id))
        return state.to_json()

    @app.get("/runs/{run_id}/iterations/{iteration}/files/{name}")
    def get_file(run_id: str, iteration: int, name: str):
        path = controller.store.iteration_dir(run_id, iteration) / "code" / name
        if "/" in name or ".." in name or not path.exists():
            raise HTTPException(status_code=404, detail="no such file")
        return PlainTextResponse(path.read_text(encoding="utf-8"))

    return app
