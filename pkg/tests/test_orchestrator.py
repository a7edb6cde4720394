"""Orchestrator: lifecycle, event sourcing, resume, streaming, HTTP API."""

import json
import threading
import time

import pytest
from fastapi.testclient import TestClient

from fedforge.api import create_app
from fedforge.errors import EventLogCorruptError, NotReadyError, UnknownQueryError
from fedforge.evaluation import Outcome
from fedforge.orchestrator import (
    PendingDecisions,
    RunPhase,
    RunStore,
    build_scripted_controller,
    replay,
    stream_events,
)
from fedforge.util import new_ulid
from support import (
    DEMO_TRANSCRIPTS,
    copy_transcripts,
    crash_at_round,
    file_block,
    toy_sources,
)


def scripted_controller(home, transcripts=DEMO_TRANSCRIPTS):
    return build_scripted_controller(home, transcripts)


def start_and_finish(home, transcripts=DEMO_TRANSCRIPTS, **kwargs):
    controller = scripted_controller(home, transcripts)
    run_id = controller.start_run("Q5", scripted_dir=str(transcripts), **kwargs)
    return controller, run_id, controller.run_to_completion(run_id)


class TestStartRun:
    def test_first_events(self, home):
        controller = scripted_controller(home)
        run_id = controller.start_run("Q5")
        kinds = [e.kind for e in controller.store.read_events(run_id)]
        assert kinds == ["run.created", "plan.drafting"]

    def test_unknown_query(self, home):
        with pytest.raises(UnknownQueryError):
            scripted_controller(home).start_run("Q99")

    def test_config_snapshot_records_overrides(self, home):
        controller = scripted_controller(home)
        run_id = controller.start_run("Q16", t_max=10)
        config = controller.run_config(run_id)
        assert config["t_max"] == 10
        assert config["query_id"] == "Q16"
        assert config["experiment"]["communication_rounds"] == 100
        assert config["experiment"]["local_epochs"] == 5

    def test_two_runs_never_share_a_directory(self, home):
        controller = scripted_controller(home)
        a = controller.start_run("Q5")
        b = controller.start_run("Q5")
        assert controller.store.run_dir(a) != controller.store.run_dir(b)

    def test_ulids_unique_and_sortable(self):
        ids = [new_ulid() for _ in range(500)]
        assert len(set(ids)) == 500
        assert all(len(i) == 26 for i in ids)


class TestFullScriptedRun:
    def test_reaches_certified(self, home):
        _, _, state = start_and_finish(home)
        assert state.phase is RunPhase.CERTIFIED
        assert state.outcome == Outcome.CERTIFIED.value

    def test_no_phase_skipping(self, home):
        controller, run_id, _ = start_and_finish(home)
        kinds = [e.kind for e in controller.store.read_events(run_id)]
        assert kinds.index("plan.approved") < kinds.index("module.stable", 0)
        first_stable = kinds.index("module.stable")
        assert first_stable < kinds.index("sim.finished")
        assert kinds.index("sim.finished") < kinds.index("run.certified")

    def test_replay_reconstructs_final_state(self, home):
        controller, run_id, state = start_and_finish(home)
        replayed = replay(run_id, controller.store.read_events(run_id))
        assert replayed.to_json() == state.to_json()

    def test_seq_gapless(self, home):
        controller, run_id, _ = start_and_finish(home)
        events = controller.store.read_events(run_id)
        assert [e.seq for e in events] == list(range(1, len(events) + 1))

    def test_artifacts_on_disk(self, home):
        controller, run_id, _ = start_and_finish(home)
        run_dir = controller.store.run_dir(run_id)
        assert (run_dir / "plan.v1.md").exists()
        assert (run_dir / "plan.v1.meta").exists()
        assert (run_dir / "blueprint.md").exists()
        code_dir = run_dir / "iterations" / "0" / "code"
        assert sorted(p.name for p in code_dir.glob("*.py")) == sorted(toy_sources())
        assert (run_dir / "iterations" / "0" / "diagnosis.json").exists()
        assert (run_dir / "iterations" / "0" / "events.jsonl").exists()

    def test_generated_files_match_transcripts(self, home):
        controller, run_id, _ = start_and_finish(home)
        cb = controller.store.load_codebase(run_id, 0)
        assert cb.files == toy_sources()
        assert cb.provenance["task.py"][0] == "coder_task"


class TestAdvanceGuards:
    def test_advance_before_approval_not_ready(self, home):
        controller = scripted_controller(home)
        run_id = controller.start_run("Q5")
        with pytest.raises(NotReadyError):
            controller.advance(run_id)

    def test_terminal_run_not_advanceable(self, home):
        controller, run_id, _ = start_and_finish(home)
        with pytest.raises(NotReadyError):
            controller.advance(run_id)


class TestHumanGate:
    def test_pending_decisions_park_the_run(self, home):
        controller = scripted_controller(home)
        controller.decisions = PendingDecisions()
        run_id = controller.start_run("Q5")
        state = controller.run_to_completion(run_id)
        assert state.phase is RunPhase.PLANNING
        assert state.awaiting_user

    def test_apply_decision_approve_then_continue(self, home):
        controller = scripted_controller(home)
        controller.decisions = PendingDecisions()
        run_id = controller.start_run("Q5")
        controller.run_to_completion(run_id)
        state = controller.apply_decision(run_id, "approve", "looks right")
        assert state.phase is RunPhase.CODING
        final = controller.run_to_completion(run_id)
        assert final.phase is RunPhase.CERTIFIED

    def test_decision_when_not_awaiting_is_not_ready(self, home):
        controller = scripted_controller(home)
        run_id = controller.start_run("Q5")
        with pytest.raises(NotReadyError):
            controller.apply_decision(run_id, "approve")

    def test_abandon_at_gate(self, home, tmp_path):
        transcripts = copy_transcripts(tmp_path / "t", extra={"user": ["abandon"]})
        # overwrite the shipped approve decision
        (transcripts / "user" / "000.txt").write_text("abandon")
        controller = scripted_controller(home, transcripts)
        run_id = controller.start_run("Q5")
        state = controller.run_to_completion(run_id)
        assert state.phase is RunPhase.ABANDONED

    def test_revise_then_approve(self, home, tmp_path):
        plan2 = (DEMO_TRANSCRIPTS / "planner" / "001.txt").read_text(encoding="utf-8")
        transcripts = copy_transcripts(
            tmp_path / "t",
            extra={
                "planner": [
                    (DEMO_TRANSCRIPTS / "planner" / "000.txt").read_text(encoding="utf-8"),
                    plan2,
                    plan2.replace("Local Training Epochs: 5", "Local Training Epochs: 3"),
                ],
                "reflector": ["COMPLETE: ok", "COMPLETE: still ok"],
            },
        )
        (transcripts / "user" / "000.txt").write_text("revise: use 3 local epochs")
        (transcripts / "user" / "001.txt").write_text("approve")
        controller = scripted_controller(home, transcripts)
        run_id = controller.start_run("Q5")
        state = controller.run_to_completion(run_id)
        assert state.phase is RunPhase.CERTIFIED
        run_dir = controller.store.run_dir(run_id)
        assert (run_dir / "plan.v2.md").exists()
        assert "Local Training Epochs: 3" in (run_dir / "plan.v2.md").read_text()
        decisions = [e.payload for e in controller.store.read_events(run_id)
                     if e.kind == "decision"]
        assert decisions[0]["action"] == "revise"
        assert decisions[0]["feedback"] == "use 3 local epochs"


class TestEventLogIntegrity:
    def test_corrupted_log_names_first_bad_seq(self, home):
        controller, run_id, _ = start_and_finish(home)
        path = controller.store.run_dir(run_id) / "events.jsonl"
        lines = path.read_text().splitlines()
        del lines[4]  # create a gap at seq 5
        path.write_text("\n".join(lines) + "\n")
        store = RunStore(home)
        with pytest.raises(EventLogCorruptError) as err:
            store.read_events(run_id)
        assert err.value.first_bad_seq == 5

    def test_garbage_line(self, home):
        controller, run_id, _ = start_and_finish(home)
        path = controller.store.run_dir(run_id) / "events.jsonl"
        lines = path.read_text().splitlines()
        lines[2] = "{not json"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(EventLogCorruptError) as err:
            RunStore(home).read_events(run_id)
        assert err.value.first_bad_seq == 3


def eval_crash_scenario(tmp_path, name, debugger_replies):
    """Transcripts whose coder emits a crashing runner; debugger replies vary."""
    good = toy_sources()
    broken0 = crash_at_round(good, 1)
    return copy_transcripts(
        tmp_path / name,
        coder_overrides={"orchestrator": broken0["run.py"]},
        debugger=debugger_replies,
    )


class TestResume:
    def test_resume_certified_run_is_noop(self, home):
        controller, run_id, _ = start_and_finish(home)
        before = controller.store.read_events(run_id)
        state = controller.resume(run_id)
        assert state.phase is RunPhase.CERTIFIED
        assert len(controller.store.read_events(run_id)) == len(before)

    def test_crash_during_evaluation_resumes_with_identical_prefix(self, home, tmp_path):
        good = toy_sources()
        broken1 = crash_at_round(good, 2)
        replies = [file_block("run.py", broken1["run.py"]),
                   file_block("run.py", good["run.py"])]
        transcripts = eval_crash_scenario(tmp_path, "full", replies)

        # Dry run to learn the seq of the second iteration's diagnosis event.
        dry_home = tmp_path / "dry"
        controller = scripted_controller(dry_home, transcripts)
        run_id = controller.start_run("Q5", scripted_dir=str(transcripts))
        state = controller.run_to_completion(run_id)
        assert state.phase is RunPhase.CERTIFIED
        assert sorted(state.iterations) == [0, 1, 2]
        dry_events = controller.store.read_events(run_id)
        crash_seq = next(e.seq for e in dry_events
                         if e.kind == "diagnosis" and e.payload["iteration"] == 1)

        # Crash run: same scenario, injected failure right after that event.
        transcripts2 = eval_crash_scenario(tmp_path, "crash", replies)
        controller2 = scripted_controller(home, transcripts2)
        controller2.store.fail_after_seq = crash_seq
        run_id2 = controller2.start_run("Q5", scripted_dir=str(transcripts2))
        with pytest.raises(KeyboardInterrupt):
            controller2.run_to_completion(run_id2)
        pre_crash = controller2.store.run_dir(run_id2).joinpath("events.jsonl").read_text()
        assert len(pre_crash.splitlines()) == crash_seq

        # Resume with only the remaining debugger reply scripted.
        continuation = copy_transcripts(tmp_path / "cont",
                                        debugger=[file_block("run.py", good["run.py"])])
        resumed = build_scripted_controller(home, continuation)
        state = resumed.resume(run_id2)
        assert state.phase is RunPhase.CERTIFIED
        assert sorted(state.iterations) == [0, 1, 2]
        post = resumed.store.run_dir(run_id2).joinpath("events.jsonl").read_text()
        assert post.startswith(pre_crash)  # identical history prefix
        replayed = replay(run_id2, resumed.store.read_events(run_id2))
        assert replayed.iterations[2]["status"] == "SUCCESS"

    def test_resume_missing_run(self, home):
        controller = scripted_controller(home)
        with pytest.raises(Exception, match="no such run"):
            controller.resume("01XXXXXXXXXXXXXXXXXXXXXXXX")


class TestExhaustedRun:
    def test_t_max_exhaustion_through_orchestrator(self, home, tmp_path):
        broken = crash_at_round(toy_sources(), 1)
        replies = [file_block("run.py", broken["run.py"])] * 3
        transcripts = eval_crash_scenario(tmp_path, "exhaust", replies)
        controller = scripted_controller(home, transcripts)
        run_id = controller.start_run("Q5", t_max=3, scripted_dir=str(transcripts))
        state = controller.run_to_completion(run_id)
        assert state.phase is RunPhase.EXHAUSTED
        assert state.outcome == Outcome.EXHAUSTED.value
        assert sorted(state.iterations) == [0, 1, 2, 3]


class TestStreaming:
    def test_backlog_then_dedupe_by_seq(self, home):
        controller, run_id, _ = start_and_finish(home)
        store = controller.store
        first = list(stream_events(store, run_id, from_seq=1))
        again = list(stream_events(store, run_id, from_seq=first[2].seq))
        merged = {e.seq: e for e in first + again}
        assert sorted(merged) == [e.seq for e in first]

    def test_live_follow(self, home):
        controller = scripted_controller(home)
        controller.decisions = PendingDecisions()
        run_id = controller.start_run("Q5")

        collected = []

        def consume():
            for event in stream_events(controller.store, run_id, follow=True,
                                       timeout_s=10.0):
                collected.append(event)

        thread = threading.Thread(target=consume, daemon=True)
        thread.start()
        controller.run_to_completion(run_id)   # parks awaiting user
        controller.apply_decision(run_id, "approve")
        controller.run_to_completion(run_id)
        thread.join(timeout=10)
        assert not thread.is_alive()
        kinds = [e.kind for e in collected]
        assert kinds[-1] == "run.phase"
        assert collected[-1].payload["phase"] == "Certified"
        assert [e.seq for e in collected] == list(range(1, len(collected) + 1))


@pytest.fixture
def api_client(home):
    controller = scripted_controller(home)
    app = create_app(controller)
    with TestClient(app) as client:
        yield client, controller


def wait_for(predicate, timeout=15.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        value = predicate()
        if value:
            return value
        time.sleep(0.02)
    raise AssertionError("condition not reached in time")


from support import REPO_ROOT  # noqa: E402

SCHEMA = json.loads(
    (REPO_ROOT / "schema" / "run_api.schema.json").read_text(encoding="utf-8")
)


def check_schema(obj: dict, definition: str) -> None:
    spec = SCHEMA["definitions"][definition]
    for key in spec["required"]:
        assert key in obj, f"{definition} missing {key}"
    types = {"string": str, "integer": int, "boolean": bool, "array": list, "object": dict}
    for key, prop in spec.get("properties", {}).items():
        if key in obj and "type" in prop:
            assert isinstance(obj[key], types[prop["type"]]), (definition, key)
        if key in obj and "enum" in prop:
            assert obj[key] in prop["enum"], (definition, key, obj[key])


class TestApi:
    def test_run_lifecycle_over_http(self, api_client):
        client, controller = api_client
        response = client.post("/runs", json={"query_id": "Q5"})
        assert response.status_code == 200
        run_id = response.json()["run_id"]
        state = wait_for(lambda: (lambda s: s if s["phase"] == "Certified" else None)(
            client.get(f"/runs/{run_id}").json()))
        check_schema(state, "run_state")
        for card in state["iterations"]:
            check_schema(card, "iteration_card")

    def test_unknown_query_404(self, api_client):
        client, _ = api_client
        assert client.post("/runs", json={"query_id": "Q99"}).status_code == 404

    def test_events_endpoint_sse(self, api_client):
        client, controller = api_client
        run_id = client.post("/runs", json={"query_id": "Q5"}).json()["run_id"]
        wait_for(lambda: client.get(f"/runs/{run_id}").json()["phase"] == "Certified")
        response = client.get(f"/runs/{run_id}/events?from_seq=1")
        assert response.headers["content-type"].startswith("text/event-stream")
        payloads = [json.loads(line[6:]) for line in response.text.splitlines()
                    if line.startswith("data: ")]
        assert payloads[0]["kind"] == "run.created"
        for event in payloads:
            check_schema(event, "event")

    def test_decision_endpoint_round_trip(self, home):
        controller = scripted_controller(home)
        controller.decisions = PendingDecisions()
        with TestClient(create_app(controller)) as client:
            run_id = client.post("/runs", json={"query_id": "Q5"}).json()["run_id"]
            wait_for(lambda: client.get(f"/runs/{run_id}").json()["awaiting_user"])
            response = client.post(f"/runs/{run_id}/decision",
                                   json={"action": "approve", "feedback": "ok"})
            assert response.status_code == 200
            assert response.json()["phase"] == "Coding"
            wait_for(lambda: client.get(f"/runs/{run_id}").json()["phase"] == "Certified")

    def test_premature_decision_409(self, home):
        controller = scripted_controller(home)
        controller.decisions = PendingDecisions()
        with TestClient(create_app(controller)) as client:
            run_id = controller.start_run("Q5")  # still planning, not parked
            response = client.post(f"/runs/{run_id}/decision", json={"action": "approve"})
            assert response.status_code == 409

    def test_iteration_file_endpoint(self, api_client):
        client, _ = api_client
        run_id = client.post("/runs", json={"query_id": "Q5"}).json()["run_id"]
        wait_for(lambda: client.get(f"/runs/{run_id}").json()["phase"] == "Certified")
        response = client.get(f"/runs/{run_id}/iterations/0/files/task.py")
        assert response.status_code == 200
        assert response.text == toy_sources()["task.py"]
        assert client.get(f"/runs/{run_id}/iterations/0/files/nope.py").status_code == 404
