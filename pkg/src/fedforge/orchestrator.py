"""Run lifecycle: event-sourced store, phase state machine, and the controller
that drives planning, coding, and evaluation end to end.

Persistence is plain files under <home>/runs/<run_id>/ - an append-only
events.jsonl is the authoritative state (replaying it reconstructs the run),
with plans, blueprints, and per-iteration artifacts stored alongside where a
text editor can reach them.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from . import codegen, evaluation, planning
from .bench import BenchmarkRegistry, load_shipped_registry
from .codegen import CodebaseVersion, CodegenEngine, ModuleKind, integrate
from .errors import (
    EventLogCorruptError,
    ModuleFailedError,
    NotReadyError,
    OrchestratorError,
    UnknownQueryError,
)
from .evaluation import (
    DEFAULT_N_ROUNDS,
    DEFAULT_T_MAX,
    DiagnosisReport,
    DiagnosisRuleset,
    Layer,
    Outcome,
    Status,
    apply_patchset,
    debug_patch,
    simulate,
)
from .gateway import Gateway, Message, ScriptedBackend
from .planning import PlanningEngine, PlanningSession, SessionState, submit_user_decision
from .retrieval import build_default_index, make_tools
from .util import FixedStepClock, SystemClock, append_jsonl, dump_json_line, iso_ts, new_ulid

HOME_ENV = "FEDFORGE_HOME"


class RunPhase(str, Enum):
    PLANNING = "Planning"
    CODING = "Coding"
    EVALUATING = "Evaluating"
    CERTIFIED = "Certified"
    EXHAUSTED = "Exhausted"
    ABANDONED = "Abandoned"


TERMINAL_PHASES = {RunPhase.CERTIFIED, RunPhase.EXHAUSTED, RunPhase.ABANDONED}


@dataclass(frozen=True)
class RunEvent:
    seq: int
    ts: str
    kind: str
    payload: dict

    def to_json(self) -> dict:
        return {"seq": self.seq, "ts": self.ts, "kind": self.kind, "payload": self.payload}


@dataclass
class RunConfig:
    query_id: str
    t_max: int = DEFAULT_T_MAX
    n_rounds: int = DEFAULT_N_ROUNDS
    max_reflection_cycles: int = planning.MAX_REFLECTION_CYCLES
    max_module_attempts: int = codegen.MAX_MODULE_ATTEMPTS
    wall_seconds: float = 60.0
    cpu_seconds: int = 30
    use_llm_evaluator: bool = False
    scripted_dir: str = ""

    def snapshot(self, experiment: dict, backend_kind: str, model: str) -> dict:
        return {
            "query_id": self.query_id,
            "t_max": self.t_max,
            "n_rounds": self.n_rounds,
            "max_reflection_cycles": self.max_reflection_cycles,
            "max_module_attempts": self.max_module_attempts,
            "wall_seconds": self.wall_seconds,
            "cpu_seconds": self.cpu_seconds,
            "use_llm_evaluator": self.use_llm_evaluator,
            "rules": {
                "min_metric_delta": DiagnosisRuleset().min_metric_delta,
                "min_results": DiagnosisRuleset().min_results,
                "min_completed_rounds": self.n_rounds,
            },
            "experiment": experiment,
            "backend": {"kind": backend_kind, "model_name": model},
            "scripted_dir": self.scripted_dir,
        }


class RunStore:
    """File-backed event log plus artifact directories, one per run."""

    def __init__(self, home: str | Path):
        self.home = Path(home)
        self.runs_root = self.home / "runs"
        self.runs_root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._seqs: dict[str, int] = {}
        self.fail_after_seq: int | None = None  # crash-injection hook for tests

    def run_dir(self, run_id: str) -> Path:
        return self.runs_root / run_id

    def list_runs(self) -> list[str]:
        return sorted(p.name for p in self.runs_root.iterdir() if p.is_dir())

    def create_run(self, run_id: str) -> Path:
        run_dir = self.run_dir(run_id)
        if run_dir.exists():
            raise OrchestratorError(f"run directory already exists: {run_dir}")
        run_dir.mkdir(parents=True)
        (run_dir / "iterations").mkdir()
        return run_dir

    def _lock(self, run_id: str) -> threading.Lock:
        return self._locks.setdefault(run_id, threading.Lock())

    def _events_path(self, run_id: str) -> Path:
        return self.run_dir(run_id) / "events.jsonl"

    def append_event(self, run_id: str, ts: str, kind: str, payload: dict) -> RunEvent:
        with self._lock(run_id):
            if run_id not in self._seqs:
                events = self.read_events(run_id)
                self._seqs[run_id] = events[-1].seq if events else 0
            seq = self._seqs[run_id] + 1
            if self.fail_after_seq is not None and seq > self.fail_after_seq:
                raise KeyboardInterrupt(f"injected crash before seq {seq}")
            event = RunEvent(seq=seq, ts=ts, kind=kind, payload=payload)
            append_jsonl(self._events_path(run_id), event.to_json())
            self._seqs[run_id] = seq
            return event

    def read_events(self, run_id: str, from_seq: int = 1) -> list[RunEvent]:
        path = self._events_path(run_id)
        if not path.exists():
            return []
        events: list[RunEvent] = []
        expected = 1
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                event = RunEvent(raw["seq"], raw["ts"], raw["kind"], raw["payload"])
            except (json.JSONDecodeError, KeyError) as exc:
                raise EventLogCorruptError(f"unreadable event line: {exc}", expected) from exc
            if event.seq != expected:
                raise EventLogCorruptError("sequence gap", expected)
            events.append(event)
            expected += 1
        return [e for e in events if e.seq >= from_seq]

    # -- artifacts -------------------------------------------------------

    def write_json(self, run_id: str, name: str, payload: dict) -> None:
        (self.run_dir(run_id) / name).write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    def read_json(self, run_id: str, name: str) -> dict:
        return json.loads((self.run_dir(run_id) / name).read_text(encoding="utf-8"))

    def write_plan(self, run_id: str, plan: planning.ResearchPlan) -> None:
        run_dir = self.run_dir(run_id)
        (run_dir / f"plan.v{plan.version}.md").write_text(plan.raw_text, encoding="utf-8")
        meta = {
            "version": plan.version,
            "summary": plan.summary,
            "challenges": plan.challenges,
            "tasks": plan.tasks,
            "technical_setup": plan.technical_setup,
        }
        (run_dir / f"plan.v{plan.version}.meta").write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    def write_planning_state(self, run_id: str, session: PlanningSession) -> None:
        state = {
            "state": session.state.value,
            "reflection_cycles": session.reflection_cycles,
            "version": session.plan.version if session.plan else 0,
            "verdicts": [[v.status.value, v.justification] for v in session.verdicts],
            "messages": [[m.role, m.content] for m in session.messages],
            "user_feedback": session.user_feedback,
            "clarification": session.clarification,
        }
        self.write_json(run_id, "planning_state.json", state)

    def write_blueprint(self, run_id: str, blueprint: codegen.Blueprint) -> None:
        run_dir = self.run_dir(run_id)
        (run_dir / "blueprint.md").write_text(blueprint.raw_text, encoding="utf-8")
        meta = {
            "modules": {
                kind.value: {
                    "implementation_plan": plan.implementation_plan,
                    "configuration": plan.configuration,
                }
                for kind, plan in blueprint.module_plans.items()
            },
            "interdependencies": blueprint.interdependencies,
        }
        (run_dir / "blueprint.meta").write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    def iteration_dir(self, run_id: str, iteration: int) -> Path:
        return self.run_dir(run_id) / "iterations" / str(iteration)

    def write_codebase(self, run_id: str, codebase: CodebaseVersion) -> Path:
        code_dir = self.iteration_dir(run_id, codebase.iteration) / "code"
        code_dir.mkdir(parents=True, exist_ok=True)
        for name, body in codebase.files.items():
            (code_dir / name).write_text(body, encoding="utf-8")
        prov = {name: list(entry) for name, entry in codebase.provenance.items()}
        (code_dir.parent / "provenance.json").write_text(
            json.dumps({"parent_iteration": codebase.parent_iteration, "files": prov},
                       indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        return code_dir

    def load_codebase(self, run_id: str, iteration: int) -> CodebaseVersion:
        it_dir = self.iteration_dir(run_id, iteration)
        code_dir = it_dir / "code"
        files = {
            p.name: p.read_text(encoding="utf-8")
            for p in sorted(code_dir.glob("*.py"))
        }
        meta = json.loads((it_dir / "provenance.json").read_text(encoding="utf-8"))
        provenance = {name: tuple(entry) for name, entry in meta["files"].items()}
        return CodebaseVersion(iteration=iteration, files=files, provenance=provenance,
                               parent_iteration=meta["parent_iteration"])

    def write_simulation(self, run_id: str, iteration: int, log: evaluation.SimulationLog) -> None:
        it_dir = self.iteration_dir(run_id, iteration)
        it_dir.mkdir(parents=True, exist_ok=True)
        (it_dir / "log.stdout").write_text(log.stdout, encoding="utf-8")
        (it_dir / "log.stderr").write_text(log.stderr, encoding="utf-8")
        with open(it_dir / "events.jsonl", "w", encoding="utf-8") as fh:
            for event in log.events:
                fh.write(dump_json_line({
                    "round": event.round, "phase": event.phase, "loss": event.loss,
                    "accuracy": event.accuracy, "num_results": event.num_results,
                }) + "\n")
        (it_dir / "sim.meta.json").write_text(
            json.dumps({"return_code": log.return_code, "wall_time_ms": log.wall_time_ms,
                        "run_handle": log.run_handle}, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    def write_diagnosis(self, run_id: str, iteration: int, report: DiagnosisReport) -> None:
        it_dir = self.iteration_dir(run_id, iteration)
        (it_dir / "diagnosis.json").write_text(
            json.dumps({"status": report.status.value, "layer": report.layer.value,
                        "reason": report.reason, "error_excerpt": report.error_excerpt},
                       indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    def load_diagnosis(self, run_id: str, iteration: int) -> DiagnosisReport | None:
        path = self.iteration_dir(run_id, iteration) / "diagnosis.json"
        if not path.exists():
            return None
        raw = json.loads(path.read_text(encoding="utf-8"))
        return DiagnosisReport(Status(raw["status"]), Layer(raw["layer"]),
                               raw["reason"], raw["error_excerpt"])


@dataclass
class RunState:
    """Pure fold over the event log; everything the console needs to render."""

    run_id: str
    query_id: str = ""
    phase: RunPhase = RunPhase.PLANNING
    plan_version: int = 0
    verdicts: list[dict] = field(default_factory=list)
    awaiting_user: bool = False
    clarification: bool = False
    approved_version: int = 0
    modules: dict[str, str] = field(default_factory=dict)
    iterations: dict[int, dict] = field(default_factory=dict)
    patched: set[int] = field(default_factory=set)
    simulated: set[int] = field(default_factory=set)
    outcome: str = Outcome.RUNNING.value
    last_seq: int = 0

    def to_json(self) -> dict:
        return {
            "run_id": self.run_id,
            "query_id": self.query_id,
            "phase": self.phase.value,
            "plan_version": self.plan_version,
            "verdicts": self.verdicts,
            "awaiting_user": self.awaiting_user,
            "clarification": self.clarification,
            "approved_version": self.approved_version,
            "modules": self.modules,
            "iterations": [self.iterations[i] for i in sorted(self.iterations)],
            "outcome": self.outcome,
            "last_seq": self.last_seq,
        }


def replay(run_id: str, events: list[RunEvent]) -> RunState:
    """Reconstruct run state from the event log alone (event-sourcing fold)."""
    state = RunState(run_id=run_id)
    for event in events:
        payload = event.payload
        kind = event.kind
        if kind == "run.created":
            state.query_id = payload["query_id"]
        elif kind == "plan.drafted":
            state.plan_version = payload["version"]
            state.awaiting_user = False
        elif kind == "plan.clarification":
            state.clarification = True
            state.awaiting_user = True
        elif kind == "plan.verdict":
            state.verdicts.append(payload)
        elif kind == "plan.awaiting_user":
            state.awaiting_user = True
        elif kind == "decision":
            state.awaiting_user = False
            state.clarification = False
        elif kind == "plan.approved":
            state.approved_version = payload["version"]
        elif kind == "module.started":
            state.modules[payload["kind"]] = "InProgress"
        elif kind == "module.stable":
            state.modules[payload["kind"]] = "Stable"
        elif kind == "module.failed":
            state.modules[payload["kind"]] = "Failed"
        elif kind == "sim.finished":
            state.simulated.add(payload["iteration"])
        elif kind == "diagnosis":
            state.iterations[payload["iteration"]] = payload
        elif kind == "patch.applied":
            state.patched.add(payload["iteration"])
        elif kind == "run.certified":
            state.outcome = Outcome.CERTIFIED.value
        elif kind == "run.exhausted":
            state.outcome = Outcome.EXHAUSTED.value
        elif kind == "run.phase":
            state.phase = RunPhase(payload["phase"])
        state.last_seq = event.seq
    return state


class ScriptedDecisions:
    """User decisions replayed from a transcript directory (user/NNN.txt).

    First line is the action; any remaining lines are free-text feedback.
    When the transcript runs dry in scripted mode, approval is implied so
    offline end-to-end runs do not stall (recorded as such in the event).
    """

    def __init__(self, decisions: list[tuple[str, str]], auto_approve: bool = True):
        self._decisions = list(decisions)
        self.auto_approve = auto_approve

    @classmethod
    def from_dir(cls, path: str | Path) -> "ScriptedDecisions":
        user_dir = Path(path) / "user"
        decisions = []
        if user_dir.is_dir():
            for f in sorted(user_dir.glob("*.txt")):
                lines = f.read_text(encoding="utf-8").strip().splitlines() or ["approve"]
                action = lines[0].split(":")[0].strip().lower()
                feedback = ":".join(lines[0].split(":")[1:]).strip()
                if len(lines) > 1:
                    feedback = (feedback + "\n" + "\n".join(lines[1:])).strip()
                decisions.append((action, feedback))
        return cls(decisions)

    def next_decision(self, state: RunState) -> tuple[str, str] | None:
        if self._decisions:
            return self._decisions.pop(0)
        if self.auto_approve:
            return ("approve", "scripted-auto-approval")
        return None


class PendingDecisions:
    """Interactive mode: no decision available until a human posts one."""

    def next_decision(self, state: RunState) -> tuple[str, str] | None:
        return None


class RunController:
    """Owns the write side of a run; one controller drives one run at a time."""

    def __init__(self, home: str | Path, backend, registry: BenchmarkRegistry | None = None,
                 tools=None, decisions=None, clock=None, deterministic: bool = False):
        self.store = RunStore(home)
        self.backend = backend
        self.registry = registry or load_shipped_registry()
        self.clock = clock or (FixedStepClock() if deterministic else SystemClock())
        self.decisions = decisions if decisions is not None else PendingDecisions()
        index = build_default_index()
        self.tools = tools if tools is not None else make_tools(index)
        self._gateways: dict[str, Gateway] = {}

    # -- plumbing -------------------------------------------------------

    def gateway(self, run_id: str) -> Gateway:
        if run_id not in self._gateways:
            self._gateways[run_id] = Gateway(
                self.backend,
                call_log=self.store.run_dir(run_id) / "gateway_calls.jsonl",
                clock=self.clock,
            )
        return self._gateways[run_id]

    def emit(self, run_id: str, kind: str, payload: dict) -> RunEvent:
        return self.store.append_event(run_id, iso_ts(self.clock.now()), kind, payload)

    def state(self, run_id: str) -> RunState:
        return replay(run_id, self.store.read_events(run_id))

    # -- lifecycle ------------------------------------------------------

    def start_run(self, query_id: str, t_max: int = DEFAULT_T_MAX,
                  n_rounds: int = DEFAULT_N_ROUNDS, scripted_dir: str = "") -> str:
        try:
            entry = self.registry.get(query_id)
        except KeyError:
            raise UnknownQueryError(query_id) from None
        run_id = new_ulid()
        self.store.create_run(run_id)
        config = RunConfig(query_id=query_id, t_max=t_max, n_rounds=n_rounds,
                           scripted_dir=scripted_dir)
        experiment = {
            "communication_rounds": entry.config.communication_rounds,
            "local_epochs": entry.config.local_epochs,
            "scenario": entry.config.scenario.value,
            "partitioner": entry.config.partitioner.value,
            "split_seed": entry.config.split_seed,
        }
        backend_kind = type(self.backend).__name__
        model = getattr(getattr(self.backend, "descriptor", None), "model_name", "offline")
        self.store.write_json(run_id, "run.json", config.snapshot(experiment, backend_kind, model))
        self.emit(run_id, "run.created",
                  {"query_id": query_id, "t_max": t_max, "n_rounds": n_rounds})
        self.emit(run_id, "plan.drafting", {"version": 1})
        return run_id

    def run_config(self, run_id: str) -> dict:
        return self.store.read_json(run_id, "run.json")

    def advance(self, run_id: str) -> RunPhase:
        """Move the run exactly one phase forward once the current phase has
        reached its terminal sub-state."""
        state = self.state(run_id)
        if state.phase is RunPhase.PLANNING:
            if not state.approved_version:
                raise NotReadyError("plan not approved yet")
            next_phase = RunPhase.CODING
        elif state.phase is RunPhase.CODING:
            if 0 not in state.iterations and not self.store.iteration_dir(run_id, 0).exists():
                raise NotReadyError("codebase not integrated yet")
            next_phase = RunPhase.EVALUATING
        elif state.phase is RunPhase.EVALUATING:
            if state.outcome == Outcome.CERTIFIED.value:
                next_phase = RunPhase.CERTIFIED
            elif state.outcome == Outcome.EXHAUSTED.value:
                next_phase = RunPhase.EXHAUSTED
            else:
                raise NotReadyError("evaluation still running")
        else:
            raise NotReadyError(f"run is terminal: {state.phase.value}")
        self.emit(run_id, "run.phase", {"phase": next_phase.value})
        return next_phase

    def apply_decision(self, run_id: str, action: str, feedback: str = "") -> RunState:
        """Record and apply a human decision at the plan gate.

        On an Exhausted run only "abandon" is accepted, recorded as a closing
        decision event without changing the (already terminal) phase; replans
        of exhausted work start a fresh run.
        """
        state = self.state(run_id)
        if state.phase is RunPhase.EXHAUSTED and action == "abandon":
            self.emit(run_id, "decision", {"action": action, "feedback": feedback})
            return self.state(run_id)
        session = self._planning_session(run_id)
        if session.state is not SessionState.AWAITING_USER:
            raise NotReadyError("run is not awaiting a user decision")
        self._decide(run_id, session, action, feedback)
        return self.state(run_id)

    def _decide(self, run_id: str, session: PlanningSession, action: str, feedback: str) -> None:
        self.emit(run_id, "decision", {"action": action, "feedback": feedback})
        submit_user_decision(session, action, feedback)
        self.store.write_planning_state(run_id, session)
        if session.state is SessionState.APPROVED:
            self.emit(run_id, "plan.approved", {
                "version": session.plan.version,
                "override": session.approval_override,
            })
            self.advance(run_id)
        elif session.state is SessionState.ABANDONED:
            self.emit(run_id, "run.phase", {"phase": RunPhase.ABANDONED.value})

    # -- phase drivers ---------------------------------------------------

    def _planning_session(self, run_id: str) -> PlanningSession:
        config = self.run_config(run_id)
        entry = self.registry.get(config["query_id"])
        session = PlanningSession(query=entry.query, config=entry.config,
                                  max_reflection_cycles=config["max_reflection_cycles"])
        path = self.store.run_dir(run_id) / "planning_state.json"
        if path.exists():
            raw = json.loads(path.read_text(encoding="utf-8"))
            session.state = SessionState(raw["state"])
            session.reflection_cycles = raw["reflection_cycles"]
            session.user_feedback = raw["user_feedback"]
            session.clarification = raw["clarification"]
            session.messages = [Message(r, c) for r, c in raw["messages"]]
            session.verdicts = [
                planning.ReflectionVerdict(planning.VerdictStatus(s), j)
                for s, j in raw["verdicts"]
            ]
            if raw["version"]:
                plan_text = (self.store.run_dir(run_id) / f"plan.v{raw['version']}.md").read_text(
                    encoding="utf-8"
                )
                session.plan = planning.parse_plan(plan_text, version=raw["version"])
        return session

    def drive_planning(self, run_id: str) -> RunState:
        """Run the plan/reflect/decide loop until approved, abandoned, or
        parked at the human gate with no decision available."""
        engine = PlanningEngine(self.gateway(run_id), self.tools)
        session = self._planning_session(run_id)
        while True:
            if session.state in (SessionState.DRAFTING, SessionState.REVISING):
                plan = engine.draft_plan(session)
                self.store.write_planning_state(run_id, session)
                if plan is None:
                    self.emit(run_id, "plan.clarification", {})
                else:
                    self.store.write_plan(run_id, plan)
                    self.emit(run_id, "plan.drafted", {"version": plan.version})
            elif session.state is SessionState.REFLECTING:
                verdict = engine.reflect(session)
                self.store.write_planning_state(run_id, session)
                self.emit(run_id, "plan.verdict", {
                    "version": session.plan.version,
                    "status": verdict.status.value,
                    "cycles": session.reflection_cycles,
                })
                if session.state is SessionState.AWAITING_USER:
                    self.emit(run_id, "plan.awaiting_user",
                              {"version": session.plan.version})
            elif session.state is SessionState.AWAITING_USER:
                decision = self.decisions.next_decision(self.state(run_id))
                if decision is None:
                    return self.state(run_id)
                action, feedback = decision
                self._decide(run_id, session, action, feedback)
                if session.state in (SessionState.APPROVED, SessionState.ABANDONED):
                    return self.state(run_id)
            else:
                raise OrchestratorError(f"unexpected planning state {session.state}")

    def drive_coding(self, run_id: str) -> RunState:
        config = self.run_config(run_id)
        state = self.state(run_id)
        plan_text = (self.store.run_dir(run_id) / f"plan.v{state.approved_version}.md").read_text(
            encoding="utf-8"
        )
        engine = CodegenEngine(self.gateway(run_id),
                               max_module_attempts=config["max_module_attempts"])
        blueprint = engine.decompose(plan_text, tools=self.tools)
        self.store.write_blueprint(run_id, blueprint)
        self.emit(run_id, "blueprint.created", {
            "modules": sorted(k.value for k in blueprint.module_plans),
            "interdependencies": len(blueprint.interdependencies),
        })

        def on_module(kind: ModuleKind, status: str, state_obj=None):
            if status == "started":
                self.emit(run_id, "module.started", {"kind": kind.value})
            else:
                self.emit(run_id, "module.stable",
                          {"kind": kind.value, "attempts": state_obj.attempts})

        try:
            results = engine.run_schedule(blueprint, on_module=on_module)
        except ModuleFailedError as exc:
            self.emit(run_id, "module.failed",
                      {"kind": exc.kind, "attempts": exc.attempts, "feedback": exc.feedback})
            raise
        sources = {kind: source for kind, (source, _) in results.items()}
        provenance = {kind: (kind.coder_role.value, build.attempts)
                      for kind, (_, build) in results.items()}
        codebase = integrate(sources, provenance)
        self.store.write_codebase(run_id, codebase)
        self.emit(run_id, "codebase.integrated",
                  {"iteration": 0, "files": sorted(codebase.files)})
        self.advance(run_id)
        return self.state(run_id)

    def drive_evaluating(self, run_id: str) -> RunState:
        config = self.run_config(run_id)
        rules = DiagnosisRuleset.for_rounds(config["n_rounds"])
        state = self.state(run_id)
        gateway = self.gateway(run_id)

        # Resume point: completed iterations (diagnosis event present) feed the
        # history; work restarts at the first iteration without one.
        prior_history: list[tuple[CodebaseVersion, DiagnosisReport]] = []
        next_iteration = 0
        while next_iteration in state.iterations:
            report = self.store.load_diagnosis(run_id, next_iteration)
            prior_history.append((self.store.load_codebase(run_id, next_iteration), report))
            next_iteration += 1

        if prior_history and prior_history[-1][1].status is Status.SUCCESS:
            codebase = prior_history[-1][0]
            outcome = Outcome.CERTIFIED
            history = prior_history
        else:
            if self.store.iteration_dir(run_id, next_iteration).exists():
                codebase = self.store.load_codebase(run_id, next_iteration)
            elif prior_history:
                # Diagnosis recorded but the patch never landed: patch now.
                failed_cb, failed_report = prior_history[-1]
                patch = debug_patch(gateway, failed_cb, failed_report)
                codebase = apply_patchset(failed_cb, patch)
                self.store.write_codebase(run_id, codebase)
                self.emit(run_id, "patch.applied", {
                    "iteration": codebase.iteration,
                    "files": sorted(patch.replacements),
                })
            else:
                codebase = self.store.load_codebase(run_id, 0)

            def simulate_fn(cb: CodebaseVersion) -> evaluation.SimulationLog:
                self.store.write_codebase(run_id, cb)
                code_dir = self.store.iteration_dir(run_id, cb.iteration) / "code"
                log = simulate(cb, code_dir, n_rounds=config["n_rounds"],
                               wall_seconds=config["wall_seconds"],
                               cpu_seconds=config["cpu_seconds"])
                self.store.write_simulation(run_id, cb.iteration, log)
                losses = [e.loss for e in log.events
                          if e.phase == "central_eval" and e.loss is not None]
                if not losses:
                    losses = [e.loss for e in log.events
                              if e.phase == "fit_agg" and e.loss is not None]
                self.emit(run_id, "sim.finished", {
                    "iteration": cb.iteration,
                    "return_code": log.return_code,
                    "events": len(log.events),
                    "rounds": len({e.round for e in log.events if e.phase == "fit_agg"}),
                    "losses": losses,
                })
                return log

            def debug_fn(cb: CodebaseVersion, report: DiagnosisReport):
                patch = debug_patch(gateway, cb, report)
                self.emit(run_id, "patch.applied", {
                    "iteration": cb.iteration + 1,
                    "files": sorted(patch.replacements),
                })
                return patch

            def on_iteration(cb: CodebaseVersion, log, report: DiagnosisReport) -> None:
                self.store.write_diagnosis(run_id, cb.iteration, report)
                if config.get("use_llm_evaluator"):
                    evaluation.llm_evaluate(gateway, log, report)
                self.emit(run_id, "diagnosis", {
                    "iteration": cb.iteration,
                    "status": report.status.value,
                    "layer": report.layer.value,
                    "reason": report.reason,
                })

            outcome, codebase, history = evaluation.refine_until_certified(
                codebase, simulate_fn, debug_fn, rules,
                t_max=config["t_max"], on_iteration=on_iteration,
                prior_history=prior_history,
            )

        if outcome is Outcome.CERTIFIED:
            self.emit(run_id, "run.certified", {"iterations": len(history)})
        else:
            self.emit(run_id, "run.exhausted", {"iterations": len(history)})
        self.advance(run_id)
        return self.state(run_id)

    # -- top-level drivers -------------------------------------------------

    def run_to_completion(self, run_id: str) -> RunState:
        """Drive phases until terminal or parked at the human gate."""
        while True:
            state = self.state(run_id)
            if state.phase in TERMINAL_PHASES:
                return state
            if state.phase is RunPhase.PLANNING:
                state = self.drive_planning(run_id)
                if state.phase is RunPhase.PLANNING:
                    return state  # awaiting human decision
            elif state.phase is RunPhase.CODING:
                self.drive_coding(run_id)
            elif state.phase is RunPhase.EVALUATING:
                self.drive_evaluating(run_id)

    def resume(self, run_id: str) -> RunState:
        """Continue a run from its persisted events and artifacts."""
        if not self.store.run_dir(run_id).exists():
            raise OrchestratorError(f"no such run: {run_id}")
        state = self.state(run_id)  # validates event-log integrity
        if state.phase in TERMINAL_PHASES:
            return state
        return self.run_to_completion(run_id)


def stream_events(store: RunStore, run_id: str, from_seq: int = 1, follow: bool = False,
                  poll_interval: float = 0.05, timeout_s: float = 30.0):
    """Yield events with seq >= from_seq in order; optionally follow live.

    Delivery is at-least-once across reconnects; consumers dedupe by seq.
    Following stops once a terminal run.phase event is delivered or the
    timeout elapses.
    """
    delivered = from_seq - 1
    deadline = time.monotonic() + timeout_s
    while True:
        for event in store.read_events(run_id, from_seq=delivered + 1):
            delivered = event.seq
            yield event
            if event.kind == "run.phase" and event.payload.get("phase") in (
                p.value for p in TERMINAL_PHASES
            ):
                return
        if not follow or time.monotonic() > deadline:
            return
        time.sleep(poll_interval)


def default_home() -> Path:
    return Path(os.environ.get(HOME_ENV, Path.home() / ".fedforge"))


def build_scripted_controller(home: str | Path, transcripts: str | Path,
                              registry: BenchmarkRegistry | None = None) -> RunController:
    """Fully offline controller: scripted agents, scripted decisions, fixed clock."""
    backend = ScriptedBackend.from_dir(transcripts)
    decisions = ScriptedDecisions.from_dir(transcripts)
    return RunController(home, backend, registry=registry, decisions=decisions,
                         clock=FixedStepClock(), deterministic=True)
