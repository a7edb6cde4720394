"""Phase three: the closed simulate / diagnose / repair loop.

Each iteration runs the current codebase in the sandbox, classifies the
resulting log hierarchically, and either certifies the build or asks the
debugger agent for a patch. Diagnosis layers:

* L1 (runtime integrity): nonzero exit or an error signature in the streams.
* L2 (semantic correctness): only checked when L1 is clean - too few
  completed rounds, an aggregation that received zero results, or metrics
  that never move between rounds.

Diagnosis is a pure function of (log, ruleset); certification never depends
on an LLM. The evaluator agent exists as an advisory second opinion and the
rule verdict wins any disagreement.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .codegen import CANONICAL_FILES, CodebaseVersion
from .errors import (
    NoFileBlocksError,
    PreconditionError,
    UnknownFileNameError,
)
from .gateway import AgentRole, ChatRequest, Gateway, Message
from .prompts import fill
from .sandbox import LIMIT_EXIT_CODE, SandboxResult, run_codebase

logger = logging.getLogger(__name__)

DEFAULT_N_ROUNDS = 5
DEFAULT_T_MAX = 10

PHASES = ("fit_agg", "eval_agg", "central_eval")
AGGREGATION_PHASES = ("fit_agg", "eval_agg")


@dataclass(frozen=True)
class StructuredEvent:
    round: int
    phase: str
    loss: float | None = None
    accuracy: float | None = None
    num_results: int = 0


def parse_events_text(text: str) -> list[StructuredEvent]:
    """Parse the JSON-lines event channel, skipping lines that are not valid
    event objects (a crashing child may leave a torn final line)."""
    events: list[StructuredEvent] = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            raw = json.loads(line)
            events.append(
                StructuredEvent(
                    round=int(raw["round"]),
                    phase=str(raw["phase"]),
                    loss=None if raw.get("loss") is None else float(raw["loss"]),
                    accuracy=None if raw.get("accuracy") is None else float(raw["accuracy"]),
                    num_results=int(raw.get("num_results", 0)),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            logger.debug("skipping malformed event line: %r", line[:120])
    return events


@dataclass
class SimulationLog:
    run_handle: str
    return_code: int
    stdout: str
    stderr: str
    events: list[StructuredEvent]
    wall_time_ms: int


@dataclass(frozen=True)
class DiagnosisRuleset:
    l1_signatures: tuple[str, ...] = ("Traceback", "Error", "Exception", "ClientAppException")
    min_metric_delta: float = 1e-6
    min_results: int = 1
    min_completed_rounds: int = DEFAULT_N_ROUNDS
    excerpt_context: int = 2
    # Report-framing prefixes never scanned for signatures, so a rendered
    # "stderr:" header cannot trigger its own diagnosis.
    frame_prefixes: tuple[str, ...] = ("stdout:", "stderr:", "STDOUT:", "STDERR:")

    def __post_init__(self):
        if not self.l1_signatures:
            raise ValueError("l1_signatures must be non-empty")

    @classmethod
    def for_rounds(cls, n_rounds: int) -> "DiagnosisRuleset":
        return cls(min_completed_rounds=n_rounds)


class Layer(str, Enum):
    L1 = "L1"
    L2 = "L2"
    NONE = "none"


class Status(str, Enum):
    SUCCESS = "SUCCESS"
    FAIL = "FAIL"


@dataclass(frozen=True)
class DiagnosisReport:
    status: Status
    layer: Layer
    reason: str
    error_excerpt: str = ""

    def __post_init__(self):
        if (self.status is Status.SUCCESS) != (self.layer is Layer.NONE):
            raise ValueError("SUCCESS iff layer is none")
        if self.status is Status.FAIL and not self.reason:
            raise ValueError("FAIL reports need a reason")

    @classmethod
    def success(cls) -> "DiagnosisReport":
        return cls(Status.SUCCESS, Layer.NONE, "")


def _signature_matches(line: str, signature: str) -> bool:
    # The bare "Error" literal matches case-sensitively at word boundaries
    # only; words that merely embed it ("Errors", "NoErrorHere") do not fire.
    if signature == "Error":
        return re.search(r"\bError\b", line) is not None
    return signature in line


def _scan_l1(log: SimulationLog, rules: DiagnosisRuleset) -> tuple[str, str] | None:
    lines = (log.stdout + "\n" + log.stderr).splitlines()
    for i, line in enumerate(lines):
        if any(line.startswith(prefix) for prefix in rules.frame_prefixes):
            continue
        for signature in rules.l1_signatures:
            if _signature_matches(line, signature):
                lo = max(0, i - rules.excerpt_context)
                hi = min(len(lines), i + rules.excerpt_context + 1)
                return signature, "\n".join(lines[lo:hi])
    return None


def _loss_series(events: list[StructuredEvent]) -> list[float]:
    for phase in ("central_eval", "eval_agg", "fit_agg"):
        series = [e.loss for e in events if e.phase == phase and e.loss is not None]
        if series:
            return series
    return []


def diagnose(log: SimulationLog, rules: DiagnosisRuleset) -> DiagnosisReport:
    """Hierarchical diagnosis; a pure function of (log, rules)."""
    # L1: runtime integrity
    if log.return_code == LIMIT_EXIT_CODE:
        return DiagnosisReport(Status.FAIL, Layer.L1, "timeout",
                               error_excerpt=log.stderr[-500:])
    if log.return_code != 0:
        return DiagnosisReport(Status.FAIL, Layer.L1,
                               f"nonzero-exit:{log.return_code}",
                               error_excerpt=(log.stderr or log.stdout)[-1000:])
    match = _scan_l1(log, rules)
    if match:
        signature, excerpt = match
        return DiagnosisReport(Status.FAIL, Layer.L1, f"error-signature:{signature}",
                               error_excerpt=excerpt)

    # L2: semantic correctness
    completed = len({e.round for e in log.events if e.phase == "fit_agg"})
    if completed < rules.min_completed_rounds:
        return DiagnosisReport(
            Status.FAIL, Layer.L2,
            f"incomplete-rounds:{completed}<{rules.min_completed_rounds}",
            error_excerpt=f"completed fit rounds: {completed}",
        )
    starved = [e for e in log.events
               if e.phase in AGGREGATION_PHASES and e.num_results < rules.min_results]
    if starved:
        first = starved[0]
        return DiagnosisReport(
            Status.FAIL, Layer.L2, "zero-results",
            error_excerpt=f"{first.phase} at round {first.round} received {first.num_results} results",
        )
    series = _loss_series(log.events)
    if len(series) >= 2 and (max(series) - min(series)) < rules.min_metric_delta:
        return DiagnosisReport(
            Status.FAIL, Layer.L2, "stagnant-metrics",
            error_excerpt=f"loss series: {[round(x, 6) for x in series]}",
        )
    return DiagnosisReport.success()


def simulate(codebase: CodebaseVersion, workdir: str | Path,
             n_rounds: int = DEFAULT_N_ROUNDS,
             wall_seconds: float = 60.0, cpu_seconds: int = 30) -> SimulationLog:
    """Materialize the codebase and run it once in the sandbox."""
    code_dir = Path(workdir)
    code_dir.mkdir(parents=True, exist_ok=True)
    for name, body in codebase.files.items():
        (code_dir / name).write_text(body, encoding="utf-8")
    result: SandboxResult = run_codebase(code_dir, n_rounds=n_rounds,
                                         wall_seconds=wall_seconds, cpu_seconds=cpu_seconds)
    return SimulationLog(
        run_handle=f"iter-{codebase.iteration}",
        return_code=result.return_code,
        stdout=result.stdout,
        stderr=result.stderr,
        events=parse_events_text(result.events_text),
        wall_time_ms=result.wall_time_ms,
    )


# -- evaluator agent (advisory) -----------------------------------------

_SUCCESS_LINE_RE = re.compile(r"^\s*SUCCESS:\s*(Yes|No)\b", re.IGNORECASE | re.MULTILINE)
_REASON_LINE_RE = re.compile(r"^\s*REASON:\s*(.*)$", re.MULTILINE)
_ERROR_LINE_RE = re.compile(r"^\s*ERROR:\s*(.*)$", re.MULTILINE)


def parse_evaluator_reply(text: str) -> tuple[bool, str, str] | None:
    match = _SUCCESS_LINE_RE.search(text)
    if not match:
        return None
    ok = match.group(1).lower() == "yes"
    reason = _REASON_LINE_RE.search(text)
    error = _ERROR_LINE_RE.search(text)
    return ok, reason.group(1).strip() if reason else "", error.group(1).strip() if error else ""


def llm_evaluate(gateway: Gateway, log: SimulationLog,
                 rule_report: DiagnosisReport) -> DiagnosisReport:
    """Advisory LLM read of the log. The rule-based verdict stays
    authoritative; disagreement is logged, unparsable output falls back."""
    prompt = fill(
        "evaluator",
        returncode=str(log.return_code),
        stdout_tail=log.stdout[-5000:],
        stderr_tail=log.stderr[-3000:],
    )
    reply = gateway.complete(
        ChatRequest(
            agent_role=AgentRole.EVALUATOR,
            system_prompt=prompt,
            messages=[Message("user", "Analyze the simulation output now.")],
        )
    )
    parsed = parse_evaluator_reply(reply)
    if parsed is None:
        logger.warning("evaluator reply unparsable; using rule verdict")
        return rule_report
    ok, reason, error = parsed
    if ok:
        advisory = DiagnosisReport.success()
    else:
        layer = Layer.L1 if any(sig in error for sig in
                                DiagnosisRuleset().l1_signatures) else Layer.L2
        advisory = DiagnosisReport(Status.FAIL, layer, reason or "evaluator-flagged",
                                   error_excerpt=error)
    if advisory.status is not rule_report.status:
        logger.warning("evaluator disagrees with rules (%s vs %s); rules win",
                       advisory.status.value, rule_report.status.value)
        return rule_report
    return advisory


# -- patches --------------------------------------------------------------


@dataclass(frozen=True)
class PatchSet:
    replacements: dict[str, str]

    def __post_init__(self):
        if not self.replacements:
            raise NoFileBlocksError("patch set is empty")
        for name in self.replacements:
            if name not in CANONICAL_FILES:
                raise UnknownFileNameError(name)


_FILE_HEAD_RE = re.compile(r"^FILE:\s*(\S+)\s*$")
_FENCE_OPEN_RE = re.compile(r"^```")


def parse_file_blocks(text: str) -> PatchSet:
    """Parse the FILE-block wire format.

    The scanner is fence-aware: a "FILE:" line inside a fenced code block is
    code, not a header, so sources that themselves mention the protocol
    round-trip cleanly.
    """
    replacements: dict[str, str] = {}
    current_name: str | None = None
    block: list[str] = []
    in_fence = False
    for line in text.splitlines():
        if in_fence:
            if _FENCE_OPEN_RE.match(line):
                in_fence = False
                if current_name is not None:
                    replacements[current_name] = "\n".join(block)
                    current_name = None
                block = []
            else:
                block.append(line)
            continue
        head = _FILE_HEAD_RE.match(line.strip())
        if head:
            current_name = head.group(1)
            continue
        if _FENCE_OPEN_RE.match(line) and current_name is not None:
            in_fence = True
            block = []
    if not replacements:
        raise NoFileBlocksError("reply contains no FILE blocks")
    return PatchSet(replacements)


def serialize_patchset(patch: PatchSet) -> str:
    parts = []
    for name in CANONICAL_FILES:
        if name in patch.replacements:
            parts.append(f"FILE: {name}\n```python\n{patch.replacements[name]}\n```\n")
    return "\n".join(parts)


def apply_patchset(codebase: CodebaseVersion, patch: PatchSet) -> CodebaseVersion:
    """Produce C_{i+1}: named files replaced, everything else byte-identical."""
    files = dict(codebase.files)
    provenance = dict(codebase.provenance)
    next_iteration = codebase.iteration + 1
    for name, body in patch.replacements.items():
        files[name] = body
        provenance[name] = (AgentRole.DEBUGGER.value, next_iteration)
    return CodebaseVersion(
        iteration=next_iteration,
        files=files,
        provenance=provenance,
        parent_iteration=codebase.iteration,
    )


def debug_patch(gateway: Gateway, codebase: CodebaseVersion,
                report: DiagnosisReport) -> PatchSet:
    """Ask the debugger agent for replacements for the failing files."""
    if report.status is not Status.FAIL:
        raise PreconditionError("debug_patch requires a FAIL report")
    feedback = f"{report.reason}\n{report.error_excerpt}".strip()
    prompt = fill(
        "debugger",
        error_feedback=feedback,
        code_run=codebase.files.get("run.py", ""),
        code_task=codebase.files.get("task.py", ""),
        code_client=codebase.files.get("client_app.py", ""),
        code_server=codebase.files.get("server_app.py", ""),
        code_strategy=codebase.files.get("strategy.py", ""),
    )
    reply = gateway.complete(
        ChatRequest(
            agent_role=AgentRole.DEBUGGER,
            system_prompt=prompt,
            messages=[Message("user", "Output the corrected FILE blocks now.")],
        )
    )
    return parse_file_blocks(reply)


# -- refinement loop -------------------------------------------------------


class Outcome(str, Enum):
    CERTIFIED = "Certified"
    EXHAUSTED = "Exhausted"
    RUNNING = "Running"


@dataclass
class RefinementState:
    iteration: int = 0
    t_max: int = DEFAULT_T_MAX
    history: list[tuple[int, DiagnosisReport]] = field(default_factory=list)
    outcome: Outcome = Outcome.RUNNING


def refine_until_certified(
    c0: CodebaseVersion,
    simulate_fn,
    debug_fn,
    rules: DiagnosisRuleset,
    t_max: int = DEFAULT_T_MAX,
    on_iteration=None,
    prior_history: list[tuple[CodebaseVersion, DiagnosisReport]] | None = None,
) -> tuple[Outcome, CodebaseVersion, list[tuple[CodebaseVersion, DiagnosisReport]]]:
    """Iterate simulate -> diagnose -> patch until certified or exhausted.

    The iteration index doubles as the correction count: C_i has had i patches
    applied, so hitting i == t_max while still failing means the repair budget
    is spent and the run is Exhausted (history C_0..C_{t_max}).
    """
    if t_max < 1:
        raise PreconditionError("t_max must be >= 1")
    history = list(prior_history or [])
    codebase = c0
    while True:
        log = simulate_fn(codebase)
        report = diagnose(log, rules)
        history.append((codebase, report))
        if on_iteration:
            on_iteration(codebase, log, report)
        if report.status is Status.SUCCESS:
            return Outcome.CERTIFIED, codebase, history
        if codebase.iteration >= t_max:
            return Outcome.EXHAUSTED, codebase, history
        patch = debug_fn(codebase, report)
        codebase = apply_patchset(codebase, patch)
