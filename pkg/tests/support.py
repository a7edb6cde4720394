"""Shared test builders: toy codebases, fault variants, synthetic logs,
scripted transcript directories."""

from __future__ import annotations

import shutil
from pathlib import Path

from fedforge.codegen import CodebaseVersion, ModuleKind, extract_code_block
from fedforge.evaluation import SimulationLog, StructuredEvent

REPO_ROOT = Path(__file__).resolve().parents[1]
DEMO_TRANSCRIPTS = REPO_ROOT / "src" / "fedforge" / "assets" / "demo" / "q5_transcripts"

_CODER_DIRS = {
    ModuleKind.TASK: "coder_task",
    ModuleKind.CLIENT: "coder_client",
    ModuleKind.SERVER: "coder_server",
    ModuleKind.STRATEGY: "coder_strategy",
    ModuleKind.RUNNER: "orchestrator",
}


def toy_sources() -> dict[str, str]:
    """The known-good toy codebase, extracted from the shipped demo
    transcripts (single source of truth)."""
    files = {}
    for kind, role_dir in _CODER_DIRS.items():
        reply = (DEMO_TRANSCRIPTS / role_dir / "000.txt").read_text(encoding="utf-8")
        files[kind.file_name] = extract_code_block(reply)
    return files


def toy_codebase(iteration: int = 0) -> CodebaseVersion:
    files = toy_sources()
    provenance = {name: ("test", 1) for name in files}
    return CodebaseVersion(iteration=iteration, files=files, provenance=provenance)


def crash_at_round(files: dict[str, str], round_num: int) -> dict[str, str]:
    """Inject an unconditional raise into run.py at the given round."""
    marker = "            fit_results = ["
    injected = (
        f"            if round_num == {round_num}:\n"
        f"                raise RuntimeError('injected fault at round {round_num}')\n"
    )
    run = files["run.py"]
    assert marker in run
    out = dict(files)
    out["run.py"] = run.replace(marker, injected + marker, 1)
    return out


def sleeper(files: dict[str, str], seconds: float = 10.0) -> dict[str, str]:
    out = dict(files)
    out["run.py"] = f"import time\ntime.sleep({seconds})\n"
    return out


def fenced(source: str) -> str:
    return f"```python\n{source}\n```\n"


def file_block(name: str, source: str) -> str:
    return f"FILE: {name}\n{fenced(source)}"


def copy_transcripts(dest: Path, debugger: list[str] = (), extra: dict[str, list[str]] | None = None,
                     coder_overrides: dict[str, str] | None = None) -> Path:
    """Clone the demo transcripts, optionally overriding coder replies and
    adding debugger (or other role) scripts."""
    dest = Path(dest)
    shutil.copytree(DEMO_TRANSCRIPTS, dest)
    for role_dir, source in (coder_overrides or {}).items():
        target = dest / role_dir / "000.txt"
        target.write_text(fenced(source), encoding="utf-8")
    for i, reply in enumerate(debugger):
        (dest / "debugger").mkdir(exist_ok=True)
        (dest / "debugger" / f"{i:03d}.txt").write_text(reply, encoding="utf-8")
    for role, replies in (extra or {}).items():
        (dest / role).mkdir(exist_ok=True)
        for i, reply in enumerate(replies):
            (dest / role / f"{i:03d}.txt").write_text(reply, encoding="utf-8")
    return dest


# -- synthetic logs for diagnosis tests -----------------------------------


def make_events(rounds: int = 5, num_results: int = 3,
                losses: list[float] | None = None) -> list[StructuredEvent]:
    losses = losses or [2.1, 1.7, 1.4, 1.2, 1.1][:rounds]
    events = []
    for r in range(1, rounds + 1):
        loss = losses[r - 1] if r - 1 < len(losses) else losses[-1]
        events.append(StructuredEvent(r, "fit_agg", loss, None, num_results))
        events.append(StructuredEvent(r, "eval_agg", loss * 0.9, 0.5 + 0.05 * r, num_results))
        events.append(StructuredEvent(r, "central_eval", loss * 0.95, 0.5 + 0.05 * r, 0))
    return events


def make_log(return_code: int = 0, stdout: str = "", stderr: str = "",
             events: list[StructuredEvent] | None = None, rounds: int = 5,
             **event_kwargs) -> SimulationLog:
    if events is None:
        events = make_events(rounds=rounds, **event_kwargs)
    return SimulationLog(run_handle="t", return_code=return_code, stdout=stdout,
                         stderr=stderr, events=events, wall_time_ms=10)
