"""Process-level sandbox for running generated codebases.

Contract with the child: it is invoked as `python run.py` inside the
iteration's code directory, reads the round count from FEDFORGE_SIM_ROUNDS,
and appends one JSON object per line to events.jsonl as it progresses so
partial logs survive crashes. Exit classes follow the harness convention:
0 ok, nonzero runtime error, 9 limit violation (timeouts are normalized
to 9 here).

Isolation is process limits only (CPU seconds via rlimit, wall clock via
kill); container-grade isolation is deliberately out of scope.
"""

from __future__ import annotations

import os
import subprocess
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from .errors import SandboxUnavailableError

ROUNDS_ENV = "FEDFORGE_SIM_ROUNDS"
LIMIT_EXIT_CODE = 9

DEFAULT_WALL_SECONDS = 60.0
DEFAULT_CPU_SECONDS = 30


@dataclass
class SandboxResult:
    return_code: int
    stdout: str
    stderr: str
    events_text: str
    wall_time_ms: int
    timed_out: bool = False


def probe() -> None:
    """Raise SandboxUnavailableError when child processes cannot run at all;
    this is an environment fault, not a failing simulation."""
    if not sys.executable or not Path(sys.executable).exists():
        raise SandboxUnavailableError("no python runtime found for child processes")


def syntax_check(source: str) -> tuple[bool, str]:
    """Grammar-only check; an empty file is vacuously ok."""
    try:
        compile(source, "<module>", "exec")
    except SyntaxError as exc:
        return False, f"line {exc.lineno}: {exc.msg}"
    return True, "ok"


def run_codebase(code_dir: str | Path, n_rounds: int,
                 wall_seconds: float = DEFAULT_WALL_SECONDS,
                 cpu_seconds: int = DEFAULT_CPU_SECONDS) -> SandboxResult:
    """Execute run.py in code_dir under resource limits, capturing everything."""
    probe()
    code_dir = Path(code_dir)
    entry = code_dir / "run.py"
    if not entry.exists():
        raise SandboxUnavailableError(f"entry file missing: {entry}")
    events_path = code_dir / "events.jsonl"
    if events_path.exists():
        events_path.unlink()

    env = {
        "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
        ROUNDS_ENV: str(n_rounds),
        "PYTHONUNBUFFERED": "1",
    }

    def _limits():
        try:
            import resource

            resource.setrlimit(resource.RLIMIT_CPU, (cpu_seconds, cpu_seconds + 5))
        except Exception:
            pass  # limits are best-effort on exotic platforms

    started = time.monotonic()
    proc = subprocess.Popen(
        [sys.executable, "run.py"],
        cwd=str(code_dir),
        env=env,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
        preexec_fn=_limits if os.name == "posix" else None,
    )
    timed_out = False
    try:
        stdout, stderr = proc.communicate(timeout=wall_seconds)
        return_code = proc.returncode
    except subprocess.TimeoutExpired:
        timed_out = True
        proc.kill()
        stdout, stderr = proc.communicate()
        stderr = (stderr or "") + "\nwall-clock limit exceeded\n"
        return_code = LIMIT_EXIT_CODE
    wall_ms = int((time.monotonic() - started) * 1000)

    events_text = events_path.read_text(encoding="utf-8") if events_path.exists() else ""
    return SandboxResult(
        return_code=return_code,
        stdout=stdout or "",
        stderr=stderr or "",
        events_text=events_text,
        wall_time_ms=wall_ms,
        timed_out=timed_out,
    )
