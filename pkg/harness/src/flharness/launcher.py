"""Resource-limited launcher for generated codebases.

`launch.sh <code-dir> <manifest-path>` (or `flharness-launch ...`) runs the
manifest's entry file inside the code directory with CPU and wall limits,
captures both streams, and exits with the harness exit class:
0 ok, 1 runtime error, 9 limit violation.
"""

from __future__ import annotations

import json
import os
import subprocess
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from .emitter import ROUNDS_ENV, SINK_ENV

EXIT_OK = 0
EXIT_RUNTIME_ERROR = 1
EXIT_LIMIT_VIOLATION = 9
EXIT_USAGE = 2  # harness misuse (missing entry/manifest), not a simulation result


class MissingEntryError(FileNotFoundError):
    pass


@dataclass(frozen=True)
class HarnessManifest:
    runtime_version: str = "python3"
    entry_file: str = "run.py"
    event_sink: str = "events.jsonl"
    round_limit: int = 5
    cpu_seconds_limit: int = 30
    wall_seconds_limit: int = 60

    def __post_init__(self):
        if self.round_limit < 1 or self.cpu_seconds_limit < 1 or self.wall_seconds_limit < 1:
            raise ValueError("limits must be positive")
        if not self.entry_file.startswith("run."):
            raise ValueError("entry file must be the runner (run.*)")

    @classmethod
    def load(cls, path: str | Path) -> "HarnessManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.__dict__, indent=2) + "\n", encoding="utf-8")


@dataclass
class LaunchResult:
    exit_class: int
    raw_return_code: int
    stdout: str
    stderr: str
    events_path: Path
    wall_time_ms: int

    @property
    def events_lines(self) -> list[str]:
        if not self.events_path.exists():
            return []
        return [l for l in self.events_path.read_text(encoding="utf-8").splitlines()
                if l.strip()]


def _child_env(manifest: HarnessManifest) -> dict:
    # Hermetic by default: PATH plus the harness contract variables; the
    # harness package itself is importable so fixtures can use the emitter.
    package_root = str(Path(__file__).resolve().parents[1])
    return {
        "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
        "PYTHONUNBUFFERED": "1",
        "PYTHONPATH": package_root,
        ROUNDS_ENV: str(manifest.round_limit),
        SINK_ENV: manifest.event_sink,
    }


def launch(manifest: HarnessManifest, code_dir: str | Path) -> LaunchResult:
    code_dir = Path(code_dir)
    entry = code_dir / manifest.entry_file
    if not entry.exists():
        raise MissingEntryError(str(entry))
    events_path = code_dir / manifest.event_sink
    if events_path.exists():
        events_path.unlink()

    def _limits():
        try:
            import resource

            resource.setrlimit(resource.RLIMIT_CPU,
                               (manifest.cpu_seconds_limit, manifest.cpu_seconds_limit + 5))
        except Exception:
            pass

    started = time.monotonic()
    proc = subprocess.Popen(
        [sys.executable, manifest.entry_file],
        cwd=str(code_dir),
        env=_child_env(manifest),
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
        preexec_fn=_limits if os.name == "posix" else None,
    )
    limit_hit = False
    try:
        stdout, stderr = proc.communicate(timeout=manifest.wall_seconds_limit)
    except subprocess.TimeoutExpired:
        limit_hit = True
        proc.kill()
        stdout, stderr = proc.communicate()
        stderr = (stderr or "") + "\nwall-clock limit exceeded\n"
    wall_ms = int((time.monotonic() - started) * 1000)

    raw = proc.returncode
    if limit_hit or raw == -9:  # SIGKILL from the CPU rlimit
        exit_class = EXIT_LIMIT_VIOLATION
    elif raw == 0:
        exit_class = EXIT_OK
    else:
        exit_class = EXIT_RUNTIME_ERROR
    return LaunchResult(
        exit_class=exit_class,
        raw_return_code=raw,
        stdout=stdout or "",
        stderr=stderr or "",
        events_path=events_path,
        wall_time_ms=wall_ms,
    )


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if len(argv) != 2:
        print("usage: flharness-launch <code-dir> <manifest-path>", file=sys.stderr)
        return EXIT_USAGE
    code_dir, manifest_path = argv
    if not Path(manifest_path).exists():
        print(f"manifest not found: {manifest_path}", file=sys.stderr)
        return EXIT_USAGE
    try:
        manifest = HarnessManifest.load(manifest_path)
        result = launch(manifest, code_dir)
    except (MissingEntryError, ValueError) as exc:
        print(f"launch error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    sys.stdout.write(result.stdout)
    sys.stderr.write(result.stderr)
    return result.exit_class


if __name__ == "__main__":
    sys.exit(main())
