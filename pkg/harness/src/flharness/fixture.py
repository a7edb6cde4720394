"""Self-contained toy federated-averaging fixture.

Three clients, synthetic two-class 2-D point clouds, a linear classifier,
and weighted averaging - deterministic at seed 42, finishes well under ten
seconds on one core. Used for offline end-to-end tests of the sandbox
contract. The fixture's only non-stdlib dependency is the harness emitter,
which the launcher makes importable in the child.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

FILES = ("task.py", "client_app.py", "strategy.py", "server_app.py", "run.py")


def fixture_source(name: str) -> str:
    if name not in FILES:
        raise KeyError(name)
    raw = resources.files("flharness").joinpath(f"fixture/{name}.txt")
    return raw.read_text(encoding="utf-8")


def materialize(dest: str | Path) -> Path:
    """Write the five fixture files into dest and return it."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    for name in FILES:
        (dest / name).write_text(fixture_source(name), encoding="utf-8")
    return dest
