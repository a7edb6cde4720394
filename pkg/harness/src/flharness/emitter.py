"""Structured event emission for simulated FL runs.

One JSON object per line, keys in fixed order, floats trimmed to six
decimals, flushed per line so a crash leaves a readable prefix. The emitter
also enforces the harness round limit: events beyond FEDFORGE_SIM_ROUNDS are
dropped regardless of what the generated code asks for.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

ROUNDS_ENV = "FEDFORGE_SIM_ROUNDS"
SINK_ENV = "FEDFORGE_EVENT_SINK"

PHASES = ("fit_agg", "eval_agg", "central_eval")


def round_limit() -> int | None:
    raw = os.environ.get(ROUNDS_ENV, "")
    return int(raw) if raw.isdigit() else None


def default_sink() -> Path:
    return Path(os.environ.get(SINK_ENV, "events.jsonl"))


def _trim(value) -> float | None:
    return None if value is None else round(float(value), 6)


def emit_event(round_num: int, phase: str, loss=None, accuracy=None,
               num_results: int = 0, sink: Path | None = None) -> str | None:
    """Append one event line; returns the line, or None when suppressed by
    the round limit."""
    if phase not in PHASES:
        raise ValueError(f"unknown phase: {phase}")
    limit = round_limit()
    if limit is not None and round_num > limit:
        return None
    record = {
        "round": int(round_num),
        "phase": phase,
        "loss": _trim(loss),
        "accuracy": _trim(accuracy),
        "num_results": int(num_results),
    }
    line = json.dumps(record)
    path = Path(sink) if sink else default_sink()
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(line + "\n")
        fh.flush()
    return line
