"""Small shared utilities: ULIDs, clocks, and JSON-lines helpers."""

from __future__ import annotations

import json
import os
import threading
import time
from datetime import datetime, timezone
from pathlib import Path

_CROCKFORD = "0123456789ABCDEFGHJKMNPQRSTVWXYZ"
_ulid_lock = threading.Lock()
_ulid_last = [0, 0]  # [timestamp_ms, rand_int]


def new_ulid() -> str:
    """Generate a 26-char ULID (48-bit timestamp + 80-bit randomness).

    Monotonic within this process: two calls in the same millisecond
    increment the random part instead of re-rolling, so ids sort in
    creation order.
    """
    with _ulid_lock:
        ts = int(time.time() * 1000)
        if ts == _ulid_last[0]:
            _ulid_last[1] += 1
        else:
            _ulid_last[0] = ts
            _ulid_last[1] = int.from_bytes(os.urandom(10), "big")
        rand = _ulid_last[1] & ((1 << 80) - 1)
    value = (ts << 80) | rand
    chars = []
    for _ in range(26):
        chars.append(_CROCKFORD[value & 0x1F])
        value >>= 5
    return "".join(reversed(chars))


class SystemClock:
    """Wall clock; the default for interactive runs."""

    def now(self) -> datetime:
        return datetime.now(timezone.utc)

    def sleep(self, seconds: float) -> None:
        time.sleep(seconds)


class FixedStepClock:
    """Deterministic clock for scripted runs and tests.

    Starts at a fixed epoch and advances by `step_s` on every now() call,
    which makes event-log timestamps reproducible byte-for-byte.
    """

    def __init__(self, start: str = "2025-01-01T00:00:00", step_s: int = 1):
        self._t = datetime.fromisoformat(start).replace(tzinfo=timezone.utc)
        self._step = step_s
        self._calls = 0
        self.slept: list[float] = []

    def now(self) -> datetime:
        t = self._t
        self._t = datetime.fromtimestamp(self._t.timestamp() + self._step, tz=timezone.utc)
        self._calls += 1
        return t

    def sleep(self, seconds: float) -> None:
        self.slept.append(seconds)
        self._t = datetime.fromtimestamp(self._t.timestamp() + seconds, tz=timezone.utc)


def iso_ts(dt: datetime) -> str:
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def dump_json_line(obj: dict) -> str:
    """Canonical compact one-line JSON (insertion key order preserved)."""
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=True)


def append_jsonl(path: Path, obj: dict) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(dump_json_line(obj) + "\n")
        fh.flush()


def read_jsonl(path: Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def estimate_tokens(text: str) -> int:
    """Cheap token estimate (4 chars/token) for budgets and the call log."""
    return max(1, len(text) // 4)
