"""Sandbox-side harness: launch generated FL codebases under resource limits,
stream structured events line-by-line, and ship a toy fixture for offline
end-to-end testing.

Contract: the child is started as `python <entry_file>` in the code
directory; it reads the round count from FEDFORGE_SIM_ROUNDS, writes one JSON
object per line to the event sink, and the launcher reports exit class 0
(ok), 1 (runtime error), or 9 (limit violation).
"""

__version__ = "0.1.0"

from .emitter import emit_event  # noqa: F401
from .launcher import HarnessManifest, LaunchResult, launch  # noqa: F401
from .syntax import syntax_check  # noqa: F401
