"""Grammar-only source check used by module testers."""

from __future__ import annotations


def syntax_check(source: str) -> tuple[bool, str]:
    """Compile-check the source; empty input is vacuously ok.

    Returns (True, "ok") or (False, "line N: message").
    """
    try:
        compile(source, "<module>", "exec")
    except SyntaxError as exc:
        return False, f"line {exc.lineno}: {exc.msg}"
    return True, "ok"
