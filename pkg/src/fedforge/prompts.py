"""Prompt template assets and placeholder substitution.

Templates live under assets/prompts/ as plain text with {snake_case}
placeholders. Substitution is strict: a placeholder with no binding raises,
so prompt drift shows up as a hard error instead of a silently broken agent.
Literal braces that do not wrap an identifier (JSON examples, dict syntax)
pass through untouched.
"""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources
from typing import Mapping

from .errors import UnboundPlaceholderError

_PLACEHOLDER_RE = re.compile(r"\{([a-zA-Z_][a-zA-Z0-9_]*)\}")


def render_template(template: str, bindings: Mapping[str, str]) -> str:
    def _sub(match: re.Match) -> str:
        name = match.group(1)
        if name not in bindings:
            raise UnboundPlaceholderError(name)
        return str(bindings[name])

    return _PLACEHOLDER_RE.sub(_sub, template)


def placeholders(template: str) -> list[str]:
    return sorted({m.group(1) for m in _PLACEHOLDER_RE.finditer(template)})


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    path = resources.files("fedforge").joinpath(f"assets/prompts/{name}.txt")
    return path.read_text(encoding="utf-8")


def fill(name: str, **bindings: str) -> str:
    return render_template(load_template(name), bindings)
