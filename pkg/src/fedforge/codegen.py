"""Phase two: blueprint decomposition and supervised module implementation.

A supervisor agent decomposes the approved plan into per-module
implementation plans; coder/tester pairs then build each module in
dependency order (task first, client and strategy next, then server, with
the runner script last). The tester is deterministic: the source must parse
and define the module's required symbols, so CI never depends on an LLM's
opinion of correctness.
"""

from __future__ import annotations

import ast
import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources

from .errors import (
    MissingModuleSectionError,
    MissingSourceError,
    ModuleFailedError,
    NoCodeBlockError,
    PreconditionError,
)
from .gateway import AgentRole, ChatRequest, Gateway, Message
from .prompts import fill, load_template
from .sandbox import syntax_check

logger = logging.getLogger(__name__)

MAX_MODULE_ATTEMPTS = 3


class ModuleKind(str, Enum):
    TASK = "task"
    CLIENT = "client"
    STRATEGY = "strategy"
    SERVER = "server"
    RUNNER = "runner"

    @property
    def file_name(self) -> str:
        return _FILE_NAMES[self]

    @property
    def coder_role(self) -> AgentRole:
        return _CODER_ROLES[self]


_FILE_NAMES = {
    ModuleKind.TASK: "task.py",
    ModuleKind.CLIENT: "client_app.py",
    ModuleKind.STRATEGY: "strategy.py",
    ModuleKind.SERVER: "server_app.py",
    ModuleKind.RUNNER: "run.py",
}

_CODER_ROLES = {
    ModuleKind.TASK: AgentRole.CODER_TASK,
    ModuleKind.CLIENT: AgentRole.CODER_CLIENT,
    ModuleKind.STRATEGY: AgentRole.CODER_STRATEGY,
    ModuleKind.SERVER: AgentRole.CODER_SERVER,
    ModuleKind.RUNNER: AgentRole.ORCHESTRATOR,
}

CANONICAL_FILES = tuple(_FILE_NAMES[k] for k in
                        (ModuleKind.TASK, ModuleKind.CLIENT, ModuleKind.SERVER,
                         ModuleKind.STRATEGY, ModuleKind.RUNNER))

# Build order: server needs task + strategy stable; runner needs everything.
DEPENDENCIES: dict[ModuleKind, frozenset[ModuleKind]] = {
    ModuleKind.TASK: frozenset(),
    ModuleKind.CLIENT: frozenset({ModuleKind.TASK}),
    ModuleKind.STRATEGY: frozenset({ModuleKind.TASK}),
    ModuleKind.SERVER: frozenset({ModuleKind.TASK, ModuleKind.STRATEGY}),
    ModuleKind.RUNNER: frozenset({ModuleKind.TASK, ModuleKind.CLIENT,
                                  ModuleKind.STRATEGY, ModuleKind.SERVER}),
}


def required_symbols() -> dict:
    raw = resources.files("fedforge").joinpath("assets/required_symbols.json")
    return json.loads(raw.read_text(encoding="utf-8"))


class BuildStatus(str, Enum):
    BLOCKED = "Blocked"
    IN_PROGRESS = "InProgress"
    TESTING = "Testing"
    STABLE = "Stable"
    FAILED = "Failed"


@dataclass
class ModuleBuildState:
    kind: ModuleKind
    status: BuildStatus = BuildStatus.BLOCKED
    attempts: int = 0
    test_feedback: str = ""


@dataclass
class ModulePlan:
    implementation_plan: str
    configuration: dict[str, str] = field(default_factory=dict)


@dataclass
class Blueprint:
    module_plans: dict[ModuleKind, ModulePlan]
    interdependencies: list[str]
    raw_text: str = ""


@dataclass
class CodebaseVersion:
    """One integrated snapshot of the generated sources (C_i)."""

    iteration: int
    files: dict[str, str]
    provenance: dict[str, tuple[str, int]] = field(default_factory=dict)
    parent_iteration: int | None = None

    def __post_init__(self):
        unknown = sorted(set(self.files) - set(CANONICAL_FILES))
        if unknown:
            raise MissingSourceError(f"non-canonical file name(s): {', '.join(unknown)}")
        empty = sorted(name for name, body in self.files.items() if not body.strip())
        if empty:
            raise MissingSourceError(f"empty file(s): {', '.join(empty)}")


_SECTION_HEADS = {
    "task module implementation": ModuleKind.TASK,
    "client module implementation": ModuleKind.CLIENT,
    "server module implementation": ModuleKind.SERVER,
    "strategy module implementation": ModuleKind.STRATEGY,
}
_BLUEPRINT_HEAD_RE = re.compile(r"^\s*(?:\d+\.)?\s*([A-Za-z ]+?)\s*:?\s*$")
_CONFIG_PAIR_RE = re.compile(r"^\s*[-*]?\s*([A-Za-z ][A-Za-z0-9 %()/_-]*?)\s*:\s*(.+?)\s*$")


def parse_blueprint(text: str) -> Blueprint:
    """Parse the supervisor's five-section implementation plan."""
    current: ModuleKind | None = None
    in_interdeps = False
    in_config = False
    plans: dict[ModuleKind, list[str]] = {}
    configs: dict[ModuleKind, dict[str, str]] = {}
    interdeps: list[str] = []
    for line in text.splitlines():
        head = _BLUEPRINT_HEAD_RE.match(line)
        name = head.group(1).strip().lower() if head else ""
        if name in _SECTION_HEADS:
            current = _SECTION_HEADS[name]
            in_interdeps = False
            in_config = False
            plans.setdefault(current, [])
            configs.setdefault(current, {})
            continue
        if name.startswith("module interdependency"):
            in_interdeps = True
            current = None
            continue
        if in_interdeps:
            item = re.match(r"^\s*(?:\d+\.|[-*])\s*(.+?)\s*$", line)
            if item:
                interdeps.append(item.group(1))
            continue
        if current is None:
            continue
        stripped = line.strip()
        if stripped.upper().startswith("CONFIGURATION"):
            in_config = True
            continue
        if stripped.upper().startswith("IMPLEMENTATION PLAN"):
            in_config = False
            _, _, rest = stripped.partition(":")
            if rest.strip():
                plans[current].append(rest.strip())
            continue
        if in_config:
            # Pairs may share a line, separated by " / ".
            for piece in stripped.split(" / "):
                pair = _CONFIG_PAIR_RE.match(piece)
                if pair:
                    configs[current][pair.group(1).strip()] = pair.group(2).strip()
        elif stripped:
            plans[current].append(stripped)

    missing = [k for k in (ModuleKind.TASK, ModuleKind.CLIENT, ModuleKind.SERVER,
                           ModuleKind.STRATEGY) if k not in plans or not plans[k]]
    if missing:
        raise MissingModuleSectionError(f"{missing[0].value.title()} Module Implementation")
    if not interdeps:
        raise MissingModuleSectionError("Module Interdependency")
    return Blueprint(
        module_plans={k: ModulePlan("\n".join(v), configs.get(k, {})) for k, v in plans.items()},
        interdependencies=interdeps,
        raw_text=text,
    )


def schedule(blueprint: Blueprint, flat: bool = False) -> list[list[ModuleKind]]:
    """Execution waves honoring the dependency DAG.

    Flat mode (test-only) emits a single wave of all five modules.
    """
    if flat:
        return [[ModuleKind.TASK, ModuleKind.CLIENT, ModuleKind.STRATEGY,
                 ModuleKind.SERVER, ModuleKind.RUNNER]]
    return [
        [ModuleKind.TASK],
        [ModuleKind.CLIENT, ModuleKind.STRATEGY],
        [ModuleKind.SERVER],
        [ModuleKind.RUNNER],
    ]


_FENCE_RE = re.compile(r"^\s*```")


def extract_code_block(text: str) -> str:
    """Contents of the first fenced code block, fences stripped exactly."""
    lines = text.splitlines()
    blocks: list[list[str]] = []
    inside = False
    for line in lines:
        if _FENCE_RE.match(line):
            if inside:
                inside = False
            else:
                inside = True
                blocks.append([])
            continue
        if inside:
            blocks[-1].append(line)
    if not blocks:
        raise NoCodeBlockError("reply contains no fenced code block")
    if len(blocks) > 1:
        logger.info("reply contained %d code blocks; using the first", len(blocks))
    return "\n".join(blocks[0])


def _defined_names(tree: ast.AST) -> set[str]:
    names = set()
    for node in ast.walk(tree):
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
            names.add(node.name)
    return names


def _imported_modules(tree: ast.AST) -> set[str]:
    mods = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.Import):
            mods.update(alias.name.split(".")[0] for alias in node.names)
        elif isinstance(node, ast.ImportFrom) and node.module:
            mods.add(node.module.split(".")[0])
    return mods


def tester_verify(kind: ModuleKind, source: str) -> tuple[bool, str]:
    """Deterministic module verification: grammar plus required symbols."""
    ok, diagnostic = syntax_check(source)
    if not ok:
        return False, f"syntax check failed: {diagnostic}"
    tree = ast.parse(source)
    table = required_symbols()
    missing = sorted(set(table[kind.value]) - _defined_names(tree))
    if missing:
        return False, f"missing required definition(s): {', '.join(missing)}"
    if kind is ModuleKind.RUNNER:
        absent = sorted(set(table["runner_imports"]) - _imported_modules(tree))
        if absent:
            return False, f"runner does not import module(s): {', '.join(absent)}"
    return True, "ok"


def _module_task_description(kind: ModuleKind, blueprint: Blueprint,
                             sources: dict[ModuleKind, str]) -> str:
    if kind is ModuleKind.RUNNER:
        overview = "\n".join(f"{i}. {dep}" for i, dep in enumerate(blueprint.interdependencies, 1))
        parts = [f"Implementation Overview:\n{overview}", "Available module sources:"]
        for dep in (ModuleKind.TASK, ModuleKind.CLIENT, ModuleKind.SERVER, ModuleKind.STRATEGY):
            parts.append(f"--- {dep.file_name} ---\n{sources.get(dep, '')}")
        return "\n\n".join(parts)
    plan = blueprint.module_plans[kind]
    config = "\n".join(f"- {k}: {v}" for k, v in plan.configuration.items())
    text = plan.implementation_plan
    if config:
        text += f"\n\nConfiguration:\n{config}"
    if kind is ModuleKind.SERVER:
        for dep in (ModuleKind.TASK, ModuleKind.STRATEGY):
            text += f"\n\n--- {dep.file_name} ---\n{sources.get(dep, '')}"
    return text


class CodegenEngine:
    """Drives coder/tester pairs over the schedule and integrates the result."""

    def __init__(self, gateway: Gateway, max_module_attempts: int = MAX_MODULE_ATTEMPTS):
        self.gateway = gateway
        self.max_module_attempts = max_module_attempts

    def decompose(self, plan_text: str, tools=None, max_tool_steps: int = 8) -> Blueprint:
        request = ChatRequest(
            agent_role=AgentRole.SUPERVISOR,
            system_prompt=fill("supervisor", research_plan=plan_text,
                               tool_names=", ".join(sorted(tools)) if tools else "none"),
            messages=[Message("user", "Produce the implementation plan now.")],
        )
        if tools:
            reply, _ = self.gateway.run_tool_loop(request, tools, max_tool_steps)
        else:
            reply = self.gateway.complete(request)
        return parse_blueprint(reply)

    def build_module(self, kind: ModuleKind, blueprint: Blueprint,
                     sources: dict[ModuleKind, str]) -> tuple[str, ModuleBuildState]:
        unstable = DEPENDENCIES[kind] - set(sources)
        if unstable:
            raise PreconditionError(
                f"{kind.value} blocked on unstable dependencies: "
                f"{', '.join(sorted(d.value for d in unstable))}"
            )
        state = ModuleBuildState(kind, BuildStatus.IN_PROGRESS)
        task_text = _module_task_description(kind, blueprint, sources)
        source = ""
        for attempt in range(1, self.max_module_attempts + 1):
            state.attempts = attempt
            if attempt == 1:
                user = fill("coder_user_impl", task=task_text)
            else:
                user = fill("coder_user_debug", task=task_text, codebase=source,
                            test_feedback=state.test_feedback)
            reply = self.gateway.complete(
                ChatRequest(
                    agent_role=kind.coder_role,
                    system_prompt=load_template(f"coder_{kind.value}"),
                    messages=[Message("user", user)],
                )
            )
            try:
                source = extract_code_block(reply)
            except NoCodeBlockError:
                state.test_feedback = "reply contained no fenced code block"
                continue
            state.status = BuildStatus.TESTING
            ok, feedback = tester_verify(kind, source)
            state.test_feedback = feedback
            if ok:
                state.status = BuildStatus.STABLE
                return source, state
            state.status = BuildStatus.IN_PROGRESS
        state.status = BuildStatus.FAILED
        raise ModuleFailedError(kind.value, state.attempts, state.test_feedback)

    def run_schedule(self, blueprint: Blueprint, flat: bool = False,
                     on_module=None) -> dict[ModuleKind, tuple[str, ModuleBuildState]]:
        """Build every wave in order.

        Modules inside a wave are independent; they are executed in a fixed
        order so scripted runs replay byte-for-byte.
        """
        results: dict[ModuleKind, tuple[str, ModuleBuildState]] = {}
        sources: dict[ModuleKind, str] = {}
        for wave in schedule(blueprint, flat=flat):
            for kind in wave:
                if on_module:
                    on_module(kind, "started")
                source, state = self.build_module(kind, blueprint, sources)
                sources[kind] = source
                results[kind] = (source, state)
                if on_module:
                    on_module(kind, "stable", state)
        return results


def integrate(sources: dict[ModuleKind, str],
              provenance: dict[ModuleKind, tuple[str, int]] | None = None) -> CodebaseVersion:
    """Assemble iteration 0 from the five stable module sources."""
    missing = sorted(k.value for k in ModuleKind if k not in sources)
    if missing:
        raise MissingSourceError(f"missing module source(s): {', '.join(missing)}")
    files = {kind.file_name: sources[kind] for kind in ModuleKind}
    prov = {
        kind.file_name: (provenance or {}).get(kind, (kind.coder_role.value, 1))
        for kind in ModuleKind
    }
    return CodebaseVersion(iteration=0, files=files, provenance=prov, parent_iteration=None)
