"""Phase one: draft a research plan, self-critique it, hold for human approval.

The session is a small state machine:

    Drafting -> Reflecting -> {Drafting, AwaitingUser}
    AwaitingUser -> {Approved, Revising, Abandoned}
    Revising -> Reflecting (via a fresh draft)

Reflection auto-revises at most max_reflection_cycles times per version;
after that the (possibly still incomplete) plan is surfaced to the human,
who remains the final gate.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

from .bench import ExperimentConfig, TaskQuery, to_planning_prompt_context
from .errors import (
    MissingPlanMarkerError,
    UnparsableSetupError,
    WrongStateError,
)
from .gateway import AgentRole, ChatRequest, Gateway, Message
from .prompts import fill

MAX_REFLECTION_CYCLES = 3

SETUP_KEYS = ("model", "data", "num_clients", "split_method", "local_epochs", "criteria", "privacy")

_SETUP_LABELS = {
    "model architecture": "model",
    "model": "model",
    "datasets": "data",
    "dataset": "data",
    "data": "data",
    "client configuration": "num_clients",
    "number of clients": "num_clients",
    "clients": "num_clients",
    "data partition strategy": "split_method",
    "partition strategy": "split_method",
    "split method": "split_method",
    "local training epochs": "local_epochs",
    "local epochs": "local_epochs",
    "evaluation criteria": "criteria",
    "criteria": "criteria",
    "metrics": "criteria",
    "privacy mechanisms": "privacy",
    "privacy": "privacy",
}

_SETUP_RENDER_LABELS = {
    "model": "Model Architecture",
    "data": "Datasets",
    "num_clients": "Client Configuration",
    "split_method": "Data Partition Strategy",
    "local_epochs": "Local Training Epochs",
    "criteria": "Evaluation Criteria",
    "privacy": "Privacy Mechanisms",
}

_SECTION_NAMES = {"summary": "summary", "challenges": "challenges",
                  "tasks": "tasks", "technical setup": "setup"}

_NUMBERED_RE = re.compile(r"^\s*(\d+)\.\s*(.+?)\s*$")
# Section headers sit at column 0; indented numbered lines are task items,
# which keeps item text that happens to spell a section name unambiguous.
_HEADER_RE = re.compile(r"^(\d+)\.\s*(.+?)\s*$")
_SETUP_LINE_RE = re.compile(r"^\s*[-*]?\s*([A-Za-z ][A-Za-z ]*?)\s*:\s*(.*)$")


class SessionState(str, Enum):
    DRAFTING = "Drafting"
    REFLECTING = "Reflecting"
    AWAITING_USER = "AwaitingUser"
    REVISING = "Revising"
    APPROVED = "Approved"
    ABANDONED = "Abandoned"


# The only legal edges; random-walk property tests check nothing else is
# ever taken.
TRANSITIONS: dict[SessionState, set[SessionState]] = {
    # Drafting/Revising may also route straight to AwaitingUser when the
    # planner asks a clarification question instead of emitting a plan.
    SessionState.DRAFTING: {SessionState.REFLECTING, SessionState.AWAITING_USER},
    SessionState.REFLECTING: {SessionState.DRAFTING, SessionState.AWAITING_USER},
    SessionState.AWAITING_USER: {SessionState.APPROVED, SessionState.REVISING,
                                 SessionState.ABANDONED},
    SessionState.REVISING: {SessionState.REFLECTING, SessionState.AWAITING_USER},
    SessionState.APPROVED: set(),
    SessionState.ABANDONED: set(),
}


class VerdictStatus(str, Enum):
    COMPLETE = "COMPLETE"
    INCOMPLETE = "INCOMPLETE"


@dataclass
class ReflectionVerdict:
    status: VerdictStatus
    justification: str


@dataclass
class ResearchPlan:
    raw_text: str
    summary: str
    challenges: str
    tasks: list[str]
    technical_setup: dict[str, str]
    version: int = 0

    @classmethod
    def from_fields(cls, summary: str, challenges: str, tasks: list[str],
                    technical_setup: dict[str, str], version: int = 0) -> "ResearchPlan":
        setup = dict(technical_setup)
        setup.setdefault("privacy", "None")
        plan = cls(raw_text="", summary=summary, challenges=challenges,
                   tasks=list(tasks), technical_setup=setup, version=version)
        plan.raw_text = render_plan(plan)
        return plan


@dataclass
class PlanningSession:
    query: TaskQuery
    config: ExperimentConfig
    state: SessionState = SessionState.DRAFTING
    plan: ResearchPlan | None = None
    verdicts: list[ReflectionVerdict] = field(default_factory=list)
    reflection_cycles: int = 0
    user_feedback: list[str] = field(default_factory=list)
    messages: list[Message] = field(default_factory=list)
    clarification: str = ""
    approval_note: str = ""
    approval_override: bool = False
    max_reflection_cycles: int = MAX_REFLECTION_CYCLES

    def _move(self, new_state: SessionState) -> None:
        if new_state is not self.state and new_state not in TRANSITIONS[self.state]:
            raise WrongStateError(f"one of {TRANSITIONS[self.state]}", self.state)
        self.state = new_state


def parse_plan(text: str, version: int = 0) -> ResearchPlan:
    """Line-oriented parse of the PLAN output format.

    Numbered headers open the four known sections; numbered lines inside
    Tasks are items; unknown trailing sections stay in raw_text only.
    """
    lines = text.splitlines()
    try:
        start = next(i for i, ln in enumerate(lines) if ln.strip() == "PLAN:")
    except StopIteration:
        raise MissingPlanMarkerError("reply has no PLAN: marker line") from None

    section = None
    summary: list[str] = []
    challenges: list[str] = []
    tasks: list[str] = []
    setup: dict[str, str] = {}
    for line in lines[start + 1:]:
        numbered = _HEADER_RE.match(line)
        if numbered:
            head, _, remainder = numbered.group(2).partition(":")
            known = _SECTION_NAMES.get(head.strip().lower())
            if known:
                section = known
                remainder = remainder.strip()
                if remainder:
                    if section == "summary":
                        summary.append(remainder)
                    elif section == "challenges":
                        challenges.append(remainder)
                continue
        if section == "summary" and line.strip():
            summary.append(line.strip())
        elif section == "challenges" and line.strip():
            challenges.append(line.strip())
        elif section == "tasks":
            item = _NUMBERED_RE.match(line)
            if item:
                tasks.append(item.group(2))
            elif line.strip().startswith(("-", "*")):
                tasks.append(line.strip().lstrip("-* "))
        elif section == "setup":
            setup_line = _SETUP_LINE_RE.match(line)
            if setup_line:
                key = _SETUP_LABELS.get(setup_line.group(1).strip().lower())
                if key:
                    setup[key] = setup_line.group(2).strip()

    setup.setdefault("privacy", "None")
    missing = [k for k in SETUP_KEYS if k not in setup]
    if missing:
        raise UnparsableSetupError(missing)
    return ResearchPlan(
        raw_text=text,
        summary="\n".join(summary),
        challenges="\n".join(challenges),
        tasks=tasks,
        technical_setup=setup,
        version=version,
    )


def render_plan(plan: ResearchPlan) -> str:
    """Canonical serialization; parse(render(p)) reproduces p's fields."""
    out = ["PLAN:", f"1. Summary: {plan.summary}", f"2. Challenges: {plan.challenges}", "3. Tasks:"]
    for i, task in enumerate(plan.tasks, 1):
        out.append(f"   {i}. {task}")
    out.append("4. Technical Setup:")
    for key in SETUP_KEYS:
        out.append(f"   - {_SETUP_RENDER_LABELS[key]}: {plan.technical_setup.get(key, '')}")
    return "\n".join(out) + "\n"


def rule_check_plan(plan: ResearchPlan) -> list[str]:
    """Deterministic completeness guard (also the test oracle for reflect)."""
    violations = []
    if not plan.summary.strip():
        violations.append("missing-summary")
    if not plan.challenges.strip():
        violations.append("missing-challenges")
    if not plan.tasks:
        violations.append("missing-tasks")
    for key in SETUP_KEYS:
        if not plan.technical_setup.get(key, "").strip():
            violations.append(f"missing-setup-{key}")
    return violations


def parse_verdict(text: str) -> ReflectionVerdict:
    stripped = text.lstrip()
    if stripped.startswith("INCOMPLETE:"):
        return ReflectionVerdict(VerdictStatus.INCOMPLETE,
                                 stripped[len("INCOMPLETE:"):].strip())
    if stripped.startswith("COMPLETE:"):
        return ReflectionVerdict(VerdictStatus.COMPLETE, stripped[len("COMPLETE:"):].strip())
    return ReflectionVerdict(VerdictStatus.INCOMPLETE, "unparsable")


class PlanningEngine:
    """Runs the planner and reflector against a gateway plus retrieval tools."""

    def __init__(self, gateway: Gateway, tools, max_tool_steps: int = 8):
        self.gateway = gateway
        self.tools = tools
        self.max_tool_steps = max_tool_steps

    def draft_plan(self, session: PlanningSession) -> ResearchPlan | None:
        """Draft (or re-draft) the plan. Returns None when the planner asked a
        clarification question instead of producing a plan."""
        if session.state not in (SessionState.DRAFTING, SessionState.REVISING):
            raise WrongStateError("Drafting or Revising", session.state)
        if not session.messages:
            context = to_planning_prompt_context(session.query, session.config)
            session.messages.append(Message("user", context))
        request = ChatRequest(
            agent_role=AgentRole.PLANNER,
            system_prompt=fill("planner", tool_names=", ".join(sorted(self.tools))),
            messages=session.messages,
        )
        text, _calls = self.gateway.run_tool_loop(request, self.tools, self.max_tool_steps)
        session.messages.append(Message("assistant", text))
        if "PLAN:" not in text:
            if text.rstrip().endswith("?"):
                # Clarification request: surface to the human instead of erroring.
                session.clarification = text
                session._move(SessionState.AWAITING_USER)
                return None
            raise MissingPlanMarkerError("planner reply has no PLAN: marker")
        version = (session.plan.version if session.plan else 0) + 1
        plan = parse_plan(text, version=version)
        session.plan = plan
        session.clarification = ""
        session._move(SessionState.REFLECTING)
        return plan

    def reflect(self, session: PlanningSession) -> ReflectionVerdict:
        if session.state is not SessionState.REFLECTING:
            raise WrongStateError(SessionState.REFLECTING, session.state)
        assert session.plan is not None
        history = "\n".join(f"{m.role}: {m.content}" for m in session.messages[-6:])
        request = ChatRequest(
            agent_role=AgentRole.REFLECTOR,
            system_prompt=fill(
                "reflector",
                user_query=session.query.raw_query,
                current_plan=session.plan.raw_text,
                message_history=history,
            ),
            messages=[Message("user", "Respond now, starting with COMPLETE: or INCOMPLETE:.")],
        )
        reply = self.gateway.complete(request)
        verdict = parse_verdict(reply)
        session.verdicts.append(verdict)
        if verdict.status is VerdictStatus.COMPLETE:
            session._move(SessionState.AWAITING_USER)
        else:
            session.reflection_cycles += 1
            if session.reflection_cycles >= session.max_reflection_cycles:
                session._move(SessionState.AWAITING_USER)
            else:
                session.messages.append(Message("user", verdict.justification or reply))
                session._move(SessionState.DRAFTING)
        return verdict


def submit_user_decision(session: PlanningSession, action: str, feedback: str = "") -> PlanningSession:
    """Apply an approve / revise / abandon decision at the human gate."""
    if session.state is not SessionState.AWAITING_USER:
        raise WrongStateError(SessionState.AWAITING_USER, session.state)
    if action == "approve":
        session.approval_note = feedback
        session.approval_override = not any(
            v.status is VerdictStatus.COMPLETE for v in session.verdicts
        )
        session._move(SessionState.APPROVED)
    elif action == "revise":
        session.user_feedback.append(feedback)
        session.messages.append(Message("user", feedback))
        session.reflection_cycles = 0
        session._move(SessionState.REVISING)
    elif action == "abandon":
        session._move(SessionState.ABANDONED)
    else:
        raise ValueError(f"unknown decision action: {action}")
    return session
