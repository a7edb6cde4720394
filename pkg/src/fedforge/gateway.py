"""Chat-completion boundary shared by every agent.

All agent traffic goes through a Gateway wrapping one backend:

* ScriptedBackend - deterministic queues of canned replies keyed by
  (agent role, ordinal); the workhorse for offline runs and tests.
* RemoteHTTPBackend - generic JSON chat-completions endpoint with retry,
  exponential backoff, and a token-bucket rate limit. No vendor SDKs.

The gateway also implements the Thought / Action / Action Input / Observation
tool protocol the planning and supervision prompts use.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping

from .errors import (
    BudgetExceededError,
    MalformedActionInputError,
    MaxStepsExceededError,
    ScriptExhaustedError,
    TransportError,
    UnknownToolError,
)
from .util import SystemClock, append_jsonl, estimate_tokens, iso_ts

logger = logging.getLogger(__name__)

ENDPOINT_ENV = "FEDFORGE_LLM_ENDPOINT"
API_KEY_ENV = "FEDFORGE_LLM_KEY"

DEFAULT_MAX_INPUT_TOKENS = 100_000


class AgentRole(str, Enum):
    PLANNER = "planner"
    REFLECTOR = "reflector"
    SUPERVISOR = "supervisor"
    CODER_TASK = "coder_task"
    CODER_CLIENT = "coder_client"
    CODER_SERVER = "coder_server"
    CODER_STRATEGY = "coder_strategy"
    ORCHESTRATOR = "orchestrator"  # writes the runner script
    TESTER_TASK = "tester_task"
    TESTER_CLIENT = "tester_client"
    TESTER_SERVER = "tester_server"
    TESTER_STRATEGY = "tester_strategy"
    TESTER_RUNNER = "tester_runner"
    EVALUATOR = "evaluator"
    DEBUGGER = "debugger"


# Per-role sampling temperature; deliberately conservative defaults, all
# overridable by callers building ChatRequests.
DEFAULT_TEMPERATURES: dict[AgentRole, float] = {role: 0.0 for role in AgentRole}


@dataclass
class Message:
    role: str  # "user" | "assistant" | "tool"
    content: str


@dataclass
class ChatRequest:
    agent_role: AgentRole
    system_prompt: str
    messages: list[Message]
    temperature: float = 0.0
    max_output_tokens: int = 4096

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.messages[0].role not in ("user", "tool"):
            raise ValueError("first message must be user or tool")
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError("temperature must be in [0, 1]")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")


@dataclass
class ToolCall:
    thought: str
    action: str
    action_input: dict[str, str]
    observation: str = ""


class BackendKind(str, Enum):
    SCRIPTED = "Scripted"
    REMOTE_HTTP = "RemoteHTTP"


@dataclass(frozen=True)
class BackendDescriptor:
    kind: BackendKind
    model_name: str = "offline"
    endpoint: str = ""
    per_minute_request_cap: int = 60
    max_retries: int = 3

    def __post_init__(self):
        if self.per_minute_request_cap < 1:
            raise ValueError("per_minute_request_cap must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


class ScriptedBackend:
    """Replays canned replies; reply i goes to the i-th call for that role."""

    def __init__(self, scripts: Mapping[AgentRole | str, list[str]] | None = None):
        self._queues: dict[str, list[str]] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._served: dict[str, int] = {}
        for role, replies in (scripts or {}).items():
            self.queue(role, *replies)

    @classmethod
    def from_dir(cls, path: str | Path) -> "ScriptedBackend":
        """Load transcripts: one subdirectory per role, sorted *.txt files."""
        backend = cls()
        root = Path(path)
        for role_dir in sorted(p for p in root.iterdir() if p.is_dir()):
            replies = [f.read_text(encoding="utf-8") for f in sorted(role_dir.glob("*.txt"))]
            if replies:
                backend.queue(role_dir.name, *replies)
        return backend

    @staticmethod
    def _key(role: AgentRole | str) -> str:
        return role.value if isinstance(role, AgentRole) else str(role)

    def queue(self, role: AgentRole | str, *replies: str) -> None:
        key = self._key(role)
        self._queues.setdefault(key, []).extend(replies)
        self._locks.setdefault(key, threading.Lock())
        self._served.setdefault(key, 0)

    def remaining(self, role: AgentRole | str) -> int:
        return len(self._queues.get(self._key(role), []))

    def complete(self, request: ChatRequest) -> str:
        key = self._key(request.agent_role)
        lock = self._locks.setdefault(key, threading.Lock())
        with lock:
            queue = self._queues.get(key, [])
            if not queue:
                raise ScriptExhaustedError(
                    f"scripted backend has no reply for role={key} "
                    f"(served {self._served.get(key, 0)} so far)"
                )
            self._served[key] = self._served.get(key, 0) + 1
            return queue.pop(0)


class RateLimiter:
    """Sliding-window request limiter: at most `per_minute_cap` acquisitions
    inside any 60-second window.

    A continuously-refilled token bucket would admit up to twice the cap in a
    sliding window (full burst plus a window of refill), so the cap is
    enforced against the actual timestamps instead.
    """

    WINDOW_S = 60.0

    def __init__(self, per_minute_cap: int, clock=None):
        self._cap = per_minute_cap
        self._clock = clock or SystemClock()
        self._stamps: list[float] = []
        self._lock = threading.Lock()

    def _now(self) -> float:
        return self._clock.now().timestamp()

    def acquire(self) -> None:
        with self._lock:
            now = self._now()
            self._stamps = [t for t in self._stamps if now - t < self.WINDOW_S]
            if len(self._stamps) >= self._cap:
                wait = self.WINDOW_S - (now - self._stamps[0])
                if wait > 0:
                    self._clock.sleep(wait)
                now = self._now()
                self._stamps = [t for t in self._stamps if now - t < self.WINDOW_S]
            self._stamps.append(now)


def _urllib_transport(url: str, payload: dict, headers: dict) -> tuple[int, dict]:
    data = json.dumps(payload).encode("utf-8")
    req = urllib.request.Request(url, data=data, headers=headers, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=120) as resp:
            return resp.status, json.loads(resp.read().decode("utf-8"))
    except urllib.error.HTTPError as exc:
        return exc.code, {}
    except urllib.error.URLError as exc:
        raise TransportError(str(exc)) from exc


class RemoteHTTPBackend:
    """Generic chat-completions endpoint. Retries transient failures with
    exponential backoff; request rate is capped by a token bucket."""

    RETRYABLE_STATUSES = {408, 429, 500, 502, 503, 504}

    def __init__(self, descriptor: BackendDescriptor, transport=None, clock=None):
        self.descriptor = descriptor
        self._transport = transport or _urllib_transport
        self._clock = clock or SystemClock()
        self._bucket = RateLimiter(descriptor.per_minute_request_cap, clock=self._clock)
        self.attempts_last_call = 0

    def _endpoint(self) -> str:
        endpoint = self.descriptor.endpoint or os.environ.get(ENDPOINT_ENV, "")
        if not endpoint:
            raise TransportError(f"no endpoint configured (set {ENDPOINT_ENV})")
        return endpoint

    def complete(self, request: ChatRequest) -> str:
        payload = {
            "model": self.descriptor.model_name,
            "messages": [{"role": "system", "content": request.system_prompt}]
            + [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        url = self._endpoint()
        last_error: str = ""
        for attempt in range(self.descriptor.max_retries + 1):
            self._bucket.acquire()
            self.attempts_last_call = attempt + 1
            try:
                status, body = self._transport(url, payload, headers)
            except TransportError as exc:
                last_error = str(exc)
                status, body = None, {}
            else:
                if status == 200:
                    try:
                        return body["choices"][0]["message"]["content"]
                    except (KeyError, IndexError, TypeError) as exc:
                        raise TransportError(f"malformed completion body: {body!r}") from exc
                if status not in self.RETRYABLE_STATUSES:
                    raise TransportError(f"backend returned status {status}")
                last_error = f"status {status}"
            if attempt < self.descriptor.max_retries:
                self._clock.sleep(0.5 * (2**attempt))
        raise TransportError(
            f"gave up after {self.descriptor.max_retries + 1} attempts: {last_error}"
        )


class Gateway:
    """Front door for agent calls: budget check, backend dispatch, call log."""

    def __init__(self, backend, call_log: Path | None = None, clock=None,
                 max_input_tokens: int = DEFAULT_MAX_INPUT_TOKENS):
        self.backend = backend
        self.call_log = Path(call_log) if call_log else None
        self._clock = clock or SystemClock()
        self.max_input_tokens = max_input_tokens

    def complete(self, request: ChatRequest) -> str:
        tokens_in = estimate_tokens(request.system_prompt) + sum(
            estimate_tokens(m.content) for m in request.messages
        )
        if tokens_in > self.max_input_tokens:
            raise BudgetExceededError(
                f"request is ~{tokens_in} tokens, budget is {self.max_input_tokens}"
            )
        started = time.monotonic()
        text = self.backend.complete(request)
        latency_ms = int((time.monotonic() - started) * 1000)
        if self.call_log:
            append_jsonl(
                self.call_log,
                {
                    "ts": iso_ts(self._clock.now()),
                    "agent_role": request.agent_role.value,
                    "tokens_in": tokens_in,
                    "tokens_out": estimate_tokens(text),
                    "latency_ms": latency_ms,
                    "attempts": getattr(self.backend, "attempts_last_call", 1),
                },
            )
        return text

    def run_tool_loop(
        self,
        request: ChatRequest,
        tools: Mapping[str, Callable[[dict[str, str]], str]],
        max_steps: int = 8,
    ) -> tuple[str, list[ToolCall]]:
        """Alternate complete / parse / execute until the agent stops calling
        tools. Each observation is appended verbatim as a tool message."""
        calls: list[ToolCall] = []
        while True:
            text = self.complete(request)
            tool_call = parse_tool_call(text)
            if tool_call is None:
                return text, calls
            if tool_call.action not in tools:
                raise UnknownToolError(tool_call.action)
            if len(calls) >= max_steps:
                raise MaxStepsExceededError(
                    f"tool loop exceeded {max_steps} steps for {request.agent_role.value}"
                )
            tool_call.observation = tools[tool_call.action](tool_call.action_input)
            calls.append(tool_call)
            request.messages.append(Message("assistant", text))
            request.messages.append(Message("tool", tool_call.observation))


_ACTION_RE = re.compile(r"^\s*Action:\s*(.+?)\s*$", re.MULTILINE)
_THOUGHT_RE = re.compile(r"^\s*Thought:\s*(.*?)\s*$", re.MULTILINE)
_ACTION_INPUT_RE = re.compile(r"^\s*Action Input:\s*", re.MULTILINE)


def parse_tool_call(text: str) -> ToolCall | None:
    """Extract the first Thought / Action / Action Input triple.

    Returns None when the text has no Action line (a plain answer). An Action
    line without a flat string-to-string JSON object after "Action Input:"
    raises MalformedActionInputError; nested structures are rejected.
    """
    action_match = _ACTION_RE.search(text)
    if not action_match:
        return None
    action = action_match.group(1).strip().strip("[]").strip()
    thought = ""
    for thought_match in _THOUGHT_RE.finditer(text, 0, action_match.start()):
        thought = thought_match.group(1)
    input_match = _ACTION_INPUT_RE.search(text, action_match.end())
    if not input_match:
        raise MalformedActionInputError("Action present but no Action Input line")
    brace = text.find("{", input_match.end())
    if brace < 0:
        raise MalformedActionInputError("Action Input is not a JSON object")
    try:
        obj, _ = json.JSONDecoder().raw_decode(text[brace:])
    except json.JSONDecodeError as exc:
        raise MalformedActionInputError(f"Action Input is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in obj.items()
    ):
        raise MalformedActionInputError("Action Input must be a flat string-to-string object")
    return ToolCall(thought=thought, action=action, action_input=obj)
