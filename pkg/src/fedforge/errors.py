"""Shared exception hierarchy.

Every subsystem raises subclasses of FedforgeError so callers can catch the
whole family at the CLI/API boundary while tests pin down specific failures.
"""


class FedforgeError(Exception):
    """Base class for all errors raised by this package."""


class RegistryError(FedforgeError):
    """Benchmark registry document is malformed.

    Carries an optional location (entry index / field name / line) so the
    message points at the offending spot.
    """

    def __init__(self, message: str, *, location: str | None = None):
        self.location = location
        super().__init__(f"{message} (at {location})" if location else message)


class DuplicateIdError(RegistryError):
    pass


class UnboundPlaceholderError(FedforgeError):
    """A prompt template placeholder had no binding."""

    def __init__(self, placeholder: str):
        self.placeholder = placeholder
        super().__init__(f"unbound placeholder: {{{placeholder}}}")


class PreconditionError(FedforgeError):
    """An operation was invoked with its stated precondition violated."""


class GatewayError(FedforgeError):
    pass


class ScriptExhaustedError(GatewayError):
    """Scripted backend ran out of queued replies for a role."""


class TransportError(GatewayError):
    """Remote backend unreachable or persistently failing."""


class BudgetExceededError(GatewayError):
    """Request exceeds the configured token budget."""


class MalformedActionInputError(GatewayError):
    """Action line present but Action Input is not a flat string map."""


class UnknownToolError(GatewayError):
    def __init__(self, tool: str):
        self.tool = tool
        super().__init__(f"unknown tool: {tool}")


class MaxStepsExceededError(GatewayError):
    """Tool loop hit its step budget while the agent kept calling tools."""


class RetrievalError(FedforgeError):
    pass


class PlanningError(FedforgeError):
    pass


class MissingPlanMarkerError(PlanningError):
    """Planner reply does not contain the PLAN: marker line."""


class UnparsableSetupError(PlanningError):
    def __init__(self, missing: list[str]):
        self.missing = missing
        super().__init__(f"technical setup missing keys: {', '.join(missing)}")


class WrongStateError(PlanningError):
    def __init__(self, expected, actual):
        super().__init__(f"operation requires state {expected}, session is {actual}")


class CodegenError(FedforgeError):
    pass


class MissingModuleSectionError(CodegenError):
    def __init__(self, section: str):
        self.section = section
        super().__init__(f"blueprint output missing section: {section}")


class NoCodeBlockError(CodegenError):
    """Coder reply contained no fenced code block."""


class ModuleFailedError(CodegenError):
    def __init__(self, kind, attempts: int, feedback: str):
        self.kind = kind
        self.attempts = attempts
        self.feedback = feedback
        super().__init__(f"module {kind} failed after {attempts} attempts: {feedback}")


class MissingSourceError(CodegenError):
    pass


class EvalLoopError(FedforgeError):
    pass


class SandboxUnavailableError(EvalLoopError):
    """Environment probe failed; distinct from a failing simulation."""


class NoFileBlocksError(EvalLoopError):
    """Debugger reply contained no FILE: blocks."""


class UnknownFileNameError(EvalLoopError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"patch names a file outside the codebase: {name}")


class OrchestratorError(FedforgeError):
    pass


class UnknownQueryError(OrchestratorError):
    def __init__(self, query_id: str):
        self.query_id = query_id
        super().__init__(f"unknown query id: {query_id}")


class NotReadyError(OrchestratorError):
    """advance() called before the current phase reached a terminal sub-state."""


class EventLogCorruptError(OrchestratorError):
    def __init__(self, message: str, first_bad_seq: int):
        self.first_bad_seq = first_bad_seq
        super().__init__(f"{message} (first bad seq: {first_bad_seq})")
