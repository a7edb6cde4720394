"""fedforge: multi-agent synthesis of federated-learning codebases.

Pipeline: a structured task query is planned (with self-reflection and a
human approval gate), decomposed and implemented module by module by
coder/tester agent pairs, then certified through a closed
simulate / diagnose / repair loop - all LLM traffic behind a pluggable
backend so the whole thing runs deterministically offline.
"""

__version__ = "0.1.0"

from .bench import (  # noqa: F401
    BenchmarkRegistry,
    ExperimentConfig,
    TaskQuery,
    load_registry,
    load_shipped_registry,
    validate_template,
)
from .codegen import Blueprint, CodebaseVersion, ModuleKind  # noqa: F401
from .evaluation import (  # noqa: F401
    DiagnosisReport,
    DiagnosisRuleset,
    PatchSet,
    SimulationLog,
    diagnose,
    refine_until_certified,
)
from .gateway import (  # noqa: F401
    AgentRole,
    BackendDescriptor,
    ChatRequest,
    Gateway,
    ScriptedBackend,
    parse_tool_call,
)
from .orchestrator import RunController, RunStore, build_scripted_controller  # noqa: F401
from .planning import PlanningSession, ResearchPlan, SessionState  # noqa: F401
from .retrieval import CorpusIndex, build_default_index  # noqa: F401
