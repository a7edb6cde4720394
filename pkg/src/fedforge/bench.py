"""Benchmark registry: structured FL task queries and per-task experiment configs.

The registry ships as a human-editable YAML document (assets/benchmark/
ourbench.registry). Each entry pairs a TaskQuery (the natural-language
problem statement plus its structured fields) with an ExperimentConfig
(rounds, local epochs, partitioning, splits). Queries follow a three-clause
template: a deployment clause ("I need to deploy ..."), a data clause
("Each client holds ..."), and a request clause ("Help me build ...").
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

import yaml

from .errors import DuplicateIdError, PreconditionError, RegistryError

DEFAULT_ROUNDS = 100
DEFAULT_LOCAL_EPOCHS = 5
DEFAULT_SPLIT = (0.8, 0.2)
DEFAULT_SPLIT_SEED = 42

DEPLOY_MARKER = "I need to deploy"
REQUEST_MARKER = "Help me build"
_DATA_CLAUSE_RE = re.compile(r"(^|[.!?]\s+)Each\s+\w+", re.MULTILINE)


class ResearchArea(str, Enum):
    HETEROGENEOUS = "HeterogeneousFL"
    COMMUNICATION_EFFICIENT = "CommunicationEfficient"
    PERSONALIZED = "Personalized"
    ACTIVE_LEARNING = "FederatedActiveLearning"
    CONTINUAL_LEARNING = "FederatedContinualLearning"


class ProblemSymbol(str, Enum):
    QUANTITY_SKEW = "QuantitySkew"
    FEATURE_SKEW = "FeatureSkew"
    LABEL_SKEW = "LabelSkew"
    DISTRIBUTION_SKEW = "DistributionSkew"
    COMMUNICATION_OVERHEAD = "CommunicationOverhead"
    CATASTROPHIC_FORGETTING = "CatastrophicForgetting"
    RESOURCE_CONSTRAINT = "ResourceConstraint"


class Metric(str, Enum):
    GLOBAL_TEST_ACCURACY = "GlobalTestAccuracy"
    AVG_CLIENT_ACCURACY = "AvgClientAccuracy"
    AVG_TASK_ACCURACY = "AvgTaskAccuracy"


class Scenario(str, Enum):
    CROSS_SILO = "CrossSilo"
    CROSS_DEVICE = "CrossDevice"


class Partitioner(str, Enum):
    IID = "IID"
    DIRICHLET = "Dirichlet"
    EXPONENTIAL = "Exponential"


@dataclass(frozen=True)
class TaskQuery:
    id: str
    research_area: ResearchArea
    challenge: str
    problem_symbols: frozenset[ProblemSymbol]
    raw_query: str
    application: str
    num_clients: int
    dataset: str
    model: str
    metric: Metric


@dataclass(frozen=True)
class ExperimentConfig:
    communication_rounds: int = DEFAULT_ROUNDS
    local_epochs: int = DEFAULT_LOCAL_EPOCHS
    scenario: Scenario = Scenario.CROSS_DEVICE
    partitioner: Partitioner = Partitioner.DIRICHLET
    dirichlet_alpha: float | None = 0.5
    train_test_split: tuple[float, float] = DEFAULT_SPLIT
    split_seed: int = DEFAULT_SPLIT_SEED

    def __post_init__(self):
        if self.communication_rounds < 1:
            raise RegistryError("communication_rounds must be positive")
        if self.local_epochs < 1:
            raise RegistryError("local_epochs must be positive")
        if self.partitioner is Partitioner.DIRICHLET:
            if self.dirichlet_alpha is None or self.dirichlet_alpha <= 0:
                raise RegistryError("Dirichlet partitioner requires alpha > 0")
        if abs(sum(self.train_test_split) - 1.0) > 1e-9:
            raise RegistryError("train/test split fractions must sum to 1")


@dataclass(frozen=True)
class BenchmarkEntry:
    query: TaskQuery
    config: ExperimentConfig
    comment: str = ""


@dataclass
class BenchmarkRegistry:
    entries: list[BenchmarkEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, query_id: str) -> BenchmarkEntry:
        for entry in self.entries:
            if entry.query.id == query_id:
                return entry
        raise KeyError(query_id)

    def ids(self) -> list[str]:
        return [e.query.id for e in self.entries]

    def area_counts(self) -> dict[ResearchArea, int]:
        counts: dict[ResearchArea, int] = {}
        for entry in self.entries:
            counts[entry.query.research_area] = counts.get(entry.query.research_area, 0) + 1
        return counts


_QUERY_FIELDS = {
    "id", "research_area", "challenge", "problem_symbols", "raw_query",
    "application", "num_clients", "dataset", "model", "metric",
}
_CONFIG_FIELDS = {
    "communication_rounds", "local_epochs", "scenario", "partitioner",
    "dirichlet_alpha", "train_test_split", "split_seed",
}
_ENTRY_FIELDS = {"query", "config", "comment"}


def _reject_unknown(mapping: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise RegistryError(f"unknown field(s): {', '.join(unknown)}", location=where)


def _parse_query(raw: dict, where: str) -> TaskQuery:
    _reject_unknown(raw, _QUERY_FIELDS, where)
    missing = sorted(_QUERY_FIELDS - set(raw))
    if missing:
        raise RegistryError(f"missing field(s): {', '.join(missing)}", location=where)
    try:
        query = TaskQuery(
            id=str(raw["id"]),
            research_area=ResearchArea(raw["research_area"]),
            challenge=str(raw["challenge"]),
            problem_symbols=frozenset(ProblemSymbol(s) for s in raw["problem_symbols"]),
            raw_query=str(raw["raw_query"]),
            application=str(raw["application"]),
            num_clients=int(raw["num_clients"]),
            dataset=str(raw["dataset"]),
            model=str(raw["model"]),
            metric=Metric(raw["metric"]),
        )
    except ValueError as exc:
        raise RegistryError(str(exc), location=where) from exc
    return query


def _parse_config(raw: dict, where: str) -> ExperimentConfig:
    _reject_unknown(raw, _CONFIG_FIELDS, where)
    try:
        return ExperimentConfig(
            communication_rounds=int(raw.get("communication_rounds", DEFAULT_ROUNDS)),
            local_epochs=int(raw.get("local_epochs", DEFAULT_LOCAL_EPOCHS)),
            scenario=Scenario(raw.get("scenario", Scenario.CROSS_DEVICE.value)),
            partitioner=Partitioner(raw.get("partitioner", Partitioner.DIRICHLET.value)),
            dirichlet_alpha=(
                float(raw["dirichlet_alpha"]) if raw.get("dirichlet_alpha") is not None else None
            ),
            train_test_split=tuple(raw.get("train_test_split", list(DEFAULT_SPLIT))),
            split_seed=int(raw.get("split_seed", DEFAULT_SPLIT_SEED)),
        )
    except (ValueError, RegistryError) as exc:
        raise RegistryError(str(exc), location=where) from exc


def parse_registry(text: str) -> BenchmarkRegistry:
    """Parse a registry document; rejects unknown fields and duplicate ids."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        location = f"line {mark.line + 1}" if mark else None
        raise RegistryError(f"document is not valid YAML: {exc}", location=location) from exc
    if doc is None:
        raise RegistryError("empty registry document")
    if not isinstance(doc, dict) or "entries" not in doc:
        raise RegistryError("registry document must be a mapping with an 'entries' list")
    _reject_unknown(doc, {"entries"}, "document root")
    registry = BenchmarkRegistry()
    seen: set[str] = set()
    for idx, raw_entry in enumerate(doc["entries"] or []):
        where = f"entries[{idx}]"
        if not isinstance(raw_entry, dict):
            raise RegistryError("entry must be a mapping", location=where)
        _reject_unknown(raw_entry, _ENTRY_FIELDS, where)
        if "query" not in raw_entry:
            raise RegistryError("entry missing 'query'", location=where)
        query = _parse_query(raw_entry["query"], f"{where}.query")
        config = _parse_config(raw_entry.get("config") or {}, f"{where}.config")
        if query.id in seen:
            raise DuplicateIdError(f"duplicate query id: {query.id}", location=where)
        seen.add(query.id)
        registry.entries.append(
            BenchmarkEntry(query=query, config=config, comment=str(raw_entry.get("comment", "")))
        )
    return registry


def load_registry(path: str | Path) -> BenchmarkRegistry:
    return parse_registry(Path(path).read_text(encoding="utf-8"))


def serialize_registry(registry: BenchmarkRegistry) -> str:
    """Inverse of parse_registry (field-by-field round trip)."""
    doc = {"entries": []}
    for entry in registry.entries:
        q = entry.query
        item = {
            "query": {
                "id": q.id,
                "research_area": q.research_area.value,
                "challenge": q.challenge,
                "problem_symbols": sorted(s.value for s in q.problem_symbols),
                "raw_query": q.raw_query,
                "application": q.application,
                "num_clients": q.num_clients,
                "dataset": q.dataset,
                "model": q.model,
                "metric": q.metric.value,
            },
            "config": {
                "communication_rounds": entry.config.communication_rounds,
                "local_epochs": entry.config.local_epochs,
                "scenario": entry.config.scenario.value,
                "partitioner": entry.config.partitioner.value,
                "dirichlet_alpha": entry.config.dirichlet_alpha,
                "train_test_split": list(entry.config.train_test_split),
                "split_seed": entry.config.split_seed,
            },
        }
        if entry.comment:
            item["comment"] = entry.comment
        doc["entries"].append(item)
    return yaml.safe_dump(doc, sort_keys=False, allow_unicode=False, width=100)


def shipped_registry_path() -> Path:
    return Path(str(resources.files("fedforge").joinpath("assets/benchmark/ourbench.registry")))


def load_shipped_registry() -> BenchmarkRegistry:
    return load_registry(shipped_registry_path())


def validate_template(query: TaskQuery) -> list[str]:
    """Check the three-clause query template plus structured-field sanity.

    Violations are data, not faults: an empty list means the query conforms.
    """
    violations: list[str] = []
    text = query.raw_query
    if DEPLOY_MARKER not in text:
        violations.append("missing-deployment-clause")
    if not _DATA_CLAUSE_RE.search(text):
        violations.append("missing-data-clause")
    if REQUEST_MARKER not in text:
        violations.append("missing-request-clause")
    if query.num_clients < 1:
        violations.append("num-clients-below-one")
    if not query.id:
        violations.append("empty-id")
    return violations


PLANNING_CONTEXT_TEMPLATE = """USER QUERY:
{raw_query}

Technical Setup:
- Model Architecture: {model}
- Datasets: {data}
- Client Configuration: {num_clients} clients ({scenario})
- Data Partition Strategy: {split_method}
- Local Training Epochs: {local_epochs}
- Communication Rounds: {communication_rounds}
- Evaluation Criteria: {criteria}
- Privacy Mechanisms: {privacy}
"""


def split_method_label(config: ExperimentConfig) -> str:
    if config.partitioner is Partitioner.DIRICHLET:
        return f"Dirichlet (alpha={config.dirichlet_alpha:g})"
    if config.partitioner is Partitioner.EXPONENTIAL:
        return "Exponential (long-tail)"
    return "IID"


def to_planning_prompt_context(query: TaskQuery, config: ExperimentConfig) -> str:
    """Render the planner's context block for one benchmark entry.

    Every placeholder in the template must be bound; validate_template must
    be clean first.
    """
    violations = validate_template(query)
    if violations:
        raise PreconditionError(f"query {query.id} violates template: {', '.join(violations)}")
    from .prompts import render_template  # local import to avoid a cycle

    train_frac, test_frac = config.train_test_split
    return render_template(
        PLANNING_CONTEXT_TEMPLATE,
        {
            "raw_query": query.raw_query,
            "model": query.model,
            "data": query.dataset,
            "num_clients": str(query.num_clients),
            "scenario": config.scenario.value,
            "split_method": (
                f"{split_method_label(config)}, {train_frac:.0%}/{test_frac:.0%} "
                f"train/test split with seed={config.split_seed}"
            ),
            "local_epochs": str(config.local_epochs),
            "communication_rounds": str(config.communication_rounds),
            "criteria": query.metric.value,
            "privacy": "None",
        },
    )
