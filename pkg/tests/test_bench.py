"""Benchmark registry: loading, template validation, planner context."""

import pytest

from fedforge.bench import (
    ExperimentConfig,
    Metric,
    Partitioner,
    ResearchArea,
    TaskQuery,
    load_shipped_registry,
    parse_registry,
    serialize_registry,
    to_planning_prompt_context,
    validate_template,
)
from fedforge.errors import DuplicateIdError, PreconditionError, RegistryError


@pytest.fixture(scope="module")
def registry():
    return load_shipped_registry()


def make_query(**overrides) -> TaskQuery:
    base = dict(
        id="QX",
        research_area=ResearchArea.HETEROGENEOUS,
        challenge="Data Heterogeneity: test",
        problem_symbols=frozenset(),
        raw_query=(
            "I need to deploy a test app on 3 devices. Each client holds a toy shard. "
            "Help me build a federated learning framework to train a linear model, "
            "evaluating performance by accuracy."
        ),
        application="test app",
        num_clients=3,
        dataset="toy",
        model="linear",
        metric=Metric.GLOBAL_TEST_ACCURACY,
    )
    base.update(overrides)
    return TaskQuery(**base)


class TestLoadRegistry:
    def test_shipped_registry_has_16_entries(self, registry):
        assert len(registry) == 16

    def test_ids_are_q1_to_q16(self, registry):
        assert registry.ids() == [f"Q{i}" for i in range(1, 17)]

    def test_q1_fields(self, registry):
        q1 = registry.get("Q1")
        assert q1.query.dataset == "CIFAR-10-LT"
        assert q1.query.model == "MobileNet-V1"
        assert q1.query.num_clients == 15

    def test_q16_fields(self, registry):
        q16 = registry.get("Q16")
        assert q16.query.metric is Metric.AVG_TASK_ACCURACY
        assert q16.config.communication_rounds == 100
        assert "5 sequential" in q16.query.challenge

    def test_q2_discrepancy_is_flagged_not_resolved(self, registry):
        assert "FEMNIST" in registry.get("Q2").comment

    def test_area_counts_sum_to_16_over_five_areas(self, registry):
        counts = registry.area_counts()
        assert len(counts) == 5
        assert sum(counts.values()) == 16
        assert counts[ResearchArea.HETEROGENEOUS] == 9

    def test_empty_document_is_a_parse_error(self):
        with pytest.raises(RegistryError):
            parse_registry("")

    def test_duplicate_id_rejected(self):
        text = serialize_registry(load_shipped_registry())
        duplicated = text.replace("id: Q2", "id: Q1", 1)
        with pytest.raises(DuplicateIdError):
            parse_registry(duplicated)

    def test_unknown_field_rejected(self):
        with pytest.raises(RegistryError, match="unknown field"):
            parse_registry("entries:\n- query:\n    id: Q1\n    bogus: 1\n")

    def test_round_trip(self, registry):
        assert parse_registry(serialize_registry(registry)) == registry


class TestExperimentConfig:
    def test_defaults(self):
        config = ExperimentConfig()
        assert config.communication_rounds == 100
        assert config.local_epochs == 5
        assert config.train_test_split == (0.8, 0.2)
        assert config.split_seed == 42

    def test_shipped_defaults_everywhere(self, registry):
        for entry in registry.entries:
            assert entry.config.communication_rounds == 100
            assert entry.config.local_epochs == 5

    def test_dirichlet_alpha_must_be_positive(self):
        with pytest.raises(RegistryError):
            ExperimentConfig(partitioner=Partitioner.DIRICHLET, dirichlet_alpha=0.0)

    def test_split_must_sum_to_one(self):
        with pytest.raises(RegistryError):
            ExperimentConfig(train_test_split=(0.8, 0.3))


class TestValidateTemplate:
    def test_all_shipped_queries_pass(self, registry):
        for entry in registry.entries:
            assert validate_template(entry.query) == [], entry.query.id

    def test_degenerate_query(self):
        violations = validate_template(make_query(raw_query="hello"))
        assert "missing-deployment-clause" in violations
        assert "missing-request-clause" in violations

    def test_zero_clients(self):
        violations = validate_template(make_query(num_clients=0))
        assert "num-clients-below-one" in violations


class TestPlanningContext:
    def test_q1_context(self, registry):
        entry = registry.get("Q1")
        context = to_planning_prompt_context(entry.query, entry.config)
        assert "MobileNet-V1" in context
        assert "15 clients" in context
        assert "Local Training Epochs: 5" in context
        assert "Communication Rounds: 100" in context

    def test_violating_query_is_a_precondition_failure(self):
        with pytest.raises(PreconditionError):
            to_planning_prompt_context(make_query(raw_query="hello"), ExperimentConfig())
