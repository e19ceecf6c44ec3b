import pytest
from pydantic import ValidationError

from app.schemas import (
    CSV_COLUMNS,
    EvalSummary,
    ImbalanceSpec,
    Mode,
    PipelineConfig,
    SweepParameter,
    SweepRequest,
    SweepRow,
)


def make_summary(**overrides):
    values = dict(
        method="ASY", mode=Mode.INDUCTIVE, ways=5, shots=1, queries=15, beta=5.0,
        runs=10000, seed=0, mean_accuracy=0.84127, half_interval=0.00312,
        wall_time=1.23456, config=PipelineConfig(),
    )
    values.update(overrides)
    return EvalSummary(**values)


class TestPipelineConfig:
    """Unit tests for pipeline configuration validation"""

    def test_defaults(self):
        config = PipelineConfig()
        assert config.mode == Mode.INDUCTIVE
        assert (config.use_as, config.use_e, config.use_c, config.use_h) == (True, False, True, True)
        assert (config.ways, config.shots, config.queries) == (5, 1, 15)
        assert config.beta == 5.0
        assert config.max_iters == 30
        assert config.shift_tol == 1e-6
        assert config.n_runs == 10000

    @pytest.mark.parametrize("use_as,use_e,method", [
        (True, True, "EASY"),
        (True, False, "ASY"),
        (False, True, "EY"),
        (False, False, "Y"),
    ])
    def test_method_name(self, use_as, use_e, method):
        assert PipelineConfig(use_as=use_as, use_e=use_e).method == method

    def test_total_queries(self):
        assert PipelineConfig(ways=5, queries=15).total_queries == 75
        assert PipelineConfig(imbalance=ImbalanceSpec(q_total=60)).total_queries == 60

    def test_imbalance_defaults(self):
        spec = ImbalanceSpec()
        assert spec.q_total == 75
        assert spec.dirichlet_a == 2.0

    def test_q_total_below_ways(self):
        with pytest.raises(ValidationError):
            PipelineConfig(ways=5, imbalance=ImbalanceSpec(q_total=4))

    @pytest.mark.parametrize("field,value", [
        ("ways", 1),
        ("shots", 0),
        ("queries", 0),
        ("beta", 0.0),
        ("n_runs", 0),
        ("global_seed", -1),
        ("global_seed", 2**64),
        ("views", 0),
    ])
    def test_rejects_out_of_range(self, field, value):
        with pytest.raises(ValidationError):
            PipelineConfig(**{field: value})

    def test_unknown_field_rejected(self):
        with pytest.raises(ValidationError):
            PipelineConfig(temperature=3.0)

    def test_soft_kmeans_view(self):
        skm = PipelineConfig(beta=2.0, max_iters=7, shift_tol=1e-3).soft_kmeans()
        assert (skm.beta, skm.max_iters, skm.shift_tol) == (2.0, 7, 1e-3)

    def test_json_round_trip_keeps_mode(self):
        config = PipelineConfig(mode="transductive", use_e=True, backbones=3)
        restored = PipelineConfig.model_validate_json(config.model_dump_json())
        assert restored == config
        assert restored.transductive


class TestEvalSummary:
    """Result formatting"""

    def test_formatted_percent(self):
        assert make_summary().formatted() == "84.13 ± 0.31"

    def test_csv_row_columns(self):
        row = make_summary().csv_row()
        assert list(row) == CSV_COLUMNS
        assert row["mode"] == "inductive"
        assert row["seconds"] == 1.235

    def test_csv_row_without_timing(self):
        assert make_summary(wall_time=None).csv_row()["seconds"] == ""

    def test_accuracy_bounds(self):
        with pytest.raises(ValidationError):
            make_summary(mean_accuracy=1.2)
        with pytest.raises(ValidationError):
            make_summary(half_interval=-0.1)

    def test_sweep_row_prefix(self):
        row = SweepRow(parameter=SweepParameter.BETA, value=0.5, summary=make_summary()).csv_row()
        assert list(row)[:2] == ["parameter", "value"]
        assert row["parameter"] == "beta"

    def test_sweep_request_needs_values(self):
        with pytest.raises(ValidationError):
            SweepRequest(parameter="beta", values=[])
