import logging

import numpy as np
import pytest

from app.cache import db as cache_db
from app.core.errors import ConfigError
from app.features.synthetic import generate_base_bank, generate_bank, generate_ensemble
from app.fewshot.preprocessing import prepare_bank
from app.schemas import ImbalanceSpec, Mode, PipelineConfig, SweepParameter, SyntheticSpec
from app.services import evaluate as evaluator


@pytest.fixture
def bank(small_spec):
    return generate_bank(small_spec)


@pytest.fixture
def base(small_spec):
    return generate_base_bank(small_spec)


def transductive(**overrides):
    values = dict(mode=Mode.TRANSDUCTIVE, n_runs=100, global_seed=11)
    values.update(overrides)
    return PipelineConfig(**values)


class TestMetrics:
    """Per-run accuracy and the confidence half-interval"""

    def test_accuracy(self):
        assert evaluator.accuracy(np.array([0, 1, 2, 2]), np.array([0, 1, 1, 2])) == 0.75

    def test_accuracy_needs_queries(self):
        with pytest.raises(ConfigError):
            evaluator.accuracy(np.array([]), np.array([]))

    def test_half_interval(self):
        values = [0.5, 0.7, 0.6, 0.8]
        expected = 1.96 * np.std(values, ddof=1) / 2.0
        assert evaluator.half_interval(values) == pytest.approx(expected)

    def test_single_run_has_zero_interval(self):
        assert evaluator.half_interval([0.9]) == 0.0


class TestEvaluate:
    """End-to-end evaluation over synthetic banks"""

    def test_summary_fields(self, bank):
        summary = evaluator.evaluate([bank], transductive(n_runs=50), keep_per_run=True)
        assert summary.method == "ASY"
        assert summary.mode == Mode.TRANSDUCTIVE
        assert summary.runs == 50
        assert summary.queries == 15
        assert len(summary.per_run_accuracies) == 50
        assert summary.mean_accuracy == pytest.approx(np.mean(summary.per_run_accuracies))
        assert summary.wall_time >= 0

    def test_per_run_dropped_by_default(self, bank):
        assert evaluator.evaluate([bank], transductive(n_runs=5)).per_run_accuracies is None

    def test_well_separated_classes_are_easy(self, bank, base):
        inductive = evaluator.evaluate([bank], PipelineConfig(n_runs=100), base_banks=[base])
        assert inductive.mean_accuracy > 0.95
        assert evaluator.evaluate([bank], transductive()).mean_accuracy > 0.95

    def test_same_seed_same_result(self, bank):
        a = evaluator.evaluate([bank], transductive(), keep_per_run=True)
        b = evaluator.evaluate([bank], transductive(), keep_per_run=True)
        assert a.per_run_accuracies == b.per_run_accuracies

    def test_thread_count_does_not_change_results(self, bank):
        config = transductive(n_runs=600, shots=5)
        one = evaluator.evaluate([bank], config, threads=1, keep_per_run=True)
        many = evaluator.evaluate([bank], config, threads=4, keep_per_run=True)
        assert one.per_run_accuracies == many.per_run_accuracies
        assert one.mean_accuracy == many.mean_accuracy
        assert one.half_interval == many.half_interval

    def test_imbalanced_queries(self, small_spec):
        spec = small_spec.model_copy(update={"images_per_class": 120})
        config = transductive(imbalance=ImbalanceSpec(q_total=75, dirichlet_a=2.0), n_runs=50)
        summary = evaluator.evaluate([generate_bank(spec)], config)
        assert summary.queries == 75
        assert summary.mean_accuracy > 0.9

    def test_inductive_without_base_centers_on_novel_bank(self, bank, caplog):
        """No base bank: C falls back to the mean of every novel image, with a warning"""
        with caplog.at_level(logging.WARNING, logger="app.services.evaluate"):
            summary = evaluator.evaluate([bank], PipelineConfig(n_runs=20))
        assert summary.runs == 20
        assert summary.mean_source == "novel_bank"
        assert summary.mean_accuracy > 0.9
        assert "NO BASE BANK" in caplog.text

    def test_mean_source_is_recorded(self, bank, base):
        assert evaluator.evaluate([bank], PipelineConfig(n_runs=5), base_banks=[base]).mean_source == "base_dataset"
        assert evaluator.evaluate([bank], transductive(n_runs=5)).mean_source == "task_vectors"
        assert evaluator.evaluate([bank], PipelineConfig(n_runs=5, use_c=False)).mean_source is None

    def test_novel_mean_matches_prepared_bank(self, bank):
        config = PipelineConfig(n_runs=5)
        stats = evaluator.inductive_mean(prepare_bank([bank]), None, config)
        vectors = np.concatenate([c.images.astype(np.float64).mean(axis=1) for c in bank.classes])
        np.testing.assert_allclose(stats.mean_vector, vectors.mean(axis=0), atol=1e-9)
        assert evaluator.inductive_mean(prepare_bank([bank]), None, transductive()) is None

    def test_total_queries(self, bank, small_spec):
        assert evaluator.evaluate([bank], transductive(n_runs=5, ways=4, queries=7)).total_queries == 28
        spec = small_spec.model_copy(update={"images_per_class": 120})
        config = transductive(imbalance=ImbalanceSpec(q_total=60, dirichlet_a=2.0), n_runs=5)
        assert evaluator.evaluate([generate_bank(spec)], config).total_queries == 60

    def test_inductive_without_centering_needs_no_base(self, bank):
        summary = evaluator.evaluate([bank], PipelineConfig(n_runs=5, use_c=False))
        assert summary.runs == 5

    def test_ensemble_needs_two_banks(self, bank):
        with pytest.raises(ConfigError):
            evaluator.evaluate([bank], transductive(use_e=True, n_runs=5))

    def test_incompatible_ensemble(self, bank, small_spec):
        other = generate_bank(small_spec.model_copy(update={"images_per_class": 41}))
        with pytest.raises(ConfigError, match="incompatible"):
            evaluator.evaluate([bank, other], transductive(use_e=True, n_runs=5))

    def test_ensemble_runs(self, small_spec):
        banks = generate_ensemble(small_spec, 3)
        summary = evaluator.evaluate(banks, transductive(use_e=True, n_runs=20))
        assert summary.method == "EASY"
        assert summary.config.use_e


class TestSweep:
    """Sweeps evaluate every value on paired seeds"""

    def test_beta_rows(self, bank):
        rows = evaluator.sweep(SweepParameter.BETA, [0.5, 5.0], [bank], transductive(n_runs=20))
        assert [r.value for r in rows] == [0.5, 5.0]
        assert [r.summary.beta for r in rows] == [0.5, 5.0]
        assert all(r.summary.seed == 11 for r in rows)

    def test_matches_single_evaluation(self, bank):
        config = transductive(n_runs=30)
        row = evaluator.sweep(SweepParameter.BETA, [2.0], [bank], config)[0]
        direct = evaluator.evaluate([bank], config.model_copy(update={"beta": 2.0}))
        assert row.summary.mean_accuracy == direct.mean_accuracy

    def test_single_view_disables_averaging(self, bank):
        rows = evaluator.sweep(SweepParameter.VIEWS, [1, 3], [bank], transductive(n_runs=10))
        assert rows[0].summary.method == "Y"
        assert rows[1].summary.method == "ASY"
        assert rows[1].summary.config.views == 3

    def test_backbones(self, small_spec):
        banks = generate_ensemble(small_spec, 3)
        rows = evaluator.sweep(SweepParameter.BACKBONES, [1, 2, 3], banks, transductive(n_runs=10))
        assert [r.summary.config.use_e for r in rows] == [False, True, True]
        assert [r.summary.config.backbones for r in rows] == [1, 2, 3]

    def test_non_integer_views_rejected(self, bank):
        with pytest.raises(ConfigError):
            evaluator.sweep(SweepParameter.VIEWS, [1.5], [bank], transductive(n_runs=5))

    def test_invalid_beta_rejected(self, bank):
        with pytest.raises(ConfigError):
            evaluator.sweep(SweepParameter.BETA, [0.0], [bank], transductive(n_runs=5))

    def test_empty_values(self, bank):
        with pytest.raises(ConfigError):
            evaluator.sweep(SweepParameter.BETA, [], [bank], transductive(n_runs=5))


class TestAblation:
    """Y / ASY / EY / EASY variants"""

    def test_all_variants(self, small_spec):
        banks = generate_ensemble(small_spec, 2)
        rows = evaluator.ablation(banks, transductive(n_runs=10))
        assert [r.method for r in rows] == ["Y", "ASY", "EY", "EASY"]

    def test_single_bank_skips_ensemble(self, bank):
        rows = evaluator.ablation([bank], transductive(n_runs=10))
        assert [r.method for r in rows] == ["Y", "ASY"]

    def test_single_view_skips_averaging(self):
        spec = SyntheticSpec(n_classes=5, dim=8, images_per_class=30, separation=6.0, sigma=0.5, seed=1)
        rows = evaluator.ablation([generate_bank(spec)], transductive(n_runs=10))
        assert [r.method for r in rows] == ["Y"]


class TestResolveInputs:
    """Loading or generating banks for an evaluation"""

    def test_synthetic_with_pins_and_base(self, small_spec):
        spec = small_spec.model_copy(update={"pin_supports_to_means": True})
        inputs = evaluator.resolve_inputs(synthetic=spec, synthetic_backbones=2, need_base=True)
        assert len(inputs.banks) == 2
        assert len(inputs.base_banks) == 2
        assert len(inputs.pins) == 2

    def test_paths_and_synthetic_are_exclusive(self, small_spec):
        with pytest.raises(ConfigError):
            evaluator.resolve_inputs(features=["a.fvb"], synthetic=small_spec)

    def test_nothing_given(self):
        with pytest.raises(ConfigError):
            evaluator.resolve_inputs()


class TestResultCacheKinds:
    """Cached rows remember which entry point produced them"""

    def test_kinds(self, bank):
        config = transductive(n_runs=5)
        evaluator.evaluate_with_cache([bank], config, use_cache=True)
        evaluator.sweep(SweepParameter.BETA, [1.0, 2.0], [bank], config, use_cache=True)
        evaluator.ablation([bank], config, use_cache=True)

        # ablation ASY is the first evaluation again and is served from the cache
        assert cache_db.get_stats()["by_kind"] == {"evaluate": 1, "sweep": 2, "ablation": 1}

    def test_default_kind(self, bank):
        evaluator.evaluate_with_cache([bank], transductive(n_runs=5), use_cache=True)
        assert cache_db.get_stats()["by_kind"] == {"evaluate": 1}
