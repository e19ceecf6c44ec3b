import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError
from tqdm import tqdm

from app.cache import db as cache_db
from app.core.config import settings
from app.core.errors import ConfigError
from app.features.base import FeatureBank
from app.features.store import check_ensemble, load_feature_bank
from app.features.synthetic import (
    backbone_seed,
    generate_base_bank,
    generate_ensemble,
    support_pins,
)
from app.fewshot.classifiers import ncm_barycenters, ncm_predict, soft_kmeans_predict
from app.fewshot.preprocessing import (
    MeanSource,
    PreprocessStats,
    bank_mean,
    base_statistics,
    prepare_bank,
    prepare_pins,
    preprocess_task,
)
from app.fewshot.rng import derive_seed
from app.fewshot.sampler import Task, sample_imbalanced_task, sample_task
from app.schemas import EvalSummary, PipelineConfig, SweepParameter, SweepRow, SyntheticSpec

logger = logging.getLogger(__name__)

Z_95 = 1.96
_BLOCK = 250

Pins = Sequence[Mapping[int, np.ndarray]]


@dataclass
class EvaluationInputs:
    """Feature banks (one per backbone) plus optional base banks and support pins."""

    banks: List[FeatureBank]
    base_banks: Optional[List[FeatureBank]] = None
    pins: Optional[List[Mapping[int, np.ndarray]]] = None


def resolve_inputs(
    features: Sequence[str] = (),
    base: Sequence[str] = (),
    synthetic: Optional[SyntheticSpec] = None,
    synthetic_backbones: int = 1,
    need_base: bool = False,
) -> EvaluationInputs:
    """Load banks from FVB1 paths, or generate them from a synthetic spec."""
    if synthetic is not None:
        if features:
            raise ConfigError("Give either feature bank paths or a synthetic spec, not both")
        banks = generate_ensemble(synthetic, synthetic_backbones)
        base_banks = None
        if need_base:
            base_banks = [
                generate_base_bank(synthetic.model_copy(update={"seed": backbone_seed(synthetic, i)}))
                for i in range(synthetic_backbones)
            ]
        pins = support_pins(synthetic)
        return EvaluationInputs(
            banks=banks,
            base_banks=base_banks,
            pins=[pins] * synthetic_backbones if pins is not None else None,
        )

    if not features:
        raise ConfigError("No feature banks given")
    return EvaluationInputs(
        banks=[load_feature_bank(p) for p in features],
        base_banks=[load_feature_bank(p) for p in base] or None,
    )


def accuracy(predictions: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ConfigError("A run needs at least one query")
    return float(np.mean(np.asarray(predictions) == labels))


def half_interval(accuracies: Sequence[float]) -> float:
    """1.96 * sample std / sqrt(N); 0 for a single run, where the std is undefined."""
    values = np.asarray(accuracies, dtype=np.float64)
    if values.size < 2:
        return 0.0
    return float(Z_95 * values.std(ddof=1) / np.sqrt(values.size))


def run_accuracy(task: Task, config: PipelineConfig, base_stats: Optional[PreprocessStats] = None) -> float:
    """Fraction of correctly classified queries of one episode."""
    task = preprocess_task(task, config, base_stats)
    if config.transductive:
        predictions = soft_kmeans_predict(task, config.soft_kmeans())
    else:
        predictions = ncm_predict(task.query, ncm_barycenters(task.support))
    return accuracy(predictions, task.query_labels)


def draw_task(
    bank: FeatureBank,
    config: PipelineConfig,
    run_index: int,
    pins: Optional[Mapping[int, np.ndarray]] = None,
) -> Task:
    seed = derive_seed(config.global_seed, run_index)
    if config.imbalance is not None:
        return sample_imbalanced_task(bank, config.ways, config.shots, config.imbalance, seed, pins)
    return sample_task(bank, config.ways, config.shots, config.queries, seed, pins)


def _check_inputs(inputs: EvaluationInputs, config: PipelineConfig) -> None:
    if config.use_e:
        count = config.backbones or len(inputs.banks)
        if len(inputs.banks) < 2 or count < 2:
            raise ConfigError("The ensemble step (E) needs at least 2 feature banks")
        report = check_ensemble(inputs.banks[:count])
        if not report.ok:
            raise ConfigError("Ensemble banks are incompatible: " + "; ".join(v.message for v in report.violations))
    if inputs.pins is not None and len(inputs.pins) < len(inputs.banks):
        raise ConfigError("Support pins must be given for every bank")


def inductive_mean(
    bank: FeatureBank,
    base_banks: Optional[Sequence[FeatureBank]],
    config: PipelineConfig,
) -> Optional[PreprocessStats]:
    """Centering mean for inductive C: the base banks, else the whole prepared novel bank."""
    if not config.use_c or config.transductive:
        return None
    if base_banks:
        return base_statistics(base_banks, config)
    logger.warning(
        "NO BASE BANK: centering on the mean of all %d novel images (%s)",
        sum(c.n_images for c in bank.classes), bank.source_id,
    )
    return bank_mean(bank, MeanSource.NOVEL_BANK)


def _mean_source(config: PipelineConfig, base_stats: Optional[PreprocessStats]) -> Optional[str]:
    if not config.use_c:
        return None
    if config.transductive:
        return MeanSource.TASK_VECTORS.value
    return base_stats.source.value


def _run_block(
    bank: FeatureBank,
    config: PipelineConfig,
    base_stats: Optional[PreprocessStats],
    pins: Optional[Dict[int, np.ndarray]],
    indices: range,
) -> List[float]:
    return [run_accuracy(draw_task(bank, config, i, pins), config, base_stats) for i in indices]


def evaluate(
    banks: Sequence[FeatureBank],
    config: PipelineConfig,
    base_banks: Optional[Sequence[FeatureBank]] = None,
    pins: Optional[Pins] = None,
    threads: Optional[int] = None,
    keep_per_run: bool = False,
    progress: Optional[bool] = None,
) -> EvalSummary:
    """Average accuracy over config.n_runs independent episodes.

    Runs are computed in blocks on a thread pool and reduced in run-index
    order, so the summary does not depend on the number of workers.
    """
    inputs = EvaluationInputs(
        banks=list(banks),
        base_banks=list(base_banks) if base_banks else None,
        pins=list(pins) if pins else None,
    )
    _check_inputs(inputs, config)

    start = time.perf_counter()
    bank = prepare_bank(inputs.banks, config.use_as, config.use_e, config.views, config.backbones)
    prepared_pins = prepare_pins(inputs.pins, config.use_e, config.backbones) if inputs.pins else None
    base_stats = inductive_mean(bank, inputs.base_banks, config)

    workers = settings.resolve_threads(threads)
    show = settings.SHOW_PROGRESS if progress is None else progress
    blocks = [range(i, min(i + _BLOCK, config.n_runs)) for i in range(0, config.n_runs, _BLOCK)]
    logger.info(
        "EVAL START %s %s %d-way %d-shot: %d runs, seed=%d, %d workers",
        config.method, config.mode.value, config.ways, config.shots, config.n_runs, config.global_seed, workers,
    )

    accuracies: List[float] = []
    with tqdm(total=config.n_runs, disable=not show, file=sys.stderr, desc=config.method, unit="run") as bar:
        if workers == 1 or len(blocks) == 1:
            for block in blocks:
                accuracies.extend(_run_block(bank, config, base_stats, prepared_pins, block))
                bar.update(len(block))
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = [
                    pool.submit(_run_block, bank, config, base_stats, prepared_pins, block)
                    for block in blocks
                ]
                for block, future in zip(blocks, futures):
                    accuracies.extend(future.result())
                    bar.update(len(block))

    values = np.asarray(accuracies, dtype=np.float64)
    elapsed = time.perf_counter() - start
    summary = EvalSummary(
        method=config.method,
        mode=config.mode,
        ways=config.ways,
        shots=config.shots,
        queries=config.imbalance.q_total if config.imbalance is not None else config.queries,
        total_queries=config.total_queries,
        beta=config.beta,
        runs=config.n_runs,
        seed=config.global_seed,
        mean_accuracy=min(max(float(values.mean()), 0.0), 1.0),
        half_interval=half_interval(values),
        mean_source=_mean_source(config, base_stats),
        per_run_accuracies=values.tolist() if keep_per_run else None,
        wall_time=elapsed,
        config=config,
    )
    logger.info("EVAL DONE %s: %s in %.2fs", config.method, summary.formatted(), elapsed)
    return summary


def with_updates(config: PipelineConfig, **updates) -> PipelineConfig:
    """Copy of a config with some fields changed, re-validated."""
    try:
        return PipelineConfig.model_validate({**config.model_dump(), **updates})
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def _integral(parameter: SweepParameter, value: float) -> int:
    if value != int(value) or value < 1:
        raise ConfigError(f"{parameter.value} values must be positive integers, got {value}")
    return int(value)


def sweep_config(config: PipelineConfig, parameter: SweepParameter, value: float) -> PipelineConfig:
    if parameter == SweepParameter.BETA:
        return with_updates(config, beta=float(value))
    if parameter == SweepParameter.VIEWS:
        views = _integral(parameter, value)
        # a single view is the global reshape: no averaging
        return with_updates(config, views=views, use_as=views > 1)
    backbones = _integral(parameter, value)
    return with_updates(config, backbones=backbones, use_e=backbones > 1)


def sweep(
    parameter: SweepParameter,
    values: Sequence[float],
    banks: Sequence[FeatureBank],
    config: PipelineConfig,
    base_banks: Optional[Sequence[FeatureBank]] = None,
    pins: Optional[Pins] = None,
    threads: Optional[int] = None,
    use_cache: Optional[bool] = None,
    progress: Optional[bool] = None,
) -> List[SweepRow]:
    """One evaluation per value; every value reuses config.global_seed so runs are paired."""
    if not values:
        raise ConfigError("A sweep needs at least one value")
    configs = [sweep_config(config, parameter, v) for v in values]
    rows = []
    for value, cfg in zip(values, configs):
        summary, _ = evaluate_with_cache(
            banks, cfg, base_banks=base_banks, pins=pins, threads=threads, use_cache=use_cache, progress=progress,
            kind="sweep",
        )
        logger.info("SWEEP VALUE %s=%s: %s", parameter.value, value, summary.formatted())
        rows.append(SweepRow(parameter=parameter, value=float(value), summary=summary))
    return rows


ABLATION_VARIANTS: Tuple[Tuple[bool, bool], ...] = (
    (False, False),  # Y
    (True, False),  # ASY
    (False, True),  # EY
    (True, True),  # EASY
)


def ablation(
    banks: Sequence[FeatureBank],
    config: PipelineConfig,
    base_banks: Optional[Sequence[FeatureBank]] = None,
    pins: Optional[Pins] = None,
    threads: Optional[int] = None,
    use_cache: Optional[bool] = None,
    progress: Optional[bool] = None,
) -> List[EvalSummary]:
    """Y / ASY / EY / EASY on paired seeds; variants the inputs cannot support are skipped."""
    has_views = any(bank.n_views > 1 for bank in banks)
    rows = []
    for use_as, use_e in ABLATION_VARIANTS:
        if use_e and len(banks) < 2:
            logger.info("ABLATION SKIP E variants: a single bank was given")
            continue
        if use_as and not has_views:
            logger.info("ABLATION SKIP AS variants: banks hold a single view")
            continue
        cfg = with_updates(config, use_as=use_as, use_e=use_e)
        summary, _ = evaluate_with_cache(
            banks, cfg, base_banks=base_banks, pins=pins, threads=threads, use_cache=use_cache, progress=progress,
            kind="ablation",
        )
        rows.append(summary)
    return rows


def bank_digest(bank: FeatureBank) -> str:
    digest = hashlib.sha256()
    digest.update(f"{bank.dim}:{bank.n_views}:{bank.n_classes}".encode())
    for cls in bank.classes:
        digest.update(f"|{cls.class_id}:{cls.n_images}|".encode())
        digest.update(np.ascontiguousarray(cls.images, dtype="<f4").tobytes())
    return digest.hexdigest()


def fingerprint(
    banks: Sequence[FeatureBank],
    config: PipelineConfig,
    base_banks: Optional[Sequence[FeatureBank]] = None,
    pins: Optional[Pins] = None,
    keep_per_run: bool = False,
) -> str:
    """Cache key over bank contents, the full config and output options."""
    pin_digest = None
    if pins:
        digest = hashlib.sha256()
        for mapping in pins:
            for class_id in sorted(mapping):
                digest.update(f"{class_id}:".encode())
                digest.update(np.asarray(mapping[class_id], dtype="<f8").tobytes())
        pin_digest = digest.hexdigest()
    payload = {
        "banks": [bank_digest(b) for b in banks],
        "base": [bank_digest(b) for b in base_banks or []],
        "pins": pin_digest,
        "config": config.model_dump(mode="json"),
        "per_run": keep_per_run,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def evaluate_with_cache(
    banks: Sequence[FeatureBank],
    config: PipelineConfig,
    base_banks: Optional[Sequence[FeatureBank]] = None,
    pins: Optional[Pins] = None,
    threads: Optional[int] = None,
    keep_per_run: bool = False,
    use_cache: Optional[bool] = None,
    progress: Optional[bool] = None,
    kind: str = "evaluate",
) -> Tuple[EvalSummary, bool]:
    """
    evaluate() behind the SQLite result cache.

    Returns (summary, cached). With the cache disabled this is evaluate().
    """
    if not (settings.RESULT_CACHE if use_cache is None else use_cache):
        return evaluate(banks, config, base_banks, pins, threads, keep_per_run, progress), False

    cache_db.init_db()
    key = fingerprint(banks, config, base_banks, pins, keep_per_run)
    cached_payload = cache_db.get(key)
    if cached_payload:
        try:
            summary = EvalSummary.model_validate_json(cached_payload)
            logger.info("CACHE HIT %s", key[:12])
            return summary, True
        except ValidationError:
            logger.warning("CACHE CORRUPTED %s, re-evaluating", key[:12])

    summary = evaluate(banks, config, base_banks, pins, threads, keep_per_run, progress)
    cache_db.set(key, summary.model_dump_json(), kind=kind)
    logger.info("CACHED RESULT %s", key[:12])
    return summary, False
