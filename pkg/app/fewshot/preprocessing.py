"""
Feature transforms applied after the backbone, in this order:

    AS (average views) -> E (concatenate backbones) -> C (center) -> H (unit sphere)

AS and E act per image, so they are applied once to whole banks
(``prepare_bank``); C and H depend on the episode in transductive mode and
are applied per task (``preprocess_task``).
"""
import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from app.core.errors import (
    ConfigError,
    DegenerateVector,
    DimensionMismatch,
    EmptyList,
    EmptyViewList,
)
from app.features.base import ClassFeatures, FeatureBank, freeze
from app.fewshot.sampler import Task, reduce_views
from app.schemas import PipelineConfig

logger = logging.getLogger(__name__)

EPSILON = 1e-12


class MeanSource(str, Enum):
    BASE_DATASET = "base_dataset"
    TASK_VECTORS = "task_vectors"
    NOVEL_BANK = "novel_bank"


@dataclass(frozen=True)
class PreprocessStats:
    mean_vector: np.ndarray
    source: MeanSource

    @property
    def dim(self) -> int:
        return int(self.mean_vector.shape[-1])


def average_views(views) -> np.ndarray:
    """Coordinate-wise mean over the view axis (second to last)."""
    try:
        arr = np.asarray(views, dtype=np.float64)
    except ValueError as e:
        raise DimensionMismatch(f"Views have different dimensions: {e}") from e
    if arr.ndim < 2 or arr.shape[-2] == 0:
        raise EmptyViewList("At least one view is required")
    return arr.mean(axis=-2)


def concat_features(per_backbone: Sequence) -> np.ndarray:
    if len(per_backbone) == 0:
        raise EmptyList("At least one backbone vector is required")
    arrays = [np.asarray(v, dtype=np.float64) for v in per_backbone]
    try:
        return np.concatenate(arrays, axis=-1)
    except ValueError as e:
        raise DimensionMismatch(f"Backbone outputs cannot be concatenated: {e}") from e


def compute_mean(vectors, source: MeanSource = MeanSource.TASK_VECTORS) -> PreprocessStats:
    try:
        arr = np.asarray(vectors, dtype=np.float64)
    except ValueError as e:
        raise DimensionMismatch(f"Vectors have different dimensions: {e}") from e
    if arr.size == 0:
        raise EmptyList("Cannot average an empty set of vectors")
    arr = arr.reshape(-1, arr.shape[-1])
    return PreprocessStats(mean_vector=arr.mean(axis=0), source=source)


def _check_dim(z: np.ndarray, stats: PreprocessStats) -> None:
    if z.shape[-1] != stats.dim:
        raise DimensionMismatch(f"Vector dimension {z.shape[-1]} does not match mean dimension {stats.dim}")


def center(z, stats: PreprocessStats) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    _check_dim(z, stats)
    return z - stats.mean_vector


def uncenter(z_c, stats: PreprocessStats) -> np.ndarray:
    z_c = np.asarray(z_c, dtype=np.float64)
    _check_dim(z_c, stats)
    return z_c + stats.mean_vector


def project_hypersphere(z_c) -> np.ndarray:
    z_c = np.asarray(z_c, dtype=np.float64)
    norms = np.linalg.norm(z_c, axis=-1, keepdims=True)
    if np.any(norms <= EPSILON):
        raise DegenerateVector(f"Cannot project a vector of norm <= {EPSILON} onto the hypersphere")
    return z_c / norms


def preprocess_task(task: Task, config: PipelineConfig, base_stats: Optional[PreprocessStats] = None) -> Task:
    if not (config.use_c or config.use_h):
        return task

    support, query = task.support, task.query
    if config.use_c:
        if config.transductive:
            stats = compute_mean(
                np.concatenate([support.reshape(-1, task.dim), query.reshape(-1, task.dim)]),
                MeanSource.TASK_VECTORS,
            )
        elif base_stats is None:
            raise ConfigError("Inductive centering needs the mean of a base dataset")
        else:
            stats = base_stats
        support, query = center(support, stats), center(query, stats)
    if config.use_h:
        support, query = project_hypersphere(support), project_hypersphere(query)
    return replace(task, support=support, query=query)


def _selected_banks(banks: Sequence, use_e: bool, backbones: Optional[int]) -> Sequence:
    if not banks:
        raise ConfigError("At least one feature bank is required")
    if not use_e:
        return banks[:1]
    count = len(banks) if backbones is None else backbones
    if count > len(banks):
        raise ConfigError(f"Requested {count} backbones but only {len(banks)} banks were given")
    return banks[:count]


def prepare_bank(
    banks: Sequence[FeatureBank],
    use_as: bool = True,
    use_e: bool = False,
    views: Optional[int] = None,
    backbones: Optional[int] = None,
) -> FeatureBank:
    """Apply AS then E to every image, giving a single-view 64-bit bank."""
    selected = _selected_banks(banks, use_e, backbones)
    n_views = min(bank.n_views for bank in selected)
    if views is not None and use_as and views > n_views:
        raise ConfigError(f"Requested {views} views but the banks hold {n_views}")

    lookups = [{c.class_id: c for c in bank.classes} for bank in selected]
    classes = []
    for cls in selected[0].classes:
        per_backbone = []
        for lookup in lookups:
            other = lookup.get(cls.class_id)
            if other is None:
                raise ConfigError(f"Class {cls.class_id} is missing from an ensemble bank")
            per_backbone.append(reduce_views(other.images, use_as, views))
        vectors = concat_features(per_backbone)
        classes.append(ClassFeatures(class_id=cls.class_id, images=freeze(vectors[:, None, :])))

    dim = sum(bank.dim for bank in selected)
    source_id = "+".join(bank.source_id for bank in selected)
    logger.debug("BANK PREPARED %s: dim=%d, as=%s, views=%s", source_id, dim, use_as, views)
    return FeatureBank(dim=dim, n_views=1, classes=tuple(classes), source_id=source_id)


def prepare_pins(
    pins: Sequence[Mapping[int, np.ndarray]],
    use_e: bool = False,
    backbones: Optional[int] = None,
) -> Dict[int, np.ndarray]:
    """Concatenate per-backbone support pins the same way prepare_bank concatenates banks."""
    selected = _selected_banks(pins, use_e, backbones)
    return {
        class_id: concat_features([p[class_id] for p in selected])
        for class_id in selected[0]
    }


def bank_mean(bank: FeatureBank, source: MeanSource = MeanSource.NOVEL_BANK) -> PreprocessStats:
    """Mean over every image of a prepared (single-view) bank."""
    vectors = np.concatenate([c.images[:, 0, :] for c in bank.classes])
    return compute_mean(vectors, source)


def base_statistics(
    base_banks: Sequence[FeatureBank],
    config: PipelineConfig,
) -> PreprocessStats:
    """Mean of the prepared base vectors (equal to concatenating per-backbone means).

    Base images are reduced with the same AS setting and view count as the
    novel bank.
    """
    prepared = prepare_bank(base_banks, config.use_as, config.use_e, config.views, config.backbones)
    return bank_mean(prepared, MeanSource.BASE_DATASET)
