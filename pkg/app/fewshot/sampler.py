"""Episode (run) sampling: balanced n-way k-shot q-query tasks and imbalanced queries."""
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import ConfigError, NotEnoughClasses, NotEnoughImages
from app.features.base import FeatureBank
from app.fewshot.rng import generator
from app.schemas import ImbalanceSpec


@dataclass(frozen=True, eq=False)
class Task:
    ways: int
    support: np.ndarray  # (ways, shots, dim)
    query: np.ndarray  # (n_queries, dim)
    query_labels: np.ndarray  # hidden from classifiers
    episode_seed: int
    class_ids: Tuple[int, ...] = ()
    support_images: Optional[np.ndarray] = field(default=None)  # (ways, shots) image indices
    query_images: Optional[np.ndarray] = field(default=None)  # (n_queries,)

    @property
    def dim(self) -> int:
        return int(self.support.shape[-1])

    @property
    def shots(self) -> int:
        return int(self.support.shape[1])

    @property
    def n_queries(self) -> int:
        return int(self.query.shape[0])


def largest_remainder(proportions: Sequence[float], total: int) -> np.ndarray:
    """Integer counts proportional to ``proportions`` summing exactly to ``total``.

    Leftover units go to the largest fractional parts; ties go to the lowest index.
    """
    p = np.asarray(proportions, dtype=np.float64)
    raw = p / p.sum() * total
    counts = np.floor(raw).astype(np.int64)
    leftover = int(total - counts.sum())
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:leftover]] += 1
    return counts


def reduce_views(images: np.ndarray, use_as: bool = True, views: Optional[int] = None) -> np.ndarray:
    """(m, n_views, dim) -> (m, dim): view 0 without AS, else the mean of the first views."""
    if not use_as:
        # view 0 is the un-cropped (global reshape) view
        return np.asarray(images[:, 0, :], dtype=np.float64)
    count = images.shape[1] if views is None else views
    return np.asarray(images[:, :count, :], dtype=np.float64).mean(axis=1)


def _check_views(bank: FeatureBank, use_as: bool, views: Optional[int]) -> None:
    if use_as and views is not None and not 1 <= views <= bank.n_views:
        raise ConfigError(f"Requested {views} views but the bank holds {bank.n_views}")


def _choose_classes(bank: FeatureBank, n: int, rng: np.random.Generator) -> np.ndarray:
    if bank.n_classes < n:
        raise NotEnoughClasses(f"Bank holds {bank.n_classes} classes, task needs {n}")
    return rng.choice(bank.n_classes, size=n, replace=False)


def _assemble(
    bank: FeatureBank,
    chosen: np.ndarray,
    k: int,
    query_counts: Sequence[int],
    rng: np.random.Generator,
    seed: int,
    pins: Optional[Mapping[int, np.ndarray]],
    use_as: bool,
    views: Optional[int],
) -> Task:
    support, support_images = [], []
    query, query_images, labels = [], [], []
    class_ids = []
    for label, class_index in enumerate(chosen):
        cls = bank.classes[int(class_index)]
        need = k + int(query_counts[label])
        if cls.n_images < need:
            raise NotEnoughImages(f"Class {cls.class_id} holds {cls.n_images} images, task needs {need}")
        picks = rng.choice(cls.n_images, size=need, replace=False)
        vectors = reduce_views(cls.images[picks], use_as, views)

        if pins is not None:
            if cls.class_id not in pins:
                raise ConfigError(f"No support pin for class {cls.class_id}")
            pin = np.asarray(pins[cls.class_id], dtype=np.float64)
            support.append(np.broadcast_to(pin, (k, bank.dim)))
        else:
            support.append(vectors[:k])
        support_images.append(picks[:k])
        query.append(vectors[k:])
        query_images.append(picks[k:])
        labels.append(np.full(need - k, label, dtype=np.int64))
        class_ids.append(cls.class_id)

    order = rng.permutation(sum(len(q) for q in query))
    return Task(
        ways=len(chosen),
        support=np.stack(support),
        query=np.concatenate(query).reshape(-1, bank.dim)[order],
        query_labels=np.concatenate(labels)[order],
        episode_seed=seed,
        class_ids=tuple(class_ids),
        support_images=np.stack(support_images),
        query_images=np.concatenate(query_images)[order],
    )


def sample_task(
    bank: FeatureBank,
    n: int,
    k: int,
    q: int,
    rng_seed: int,
    pins: Optional[Mapping[int, np.ndarray]] = None,
    use_as: bool = True,
    views: Optional[int] = None,
) -> Task:
    """Draw n classes, then k + q images per class; the first k form the support set.

    Multi-view images are reduced to one vector each: the average of the first
    ``views`` views (all by default) with AS, view 0 without.
    """
    _check_views(bank, use_as, views)
    rng = generator(rng_seed)
    chosen = _choose_classes(bank, n, rng)
    return _assemble(bank, chosen, k, [q] * n, rng, rng_seed, pins, use_as, views)


def sample_imbalanced_task(
    bank: FeatureBank,
    n: int,
    k: int,
    spec: ImbalanceSpec,
    rng_seed: int,
    pins: Optional[Mapping[int, np.ndarray]] = None,
    use_as: bool = True,
    views: Optional[int] = None,
) -> Task:
    """Like sample_task, but per-class query counts follow a symmetric Dirichlet draw."""
    if spec.q_total < n:
        raise ConfigError(f"q_total ({spec.q_total}) must be at least n ({n})")
    _check_views(bank, use_as, views)
    rng = generator(rng_seed)
    chosen = _choose_classes(bank, n, rng)
    proportions = rng.dirichlet(np.full(n, spec.dirichlet_a))
    counts = largest_remainder(proportions, spec.q_total)
    return _assemble(bank, chosen, k, counts, rng, rng_seed, pins, use_as, views)
