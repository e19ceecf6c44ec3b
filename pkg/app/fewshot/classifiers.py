"""
Nearest class mean (inductive) and temperature-weighted soft K-means
(transductive). Distances are exact squared L2 in float64; argmin ties go to
the lowest class index.
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from app.core.errors import ConfigError, DimensionMismatch, EmptyClass
from app.fewshot.sampler import Task
from app.schemas import SoftKMeansConfig


@dataclass(frozen=True)
class Barycenters:
    centers: np.ndarray  # (ways, dim)
    iteration: int = 0

    @property
    def ways(self) -> int:
        return int(self.centers.shape[0])

    @property
    def dim(self) -> int:
        return int(self.centers.shape[1])


def squared_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """(m, d) x (n, d) -> (m, n)."""
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("mnd,mnd->mn", diff, diff)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=-1, keepdims=True)


def _as_points(z, bary: Barycenters) -> np.ndarray:
    points = np.asarray(z, dtype=np.float64)
    if points.shape[-1] != bary.dim:
        raise DimensionMismatch(f"Vector dimension {points.shape[-1]} does not match barycenters ({bary.dim})")
    return points


def ncm_barycenters(support: Union[np.ndarray, Sequence]) -> Barycenters:
    if isinstance(support, np.ndarray) and support.ndim == 3:
        if support.shape[1] == 0:
            raise EmptyClass("Every class needs at least one support vector")
        return Barycenters(centers=support.astype(np.float64).mean(axis=1))

    centers = []
    for index, vectors in enumerate(support):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.size == 0:
            raise EmptyClass(f"Class {index} has no support vectors")
        centers.append(vectors.reshape(-1, vectors.shape[-1]).mean(axis=0))
    try:
        return Barycenters(centers=np.stack(centers))
    except ValueError as e:
        raise DimensionMismatch(f"Support sets have different dimensions: {e}") from e


def ncm_predict(query, bary: Barycenters):
    """Index of the closest barycenter; an int for one vector, an array for a batch."""
    points = _as_points(query, bary)
    if points.ndim == 1:
        return int(np.argmin(squared_distances(points[None, :], bary.centers)[0]))
    return np.argmin(squared_distances(points.reshape(-1, bary.dim), bary.centers), axis=1)


def soft_weights(z, bary: Barycenters, beta: float, support_class: Optional[int] = None) -> np.ndarray:
    """Association weights of one vector to every barycenter.

    Support vectors belong to their own class only; query weights are a softmax
    of -beta * squared distance.
    """
    if beta <= 0:
        raise ConfigError(f"beta must be positive, got {beta}")
    point = _as_points(z, bary)
    if support_class is not None:
        weights = np.zeros(bary.ways)
        weights[support_class] = 1.0
        return weights
    return _softmax(-beta * squared_distances(point[None, :], bary.centers)[0])


def query_weights(query: np.ndarray, bary: Barycenters, beta: float) -> np.ndarray:
    """Batched soft_weights for query vectors, shape (n_queries, ways)."""
    if beta <= 0:
        raise ConfigError(f"beta must be positive, got {beta}")
    points = _as_points(query, bary)
    return _softmax(-beta * squared_distances(points, bary.centers))


def soft_kmeans_step(task: Task, bary: Barycenters, config: SoftKMeansConfig) -> Barycenters:
    if task.dim != bary.dim:
        raise DimensionMismatch(f"Task dimension {task.dim} does not match barycenters ({bary.dim})")
    numerator = task.support.sum(axis=1)
    denominator = np.full(task.ways, float(task.shots))
    if task.n_queries:
        weights = query_weights(task.query, bary, config.beta)
        # einsum keeps the reduction order fixed (no threaded BLAS)
        numerator = numerator + np.einsum("mn,md->nd", weights, task.query)
        denominator = denominator + weights.sum(axis=0)
    return Barycenters(centers=numerator / denominator[:, None], iteration=bary.iteration + 1)


def soft_kmeans_fit(task: Task, config: SoftKMeansConfig) -> Barycenters:
    """Refine NCM barycenters until no center moves by shift_tol or max_iters is hit."""
    bary = ncm_barycenters(task.support)
    for _ in range(config.max_iters):
        updated = soft_kmeans_step(task, bary, config)
        shift = float(np.linalg.norm(updated.centers - bary.centers, axis=1).max())
        bary = updated
        if shift < config.shift_tol:
            break
    return bary


def soft_kmeans_predict(task: Task, config: SoftKMeansConfig) -> np.ndarray:
    bary = soft_kmeans_fit(task, config)
    return np.atleast_1d(ncm_predict(task.query.reshape(-1, task.dim), bary))
