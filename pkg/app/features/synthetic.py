"""
Synthetic feature banks: isotropic Gaussian clusters whose means sit on the
vertices of a regular simplex, so every pair of classes is equally far apart.
"""
import logging
from typing import Dict, List, Optional

import numpy as np
from scipy.stats import norm

from app.core.errors import InvalidSpec, UnsupportedSpec
from app.features.base import ClassFeatures, FeatureBank, freeze
from app.fewshot.rng import derive_seed, generator
from app.schemas import SyntheticSpec

logger = logging.getLogger(__name__)

_BASE_SALT = 0xBA5E


def _check(spec: SyntheticSpec) -> None:
    if spec.n_classes < 2:
        raise InvalidSpec("A synthetic bank needs at least 2 classes")
    if spec.dim < spec.n_classes - 1:
        raise InvalidSpec(f"dim={spec.dim} cannot hold a simplex of {spec.n_classes} classes (needs >= {spec.n_classes - 1})")
    if spec.sigma <= 0 or spec.separation < 0 or spec.view_noise < 0:
        raise InvalidSpec("sigma must be positive, separation and view_noise non-negative")


def simplex_means(n_classes: int, dim: int, separation: float) -> np.ndarray:
    """Regular simplex with all pairwise distances equal to ``separation``, centered at the origin."""
    # Helmert rows are orthonormal and orthogonal to the all-ones vector
    helmert = np.zeros((n_classes - 1, n_classes))
    for j in range(1, n_classes):
        helmert[j - 1, :j] = 1.0
        helmert[j - 1, j] = -float(j)
        helmert[j - 1] /= np.sqrt(j * (j + 1))
    means = np.zeros((n_classes, dim))
    means[:, : n_classes - 1] = helmert.T * (separation / np.sqrt(2.0))
    return means


def class_means(spec: SyntheticSpec) -> np.ndarray:
    _check(spec)
    return simplex_means(spec.n_classes, spec.dim, spec.separation)


def generate_bank(spec: SyntheticSpec) -> FeatureBank:
    means = class_means(spec)
    rng = generator(spec.seed)
    classes = []
    for class_id in range(spec.n_classes):
        images = means[class_id] + rng.normal(0.0, spec.sigma, size=(spec.images_per_class, spec.dim))
        views = np.repeat(images[:, None, :], spec.n_views, axis=1)
        if spec.view_noise > 0:
            views = views + rng.normal(0.0, spec.view_noise, size=views.shape)
        classes.append(ClassFeatures(class_id=class_id, images=freeze(views.astype(np.float32))))

    logger.info(
        "SYNTHETIC BANK seed=%d: %d classes x %d images, dim=%d, d=%.3g, sigma=%.3g",
        spec.seed, spec.n_classes, spec.images_per_class, spec.dim, spec.separation, spec.sigma,
    )
    return FeatureBank(
        dim=spec.dim,
        n_views=spec.n_views,
        classes=tuple(classes),
        source_id=f"synthetic-{spec.seed}",
    )


def backbone_seed(spec: SyntheticSpec, index: int) -> int:
    return spec.seed if index == 0 else derive_seed(spec.seed, index)


def generate_ensemble(spec: SyntheticSpec, backbones: int) -> List[FeatureBank]:
    """Banks sharing class means but drawing independent noise, one per simulated backbone."""
    if backbones < 1:
        raise InvalidSpec("At least one backbone is required")
    return [
        generate_bank(spec.model_copy(update={"seed": backbone_seed(spec, i)}))
        for i in range(backbones)
    ]


def generate_base_bank(spec: SyntheticSpec) -> FeatureBank:
    """An independent draw standing in for the base classes' features (mean near the origin)."""
    return generate_bank(spec.model_copy(update={"seed": derive_seed(spec.seed, _BASE_SALT)}))


def support_pins(spec: SyntheticSpec) -> Optional[Dict[int, np.ndarray]]:
    """True class means keyed by class id when supports are pinned, else None."""
    if not spec.pin_supports_to_means:
        return None
    means = class_means(spec)
    return {class_id: means[class_id] for class_id in range(spec.n_classes)}


def oracle_accuracy(spec: SyntheticSpec, views: Optional[int] = None, backbones: int = 1) -> float:
    """Exact NCM accuracy for 2 classes with supports pinned to the true means.

    A query is correct when its projection on the inter-mean axis falls on its
    own side of the midpoint: Phi(sqrt(b) * d / (2 * sigma_eff)), where
    sigma_eff**2 = sigma**2 + view_noise**2 / views.
    """
    if spec.n_classes != 2 or not spec.pin_supports_to_means:
        raise UnsupportedSpec("The closed form only covers 2 classes with pinned supports")
    n_views = spec.n_views if views is None else views
    if n_views < 1 or backbones < 1:
        raise UnsupportedSpec("views and backbones must be positive")
    sigma_eff = np.sqrt(spec.sigma**2 + spec.view_noise**2 / n_views)
    return float(norm.cdf(np.sqrt(backbones) * spec.separation / (2.0 * sigma_eff)))
