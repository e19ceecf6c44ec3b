from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class ClassFeatures:
    class_id: int
    images: np.ndarray  # (n_images, n_views, dim); views contiguous within an image

    @property
    def n_images(self) -> int:
        return int(self.images.shape[0])


@dataclass(frozen=True)
class FeatureBank:
    """Per-image, per-view feature vectors of one backbone, grouped by class."""

    dim: int
    n_views: int
    classes: Tuple[ClassFeatures, ...]
    source_id: str = ""

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def class_ids(self) -> List[int]:
        return [c.class_id for c in self.classes]

    def image_counts(self) -> List[int]:
        return [c.n_images for c in self.classes]


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    class_id: Optional[int] = None
    image: Optional[int] = None
    view: Optional[int] = None
    coordinate: Optional[int] = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass
class BankReport:
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, kind: str, message: str, **where) -> None:
        self.violations.append(Violation(kind=kind, message=message, **where))

    def to_dict(self) -> dict:
        return {"ok": self.ok, "violations": [v.to_dict() for v in self.violations]}


def freeze(array: np.ndarray) -> np.ndarray:
    """Mark an array read-only so banks can be shared between workers."""
    array.flags.writeable = False
    return array
