"""
FVB1 feature bank files.

Layout (little-endian):
    header:    magic "FVB1" | version u32 (=1) | dim u32 | n_views u32 | n_classes u32
    per class: class_id u32 | n_images u32 | n_images * n_views * dim float32
Images are contiguous, views contiguous within an image. An optional sidecar
``<bank>.json`` holds ``{source_id, class_names}`` and is informational only.
"""
import json
import logging
import struct
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np

from app.core.errors import (
    BadMagic,
    BankIOError,
    DimensionMismatch,
    InvalidBank,
    NonFiniteValue,
    TruncatedFile,
)
from app.features.base import BankReport, ClassFeatures, FeatureBank, freeze

logger = logging.getLogger(__name__)

MAGIC = b"FVB1"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")
_RECORD = struct.Struct("<II")
_FLOAT = np.dtype("<f4")
_MAX_REPORTED_NONFINITE = 100

FORMAT_DESCRIPTION = """\
FVB1 feature bank (all integers u32 little-endian, values IEEE-754 float32 little-endian)

offset  size  field
0       4     magic "FVB1"
4       4     format version (1)
8       4     dim        feature dimension d >= 1
12      4     n_views    views per image (1 when no augmented crops)
16      4     n_classes
then n_classes records, in class order:
        4     class_id   unique within the bank
        4     n_images   >= 1
        n_images * n_views * dim * 4   values, image-major, then view, then coordinate

Values must be finite. Sidecar (optional): <bank>.json = {"source_id": str, "class_names": {class_id: name}}
"""

PathLike = Union[str, Path]


def load_feature_bank(path: PathLike, source_id: Optional[str] = None) -> FeatureBank:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise BankIOError(f"Cannot read feature bank {path}: {e}") from e

    if source_id is None:
        manifest = load_manifest(path)
        source_id = manifest.get("source_id") if manifest else None
    bank = parse_feature_bank(data, source_id=source_id or path.stem)
    logger.info(
        "BANK LOADED %s: %d classes, dim=%d, n_views=%d",
        path, bank.n_classes, bank.dim, bank.n_views,
    )
    return bank


def parse_feature_bank(data: bytes, source_id: str = "") -> FeatureBank:
    if data[:4] != MAGIC:
        if len(data) < 4 and MAGIC.startswith(data):
            raise TruncatedFile(f"File ends inside the magic bytes ({len(data)} bytes)")
        raise BadMagic(f"Expected magic {MAGIC!r}, found {data[:4]!r}")
    if len(data) < _HEADER.size:
        raise TruncatedFile(f"Header needs {_HEADER.size} bytes, file has {len(data)}")

    _, version, dim, n_views, n_classes = _HEADER.unpack_from(data, 0)
    if version != VERSION:
        raise BadMagic(f"Unsupported FVB1 version {version}")
    if dim < 1 or n_views < 1:
        raise InvalidBank(f"Header declares dim={dim}, n_views={n_views}; both must be >= 1")

    offset = _HEADER.size
    classes = []
    seen = set()
    for index in range(n_classes):
        if len(data) - offset < _RECORD.size:
            raise TruncatedFile(f"Class record {index} header is cut short at byte {offset}")
        class_id, n_images = _RECORD.unpack_from(data, offset)
        offset += _RECORD.size

        n_values = n_images * n_views * dim
        needed = n_values * _FLOAT.itemsize
        available = len(data) - offset
        if available < needed:
            whole_vectors = (
                available > 0
                and available % _FLOAT.itemsize == 0
                and (available // _FLOAT.itemsize) % max(n_images * n_views, 1) == 0
            )
            if whole_vectors:
                found = available // _FLOAT.itemsize // (n_images * n_views)
                raise DimensionMismatch(
                    f"Class {class_id}: header declares dim={dim} but payload holds {found}-value vectors"
                )
            raise TruncatedFile(f"Class {class_id}: needs {needed} payload bytes, {available} left")

        if n_images == 0:
            raise InvalidBank(f"Class {class_id} holds no images")
        if class_id in seen:
            raise InvalidBank(f"Duplicate class id {class_id}")
        seen.add(class_id)

        values = np.frombuffer(data, dtype=_FLOAT, count=n_values, offset=offset)
        images = values.reshape(n_images, n_views, dim)
        offset += needed

        bad = ~np.isfinite(images)
        if bad.any():
            image, view, coordinate = (int(i) for i in np.argwhere(bad)[0])
            raise NonFiniteValue(
                f"Class {class_id}, image {image}, view {view}, coordinate {coordinate} is not finite"
            )
        classes.append(ClassFeatures(class_id=int(class_id), images=freeze(images)))

    if offset != len(data):
        raise DimensionMismatch(
            f"{len(data) - offset} trailing bytes after the last class record; payload disagrees with header"
        )

    return FeatureBank(dim=int(dim), n_views=int(n_views), classes=tuple(classes), source_id=source_id)


def write_feature_bank(bank: FeatureBank, path: PathLike) -> None:
    report = validate_bank(bank)
    if not report.ok:
        raise InvalidBank(f"Refusing to write invalid bank: {report.violations[0].message}")

    chunks = [_HEADER.pack(MAGIC, VERSION, bank.dim, bank.n_views, bank.n_classes)]
    for cls in bank.classes:
        chunks.append(_RECORD.pack(cls.class_id, cls.n_images))
        chunks.append(np.ascontiguousarray(cls.images, dtype=_FLOAT).tobytes())

    path = Path(path)
    try:
        path.write_bytes(b"".join(chunks))
    except OSError as e:
        raise BankIOError(f"Cannot write feature bank {path}: {e}") from e
    logger.info("BANK WRITTEN %s (%d classes)", path, bank.n_classes)


def validate_bank(bank: FeatureBank) -> BankReport:
    """Collect every invariant violation; an empty report means the bank is valid."""
    report = BankReport()
    if bank.dim < 1:
        report.add("dimension", f"dim must be >= 1, got {bank.dim}")
    if bank.n_views < 1:
        report.add("views", f"n_views must be >= 1, got {bank.n_views}")
    if not bank.classes:
        report.add("empty_bank", "bank holds no classes")

    seen = set()
    for cls in bank.classes:
        if cls.class_id in seen:
            report.add("duplicate_class", f"class id {cls.class_id} appears more than once", class_id=cls.class_id)
        seen.add(cls.class_id)
        if not 0 <= cls.class_id < 2**32:
            report.add("class_id", f"class id {cls.class_id} does not fit u32", class_id=cls.class_id)

        images = np.asarray(cls.images)
        if images.ndim != 3 or images.shape[1:] != (bank.n_views, bank.dim):
            report.add(
                "shape",
                f"class {cls.class_id}: images shape {images.shape} is not (n_images, {bank.n_views}, {bank.dim})",
                class_id=cls.class_id,
            )
            continue
        if images.shape[0] == 0:
            report.add("empty_class", f"class {cls.class_id} holds no images", class_id=cls.class_id)
            continue

        bad = np.argwhere(~np.isfinite(images))
        for image, view, coordinate in bad[:_MAX_REPORTED_NONFINITE]:
            report.add(
                "non_finite",
                f"class {cls.class_id}, image {image}, view {view}, coordinate {coordinate} is not finite",
                class_id=cls.class_id, image=int(image), view=int(view), coordinate=int(coordinate),
            )
        if len(bad) > _MAX_REPORTED_NONFINITE:
            report.add(
                "non_finite",
                f"class {cls.class_id}: {len(bad) - _MAX_REPORTED_NONFINITE} more non-finite values not listed",
                class_id=cls.class_id,
            )
    return report


def check_ensemble(banks: Sequence[FeatureBank]) -> BankReport:
    """Banks concatenated per image must agree on classes, image counts and views."""
    report = BankReport()
    if not banks:
        report.add("empty_ensemble", "no banks given")
        return report

    reference = banks[0]
    ref_ids = set(reference.class_ids)
    ref_counts = dict(zip(reference.class_ids, reference.image_counts()))
    for position, bank in enumerate(banks[1:], start=1):
        ids = set(bank.class_ids)
        difference = sorted(ref_ids ^ ids)
        if difference:
            report.add(
                "class_set",
                f"bank {position} ({bank.source_id}) class sets differ from bank 0: symmetric difference {difference}",
            )
        if bank.class_ids != reference.class_ids and not difference:
            report.add("class_order", f"bank {position} ({bank.source_id}) lists classes in a different order")
        if bank.n_views != reference.n_views:
            report.add("views", f"bank {position} has n_views={bank.n_views}, bank 0 has {reference.n_views}")
        for class_id, count in zip(bank.class_ids, bank.image_counts()):
            if class_id in ref_counts and ref_counts[class_id] != count:
                report.add(
                    "image_count",
                    f"class {class_id}: bank {position} holds {count} images, bank 0 holds {ref_counts[class_id]}",
                    class_id=class_id,
                )
    return report


def manifest_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_manifest(path: PathLike, source_id: str, class_names: Optional[Dict[int, str]] = None) -> Path:
    target = manifest_path(path)
    payload = {
        "source_id": source_id,
        "class_names": {str(k): v for k, v in (class_names or {}).items()},
    }
    try:
        target.write_text(json.dumps(payload, ensure_ascii=False, indent=2))
    except OSError as e:
        raise BankIOError(f"Cannot write manifest {target}: {e}") from e
    return target


def load_manifest(path: PathLike) -> Optional[dict]:
    target = manifest_path(path)
    if not target.exists():
        return None
    try:
        payload = json.loads(target.read_text())
    except (OSError, json.JSONDecodeError) as e:
        logger.warning("MANIFEST IGNORED %s: %s", target, e)
        return None
    names = payload.get("class_names") or {}
    payload["class_names"] = {int(k): v for k, v in names.items()}
    return payload
