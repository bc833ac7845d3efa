"""Metadata catalog: JSON Lines records for masks and images.

Each line is one record discriminated by ``kind`` ("mask" or "image").
Relative ``path`` fields resolve against the catalog file's directory.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from . import masks
from .masks import PathLike, Roi


class CatalogError(ValueError):
    pass


@dataclass(frozen=True)
class MaskRecord:
    mask_id: int
    image_id: int
    model_id: int
    mask_type: int
    path: str

    def to_json(self) -> dict:
        return {
            "kind": "mask",
            "mask_id": self.mask_id,
            "image_id": self.image_id,
            "model_id": self.model_id,
            "mask_type": self.mask_type,
            "path": self.path,
        }


@dataclass(frozen=True)
class ImageRecord:
    image_id: int
    true_label: int
    pred_label: int
    path: str | None = None
    object_roi: Roi | None = None

    def to_json(self) -> dict:
        rec: dict = {
            "kind": "image",
            "image_id": self.image_id,
            "true_label": self.true_label,
            "pred_label": self.pred_label,
        }
        if self.path is not None:
            rec["path"] = self.path
        if self.object_roi is not None:
            rec["object_roi"] = list(self.object_roi.as_tuple())
        return rec


def _parse_record(obj: dict, lineno: int) -> MaskRecord | ImageRecord:
    try:
        kind = obj["kind"]
        if kind == "mask":
            return MaskRecord(
                mask_id=int(obj["mask_id"]),
                image_id=int(obj["image_id"]),
                model_id=int(obj["model_id"]),
                mask_type=int(obj["mask_type"]),
                path=str(obj["path"]),
            )
        if kind == "image":
            roi = None
            if obj.get("object_roi") is not None:
                r0, c0, r1, c1 = obj["object_roi"]
                roi = Roi(int(r0), int(c0), int(r1), int(c1))
            return ImageRecord(
                image_id=int(obj["image_id"]),
                true_label=int(obj["true_label"]),
                pred_label=int(obj["pred_label"]),
                path=str(obj["path"]) if obj.get("path") is not None else None,
                object_roi=roi,
            )
        raise CatalogError(f"line {lineno}: unknown record kind {kind!r}")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CatalogError):
            raise
        raise CatalogError(f"line {lineno}: malformed record: {exc}") from exc


class Catalog:
    """In-memory catalog with unique-key indexes on mask_id and image_id."""

    def __init__(self, base_dir: PathLike = "."):
        self.base_dir = Path(base_dir)
        self.masks: dict[int, MaskRecord] = {}
        self.images: dict[int, ImageRecord] = {}

    def __repr__(self) -> str:
        return f"Catalog({len(self.masks)} masks, {len(self.images)} images)"

    def add(self, record: MaskRecord | ImageRecord) -> None:
        if isinstance(record, MaskRecord):
            if record.mask_id in self.masks:
                raise CatalogError(f"duplicate mask_id {record.mask_id}")
            self.masks[record.mask_id] = record
        else:
            if record.image_id in self.images:
                raise CatalogError(f"duplicate image_id {record.image_id}")
            self.images[record.image_id] = record

    def mask_ids(self) -> list[int]:
        return sorted(self.masks)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def mask_path(self, mask_id: int) -> Path:
        return self.resolve(self.masks[mask_id].path)

    def image_path(self, image_id: int) -> Path | None:
        rec = self.images[image_id]
        return self.resolve(rec.path) if rec.path is not None else None


def catalog_load(path: PathLike) -> Catalog:
    """Load a JSON Lines catalog; malformed lines are reported with numbers."""
    path = Path(path)
    cat = Catalog(base_dir=path.parent)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CatalogError(f"line {lineno}: invalid JSON: {exc}") from exc
            cat.add(_parse_record(obj, lineno))
    return cat


def catalog_save(cat: Catalog, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for mask_id in sorted(cat.masks):
            fh.write(json.dumps(cat.masks[mask_id].to_json()) + "\n")
        for image_id in sorted(cat.images):
            fh.write(json.dumps(cat.images[image_id].to_json()) + "\n")


def catalog_append(path: PathLike, records: Iterable[MaskRecord | ImageRecord]) -> Catalog:
    """Append records, rejecting duplicates before touching the file."""
    cat = catalog_load(path)
    new = list(records)
    for rec in new:
        cat.add(rec)  # raises on duplicates, file untouched
    with open(path, "a", encoding="utf-8") as fh:
        for rec in new:
            fh.write(json.dumps(rec.to_json()) + "\n")
    return cat


class MaskStore:
    """Per-query mask access with load accounting.

    A full payload decode counts as one load per distinct mask; header peeks
    for dimensions are free.  Loaded masks are cached for the lifetime of the
    store (one query).
    """

    def __init__(self, catalog: Catalog):
        self.catalog = catalog
        self._cache: dict[int, object] = {}
        self._dims: dict[int, tuple[int, int]] = {}
        self._lock = threading.Lock()

    @property
    def loads(self) -> int:
        return len(self._cache)

    @property
    def loaded_ids(self) -> set[int]:
        return set(self._cache)

    def load(self, mask_id: int):
        # double-checked under the lock so parallel verification is safe
        arr = self._cache.get(mask_id)
        if arr is None:
            decoded = masks.load_mask(self.catalog.mask_path(mask_id))
            with self._lock:
                arr = self._cache.setdefault(mask_id, decoded)
        return arr

    def dims(self, mask_id: int) -> tuple[int, int]:
        if mask_id in self._cache:
            arr = self._cache[mask_id]
            return arr.shape[0], arr.shape[1]  # type: ignore[union-attr]
        if mask_id not in self._dims:
            self._dims[mask_id] = masks.mask_dims(self.catalog.mask_path(mask_id))
        return self._dims[mask_id]
