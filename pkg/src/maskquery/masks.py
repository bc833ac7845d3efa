"""Mask payloads: file formats, ROI geometry, and exact pixel counting.

Masks are 2-D float32 arrays with values in [0, 1].  Two on-disk formats are
supported:

* MSK1 — magic ``MSK1``, u32 LE height, u32 LE width, then height*width
  float32 LE values, row-major.  Lossless round-trip.
* PGM (P5, 8-bit binary) — bytes map to values as ``v = byte / 255``.

``cp_exact`` is the ground-truth pixel counter every other component is
checked against.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MSK1_MAGIC = b"MSK1"

PathLike = str | Path


class MaskFormatError(ValueError):
    """Raised for malformed mask files or invalid mask data."""


@dataclass(frozen=True)
class Roi:
    """Axis-aligned rectangle, (row, col) order, half-open on the far edges."""

    r0: int
    c0: int
    r1: int
    c1: int

    def __post_init__(self) -> None:
        if not (0 <= self.r0 < self.r1 and 0 <= self.c0 < self.c1):
            raise ValueError(f"degenerate ROI {self.as_tuple()}")

    @property
    def area(self) -> int:
        return (self.r1 - self.r0) * (self.c1 - self.c0)

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.r0, self.c0, self.r1, self.c1)

    def validate_for(self, height: int, width: int) -> None:
        if self.r1 > height or self.c1 > width:
            raise ValueError(
                f"ROI {self.as_tuple()} exceeds mask dimensions {height}x{width}"
            )

    @classmethod
    def full(cls, height: int, width: int) -> "Roi":
        return cls(0, 0, height, width)


@dataclass(frozen=True)
class ValueRange:
    """Half-open value range [lv, uv); uv == 1.0 additionally admits v == 1.0."""

    lv: float
    uv: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.lv < self.uv <= 1.0):
            raise ValueError(f"invalid value range [{self.lv}, {self.uv})")

    @property
    def closed_top(self) -> bool:
        return self.uv == 1.0


def validate_mask(values: np.ndarray) -> np.ndarray:
    """Check shape and range; returns the array as float32."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise MaskFormatError(f"mask must be a non-empty 2-D grid, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise MaskFormatError("mask values out of range [0, 1]")
    return arr


def _read_pgm_header(data: bytes, path: PathLike) -> tuple[int, int, int, int]:
    """Parse a P5 header, returning (width, height, maxval, payload offset)."""
    if data[:2] != b"P5":
        raise MaskFormatError(f"{path}: not a P5 PGM file")
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise MaskFormatError(f"{path}: malformed PGM header")
        fields.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise MaskFormatError(f"{path}: malformed PGM header")
    pos += 1  # single whitespace byte before the raster
    width, height, maxval = fields
    if width < 1 or height < 1 or not (1 <= maxval <= 255):
        raise MaskFormatError(f"{path}: unsupported PGM geometry or maxval")
    return width, height, maxval, pos


def load_mask(path: PathLike) -> np.ndarray:
    """Load a mask from an MSK1 or 8-bit binary PGM file."""
    data = Path(path).read_bytes()
    if data[:4] == MSK1_MAGIC:
        if len(data) < 12:
            raise MaskFormatError(f"{path}: truncated MSK1 header")
        height, width = struct.unpack_from("<II", data, 4)
        if height < 1 or width < 1:
            raise MaskFormatError(f"{path}: invalid MSK1 dimensions {height}x{width}")
        expected = 12 + height * width * 4
        if len(data) < expected:
            raise MaskFormatError(
                f"{path}: truncated MSK1 payload ({len(data)} bytes, expected {expected})"
            )
        values = np.frombuffer(data, dtype="<f4", count=height * width, offset=12)
        return validate_mask(values.reshape(height, width))
    if data[:2] == b"P5":
        width, height, _, offset = _read_pgm_header(data, path)
        expected = offset + height * width
        if len(data) < expected:
            raise MaskFormatError(f"{path}: truncated PGM payload")
        raw = np.frombuffer(data, dtype=np.uint8, count=height * width, offset=offset)
        values = raw.reshape(height, width).astype(np.float32) / np.float32(255.0)
        return values
    raise MaskFormatError(f"{path}: unrecognized mask format")


def save_mask(mask: np.ndarray, path: PathLike) -> None:
    """Write a mask as MSK1; load_mask round-trips bit-exactly."""
    arr = validate_mask(mask)
    height, width = arr.shape
    with open(path, "wb") as fh:
        fh.write(MSK1_MAGIC)
        fh.write(struct.pack("<II", height, width))
        fh.write(arr.astype("<f4", copy=False).tobytes())


def mask_dims(path: PathLike) -> tuple[int, int]:
    """Read (height, width) from a mask file header without decoding the payload."""
    p = Path(path)
    with open(p, "rb") as fh:
        head = fh.read(64)
    if head[:4] == MSK1_MAGIC:
        if len(head) < 12:
            raise MaskFormatError(f"{path}: truncated MSK1 header")
        height, width = struct.unpack_from("<II", head, 4)
        if height < 1 or width < 1:
            raise MaskFormatError(f"{path}: invalid MSK1 dimensions")
        return height, width
    if head[:2] == b"P5":
        data = head if len(head) < 64 else p.read_bytes()
        width, height, _, _ = _read_pgm_header(data, path)
        return height, width
    raise MaskFormatError(f"{path}: unrecognized mask format")


def in_range(mask: np.ndarray, vrange: ValueRange) -> np.ndarray:
    """Boolean grid of pixels whose value falls in the range."""
    if vrange.closed_top:
        return (mask >= vrange.lv) & (mask <= 1.0)
    return (mask >= vrange.lv) & (mask < vrange.uv)


def cp_exact(mask: np.ndarray, roi: Roi, vrange: ValueRange) -> int:
    """Count pixels inside the ROI whose values fall in the range.

    This is the exact oracle; index bounds must always bracket it.
    """
    roi.validate_for(mask.shape[0], mask.shape[1])
    window = mask[roi.r0 : roi.r1, roi.c0 : roi.c1]
    return int(np.count_nonzero(in_range(window, vrange)))


def threshold_mask(mask: np.ndarray, t: float) -> np.ndarray:
    """Binarize: 1.0 where value > t, else 0.0."""
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"threshold {t} outside [0, 1]")
    return (mask > t).astype(np.float32)


def is_binary(mask: np.ndarray) -> bool:
    return bool(np.all((mask == 0.0) | (mask == 1.0)))


def combine_masks(masks: list[np.ndarray], op: str) -> np.ndarray:
    """Pixelwise intersection (min) or union (max) of binary masks."""
    if not masks:
        raise ValueError("combine_masks requires at least one mask")
    if op not in ("intersect", "union"):
        raise ValueError(f"unknown combine op {op!r}")
    shape = masks[0].shape
    for m in masks:
        if m.shape != shape:
            raise ValueError(f"mask dimension mismatch: {m.shape} vs {shape}")
        if not is_binary(m):
            raise ValueError("combine_masks requires binary masks")
    stacked = np.stack(masks)
    out = stacked.min(axis=0) if op == "intersect" else stacked.max(axis=0)
    return out.astype(np.float32)
