"""Cumulative histogram index over masks.

Per mask, the index stores one reverse-cumulative value histogram per grid
cell: ``counts[i]`` = number of pixels in the cell whose value bucket is >= i,
with ``bucket(v)`` = index of the last edge <= v, edges at i/B.  Differences
of two entries give exact counts for bucket-aligned ranges over cell-aligned
regions; expanding/contracting an arbitrary ROI to cell boundaries and the
value range to bucket edges yields sound lower/upper bounds on the exact
pixel count without touching the mask payload.

On-disk CHI1 format (all little-endian):

    magic "CHI1", u32 version=1, u32 buckets, u32 cell_h, u32 cell_w,
    u64 mask_count, then per mask: u64 mask_id, u32 grid_rows, u32 grid_cols,
    grid_rows*grid_cols*buckets u32 counts (cells row-major, bucket-minor).
"""

from __future__ import annotations

import math
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .masks import PathLike, Roi, ValueRange, validate_mask

CHI1_MAGIC = b"CHI1"
CHI1_VERSION = 1
_HEADER = struct.Struct("<4sIIIIQ")
_MASK_HEADER = struct.Struct("<QII")


class ChiFormatError(ValueError):
    pass


class MaskNotIndexed(KeyError):
    pass


@dataclass(frozen=True)
class ChiConfig:
    """Index granularity: B value buckets of width 1/B, cells of cell_h x cell_w."""

    buckets: int = 16
    cell_h: int = 32
    cell_w: int = 32

    def __post_init__(self) -> None:
        if self.buckets < 2:
            raise ValueError("need at least 2 value buckets")
        if self.cell_h < 1 or self.cell_w < 1:
            raise ValueError("cell dimensions must be positive")

    @property
    def delta(self) -> float:
        return 1.0 / self.buckets

    def edges(self) -> np.ndarray:
        """Bucket lower edges i/B, i in [0, B)."""
        return np.arange(self.buckets, dtype=np.float64) / self.buckets

    def grid_shape(self, height: int, width: int) -> tuple[int, int]:
        return (-(-height // self.cell_h), -(-width // self.cell_w))


DEFAULT_CONFIG = ChiConfig()


class BoundPair(NamedTuple):
    lower: int
    upper: int


@dataclass(frozen=True)
class AlignedRegions:
    """Cell-aligned envelope of an ROI: cover ⊇ roi ⊇ inner (inner may be None)."""

    cover: Roi
    inner: Roi | None


def bucket_floor(buckets: int, x: float) -> int:
    """Largest a in [0, B] with a/B <= x (x in [0, 1])."""
    a = min(int(math.floor(x * buckets)), buckets)
    while a + 1 <= buckets and (a + 1) / buckets <= x:
        a += 1
    while a > 0 and a / buckets > x:
        a -= 1
    return a


def bucket_ceil(buckets: int, x: float) -> int:
    """Smallest a in [0, B] with a/B >= x (x in [0, 1])."""
    a = max(0, min(int(math.ceil(x * buckets)), buckets))
    while a - 1 >= 0 and (a - 1) / buckets >= x:
        a -= 1
    while a < buckets and a / buckets < x:
        a += 1
    return a


def bucket_above(buckets: int, x: float) -> int:
    """Smallest a with a/B > x; may be B + 1 when x == 1.0."""
    a = bucket_ceil(buckets, x)
    return a if a / buckets > x else a + 1


def range_to_buckets(buckets: int, vrange: ValueRange) -> tuple[int, int, int, int]:
    """(a_lo, a_hi, b_lo, b_hi): outer/inner bucket envelopes of the range."""
    a_lo = bucket_floor(buckets, vrange.lv)
    a_hi = bucket_ceil(buckets, vrange.lv)
    if vrange.closed_top:
        b_lo = b_hi = buckets
    else:
        b_lo = bucket_floor(buckets, vrange.uv)
        b_hi = bucket_ceil(buckets, vrange.uv)
    return a_lo, a_hi, b_lo, b_hi


def bucketize(mask: np.ndarray, buckets: int) -> np.ndarray:
    """Bucket index per pixel: index of the last edge <= value."""
    edges = np.arange(buckets, dtype=np.float64) / buckets
    return np.searchsorted(edges, mask.astype(np.float64, copy=False), side="right") - 1


def cell_histograms(mask: np.ndarray, config: ChiConfig) -> np.ndarray:
    """Reverse-cumulative per-cell histograms, shape (grid_rows, grid_cols, B)."""
    height, width = mask.shape
    rows, cols = config.grid_shape(height, width)
    buckets = config.buckets
    idx = bucketize(mask, buckets)
    hist = np.zeros((rows, cols, buckets), dtype=np.uint32)
    for gr in range(rows):
        r0, r1 = gr * config.cell_h, min((gr + 1) * config.cell_h, height)
        for gc in range(cols):
            c0, c1 = gc * config.cell_w, min((gc + 1) * config.cell_w, width)
            cell = idx[r0:r1, c0:c1].ravel()
            per_bucket = np.bincount(cell, minlength=buckets)
            # reverse cumulative: counts[i] = pixels with bucket >= i
            hist[gr, gc] = per_bucket[::-1].cumsum()[::-1].astype(np.uint32)
    return hist


def _align_coord(x: int, cell: int, limit: int, outward_low: bool) -> int:
    """Snap a coordinate to a cell boundary; `limit` (the mask edge) counts as aligned."""
    if x == limit or x % cell == 0:
        return x
    return (x // cell) * cell if outward_low else min((x // cell + 1) * cell, limit)


def align_roi(config: ChiConfig, dims: tuple[int, int], roi: Roi) -> AlignedRegions:
    """Smallest cell-aligned cover ⊇ roi and largest cell-aligned inner ⊆ roi."""
    height, width = dims
    roi.validate_for(height, width)
    ch, cw = config.cell_h, config.cell_w
    cover = Roi(
        _align_coord(roi.r0, ch, height, outward_low=True),
        _align_coord(roi.c0, cw, width, outward_low=True),
        _align_coord(roi.r1, ch, height, outward_low=False),
        _align_coord(roi.c1, cw, width, outward_low=False),
    )
    ir0 = roi.r0 if (roi.r0 % ch == 0) else (roi.r0 // ch + 1) * ch
    ic0 = roi.c0 if (roi.c0 % cw == 0) else (roi.c0 // cw + 1) * cw
    ir1 = roi.r1 if (roi.r1 == height or roi.r1 % ch == 0) else (roi.r1 // ch) * ch
    ic1 = roi.c1 if (roi.c1 == width or roi.c1 % cw == 0) else (roi.c1 // cw) * cw
    inner = Roi(ir0, ic0, ir1, ic1) if (ir0 < ir1 and ic0 < ic1) else None
    return AlignedRegions(cover=cover, inner=inner)


class Chi:
    """In-memory index: per-mask grids of reverse-cumulative cell histograms.

    Histogram insertion publishes fully-built arrays under a lock, so readers
    never observe a partial entry.
    """

    def __init__(self, config: ChiConfig):
        self.config = config
        self._hists: dict[int, np.ndarray] = {}
        self._dims: dict[int, tuple[int, int]] = {}
        self.build_errors: dict[int, str] = {}
        self.backing_path: Path | None = None
        self._write_lock = threading.Lock()

    def __contains__(self, mask_id: int) -> bool:
        return mask_id in self._hists

    def __len__(self) -> int:
        return len(self._hists)

    def mask_ids(self) -> list[int]:
        return sorted(self._hists)

    def dims(self, mask_id: int) -> tuple[int, int] | None:
        return self._dims.get(mask_id)

    def set_dims(self, mask_id: int, height: int, width: int) -> None:
        expected = self.config.grid_shape(height, width)
        got = self._hists[mask_id].shape[:2]
        if expected != got:
            raise ChiFormatError(
                f"mask {mask_id}: dims {height}x{width} imply grid {expected}, index has {got}"
            )
        self._dims[mask_id] = (height, width)

    def histogram(self, mask_id: int) -> np.ndarray:
        try:
            return self._hists[mask_id]
        except KeyError:
            raise MaskNotIndexed(mask_id) from None

    def index_mask(self, mask_id: int, mask: np.ndarray) -> None:
        """Incrementally index one loaded mask; no-op if already present."""
        if mask_id in self._hists:
            return
        arr = validate_mask(mask)
        hist = cell_histograms(arr, self.config)
        with self._write_lock:
            if mask_id in self._hists:
                return
            if self.backing_path is not None:
                _append_mask(self.backing_path, self.config, mask_id, hist)
            self._hists[mask_id] = hist
            self._dims[mask_id] = arr.shape
            self.build_errors.pop(mask_id, None)

    def _require_dims(self, mask_id: int) -> tuple[int, int]:
        dims = self._dims.get(mask_id)
        if dims is None:
            raise MaskNotIndexed(
                f"mask {mask_id}: dimensions unknown; register them via set_dims"
            )
        return dims

    def cp_aligned(self, mask_id: int, region: Roi, a: int, b: int) -> int:
        """Exact count of pixels in a cell-aligned region with bucket in [a, b)."""
        hist = self.histogram(mask_id)
        buckets = self.config.buckets
        if not (0 <= a <= b <= buckets):
            raise ValueError(f"bucket range [{a}, {b}) outside [0, {buckets}]")
        if a == b:
            return 0
        height, width = self._require_dims(mask_id)
        region.validate_for(height, width)
        ch, cw = self.config.cell_h, self.config.cell_w
        for x, cell, limit in (
            (region.r0, ch, height), (region.r1, ch, height),
            (region.c0, cw, width), (region.c1, cw, width),
        ):
            if x % cell != 0 and x != limit:
                raise ValueError(f"region {region.as_tuple()} is not cell-aligned")
        gr0, gr1 = region.r0 // ch, -(-region.r1 // ch)
        gc0, gc1 = region.c0 // cw, -(-region.c1 // cw)
        block = hist[gr0:gr1, gc0:gc1]
        total = int(block[:, :, a].sum(dtype=np.int64))
        if b < buckets:
            total -= int(block[:, :, b].sum(dtype=np.int64))
        return total

    def bounds(self, mask_id: int, roi: Roi, vrange: ValueRange) -> BoundPair:
        a_lo, a_hi, b_lo, b_hi = range_to_buckets(self.config.buckets, vrange)
        return self.bounds_for_buckets(mask_id, roi, a_lo, a_hi, b_lo, b_hi)

    def bounds_batch(self, mask_ids: list[int], roi: Roi,
                     vrange: ValueRange) -> list[BoundPair]:
        """bounds() for many same-dimension masks in one vectorized pass."""
        if not mask_ids:
            return []
        dims = self._require_dims(mask_ids[0])
        for mask_id in mask_ids:
            if self._dims.get(mask_id) != dims:
                raise ValueError("bounds_batch needs masks of identical dimensions")
        buckets = self.config.buckets
        a_lo, a_hi, b_lo, b_hi = range_to_buckets(buckets, vrange)
        regions = align_roi(self.config, dims, roi)
        cover, inner = regions.cover, regions.inner
        arr = np.stack([self.histogram(m) for m in mask_ids]).astype(np.int64)
        n = len(mask_ids)
        ch, cw = self.config.cell_h, self.config.cell_w

        def rect_sum(rect: Roi, a: int, b: int) -> np.ndarray:
            if a >= b:
                return np.zeros(n, dtype=np.int64)
            gr0, gr1 = rect.r0 // ch, -(-rect.r1 // ch)
            gc0, gc1 = rect.c0 // cw, -(-rect.c1 // cw)
            block = arr[:, gr0:gr1, gc0:gc1, :]
            total = block[..., a].sum(axis=(1, 2))
            if b < buckets:
                total = total - block[..., b].sum(axis=(1, 2))
            return total

        upper = rect_sum(cover, a_lo, min(b_hi, buckets))
        if inner is not None:
            upper2 = rect_sum(inner, a_lo, min(b_hi, buckets)) + (roi.area - inner.area)
            upper = np.minimum(upper, upper2)
        upper = np.minimum(upper, roi.area)
        lower = np.zeros(n, dtype=np.int64)
        if a_hi < b_lo:
            lower = rect_sum(cover, a_hi, b_lo) - (cover.area - roi.area)
            if inner is not None:
                lower = np.maximum(lower, rect_sum(inner, a_hi, b_lo))
            lower = np.maximum(lower, 0)
        return [BoundPair(int(lo), int(hi)) for lo, hi in zip(lower, upper)]

    def bounds_for_buckets(
        self, mask_id: int, roi: Roi, a_lo: int, a_hi: int, b_lo: int, b_hi: int
    ) -> BoundPair:
        """Bounds on the exact count from outer/inner bucket index envelopes.

        [a_lo, b_hi) must cover the value range, [a_hi, b_lo) must be covered
        by it; the region envelopes come from align_roi.
        """
        dims = self._require_dims(mask_id)
        regions = align_roi(self.config, dims, roi)
        cover, inner = regions.cover, regions.inner
        buckets = self.config.buckets

        cover_count = self.cp_aligned(mask_id, cover, a_lo, min(b_hi, buckets))
        upper1 = cover_count
        if inner is not None:
            inner_count = self.cp_aligned(mask_id, inner, a_lo, min(b_hi, buckets))
            upper2 = inner_count + roi.area - inner.area
        else:
            upper2 = roi.area
        upper = min(upper1, upper2)

        lower = 0
        if a_hi < b_lo:
            if inner is not None:
                lower = self.cp_aligned(mask_id, inner, a_hi, b_lo)
            lower2 = self.cp_aligned(mask_id, cover, a_hi, b_lo) - (cover.area - roi.area)
            lower = max(lower, lower2, 0)
        return BoundPair(lower, min(upper, roi.area))


def build_index(
    catalog,
    config: ChiConfig = DEFAULT_CONFIG,
    load: Callable[[int], np.ndarray] | None = None,
) -> Chi:
    """Index every catalog mask; unloadable masks are recorded and skipped."""
    from .masks import load_mask  # local import to keep module load light

    chi = Chi(config)
    for mask_id in catalog.mask_ids():
        try:
            mask = load(mask_id) if load else load_mask(catalog.mask_path(mask_id))
            chi.index_mask(mask_id, mask)
        except Exception as exc:  # noqa: BLE001 - build keeps going per mask
            chi.build_errors[mask_id] = str(exc)
    return chi


def index_save(chi: Chi, path: PathLike) -> None:
    cfg = chi.config
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(
            CHI1_MAGIC, CHI1_VERSION, cfg.buckets, cfg.cell_h, cfg.cell_w, len(chi)
        ))
        for mask_id in chi.mask_ids():
            hist = chi.histogram(mask_id)
            rows, cols, _ = hist.shape
            fh.write(_MASK_HEADER.pack(mask_id, rows, cols))
            fh.write(hist.astype("<u4", copy=False).tobytes())


def _append_mask(path: Path, config: ChiConfig, mask_id: int, hist: np.ndarray) -> None:
    """Append one mask record to a CHI1 file and bump the header count."""
    with open(path, "r+b") as fh:
        head = fh.read(_HEADER.size)
        magic, version, buckets, cell_h, cell_w, count = _HEADER.unpack(head)
        if magic != CHI1_MAGIC or version != CHI1_VERSION:
            raise ChiFormatError(f"{path}: not a CHI1 v{CHI1_VERSION} file")
        if (buckets, cell_h, cell_w) != (config.buckets, config.cell_h, config.cell_w):
            raise ChiFormatError(f"{path}: index config mismatch")
        fh.seek(0, 2)
        rows, cols, _ = hist.shape
        fh.write(_MASK_HEADER.pack(mask_id, rows, cols))
        fh.write(hist.astype("<u4", copy=False).tobytes())
        fh.seek(_HEADER.size - 8)
        fh.write(struct.pack("<Q", count + 1))


def index_load(path: PathLike) -> Chi:
    """Load a CHI1 file; mask dimensions are not stored and must be set later."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ChiFormatError(f"{path}: truncated header")
    magic, version, buckets, cell_h, cell_w, count = _HEADER.unpack_from(data, 0)
    if magic != CHI1_MAGIC:
        raise ChiFormatError(f"{path}: bad magic {magic!r}, expected CHI1")
    if version != CHI1_VERSION:
        raise ChiFormatError(f"{path}: unsupported version {version}")
    chi = Chi(ChiConfig(buckets=buckets, cell_h=cell_h, cell_w=cell_w))
    pos = _HEADER.size
    for _ in range(count):
        if pos + _MASK_HEADER.size > len(data):
            raise ChiFormatError(f"{path}: truncated mask header at offset {pos}")
        mask_id, rows, cols = _MASK_HEADER.unpack_from(data, pos)
        pos += _MASK_HEADER.size
        n = rows * cols * buckets
        if pos + n * 4 > len(data):
            raise ChiFormatError(f"{path}: truncated histogram for mask {mask_id}")
        hist = np.frombuffer(data, dtype="<u4", count=n, offset=pos)
        chi._hists[mask_id] = hist.reshape(rows, cols, buckets).copy()
        pos += n * 4
    return chi
