"""Plan execution with bound-based pruning.

Every query runs the same way: derive a (lower, upper) interval on the metric
for each candidate from the histogram index, let the intervals decide whatever
they can decide, and load mask payloads only for the stragglers.  Results are
always exact; the index only ever saves work, never changes answers.

Grouped plans lift the same machinery to image groups: member bounds combine
into group bounds (linearly for scalar aggregates, by inclusion-exclusion for
mask intersection/union), and verifying a group loads all of its members.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .catalog import Catalog, MaskRecord, MaskStore
from .chi import Chi, bucket_above, bucket_floor
from .dialect import (
    AreaOf,
    BinOp,
    Const,
    CpAtom,
    Expr,
    QueryPlan,
    ValidationError,
    candidate_masks,
    walk_atoms,
)
from .masks import Roi, cp_exact

SAMPLE_CAP = 1000
HIST_BUCKETS = 32


@dataclass
class ResultRow:
    key: int
    value: int | float | None


@dataclass
class ExecStats:
    """Per-query accounting.  accepted/pruned/verified are in mask units and
    sum to total_candidates; masks_loaded counts distinct payload reads."""

    total_candidates: int = 0
    masks_loaded: int = 0
    accepted: int = 0
    pruned: int = 0
    verified: int = 0
    groups_excluded: int = 0
    wall_time: float = 0.0
    hist_upper: float = 1.0
    bounds_sample: list[tuple[int, float, float]] = field(default_factory=list)
    _bounds_all: list[tuple[float, float]] = field(default_factory=list)

    @property
    def fml(self) -> float:
        if self.total_candidates == 0:
            return 0.0
        return self.masks_loaded / self.total_candidates

    def bound_histogram(self, buckets: int = HIST_BUCKETS) -> dict:
        cap = max(self.hist_upper, 1e-9)
        lower = [0] * buckets
        upper = [0] * buckets
        for lo, hi in self._bounds_all:
            li = min(int(min(max(lo, 0.0), cap) / cap * buckets), buckets - 1)
            hi_clamped = min(max(hi, 0.0), cap)
            ui = min(int(hi_clamped / cap * buckets), buckets - 1)
            lower[li] += 1
            upper[ui] += 1
        return {"range": [0.0, cap], "lower": lower, "upper": upper}

    def to_json(self) -> dict:
        cap = max(self.hist_upper, 1e-9)
        return {
            "total_candidates": self.total_candidates,
            "masks_loaded": self.masks_loaded,
            "fml": self.fml,
            "accepted": self.accepted,
            "pruned": self.pruned,
            "verified": self.verified,
            "groups_excluded": self.groups_excluded,
            "wall_time": self.wall_time,
            "bound_histogram": self.bound_histogram(),
            "bounds_sample": [
                [key, min(lo, cap), min(hi, cap)]
                for key, lo, hi in self.bounds_sample
            ],
        }


# --- interval arithmetic ----------------------------------------------------

def _mul_pt(x: float, y: float) -> float:
    # 0 * inf := 0, the usual interval-corner convention
    if x == 0.0 or y == 0.0:
        return 0.0
    return x * y


def _iv_mul(a: tuple[float, float], b: tuple[float, float]) -> tuple[float, float]:
    corners = [_mul_pt(a[0], b[0]), _mul_pt(a[0], b[1]),
               _mul_pt(a[1], b[0]), _mul_pt(a[1], b[1])]
    return min(corners), max(corners)


def _iv_div(num: tuple[float, float], den: tuple[float, float]) -> tuple[float, float]:
    xlo, xhi = num
    ylo, yhi = den
    if ylo == 0.0 and yhi == 0.0:
        return (0.0, 0.0)  # x/0 := 0 by definition
    if ylo > 0.0 or yhi < 0.0:
        corners = [xlo / ylo, xlo / yhi, xhi / ylo, xhi / yhi]
        return min(corners), max(corners)
    if ylo < 0.0 < yhi:
        return (-math.inf, math.inf)
    # denominator interval touches zero at one end
    nz = yhi if ylo == 0.0 else ylo
    corners = [xlo / nz, xhi / nz, 0.0]
    lo = -math.inf if (xlo < 0.0 if ylo == 0.0 else xhi > 0.0) else min(corners)
    hi = math.inf if (xhi > 0.0 if ylo == 0.0 else xlo < 0.0) else max(corners)
    return lo, hi


def _iou_shaped(expr: Expr) -> bool:
    """Ratio of intersect-count over union-count of the same binarization,
    roi, and a range that includes 1.0: guaranteed ≤ 1."""
    return (
        isinstance(expr, BinOp)
        and expr.op == "/"
        and isinstance(expr.left, CpAtom)
        and isinstance(expr.right, CpAtom)
        and expr.left.agg is not None
        and expr.right.agg is not None
        and expr.left.agg.op == "intersect"
        and expr.right.agg.op == "union"
        and expr.left.agg.threshold == expr.right.agg.threshold
        and expr.left.roi == expr.right.roi
        and expr.left.vrange == expr.right.vrange
        and expr.left.vrange.closed_top
    )


def _interval(expr: Expr, leaf) -> tuple[float, float]:
    if isinstance(expr, Const):
        return (expr.value, expr.value)
    if isinstance(expr, (CpAtom, AreaOf)):
        return leaf(expr)
    a = _interval(expr.left, leaf)
    b = _interval(expr.right, leaf)
    if expr.op == "+":
        return (a[0] + b[0], a[1] + b[1])
    if expr.op == "-":
        return (a[0] - b[1], a[1] - b[0])
    if expr.op == "*":
        return _iv_mul(a, b)
    lo, hi = _iv_div(a, b)
    if _iou_shaped(expr):
        lo, hi = max(lo, 0.0), min(hi, 1.0)
    return lo, hi


def _exact(expr: Expr, leaf) -> float:
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, (CpAtom, AreaOf)):
        return leaf(expr)
    a = _exact(expr.left, leaf)
    b = _exact(expr.right, leaf)
    if expr.op == "+":
        return a + b
    if expr.op == "-":
        return a - b
    if expr.op == "*":
        return a * b
    return a / b if b != 0.0 else 0.0


def _decide(lo: float, hi: float, cmp: str, t: float) -> bool | None:
    """True = predicate certainly holds, False = certainly fails, None = load."""
    if cmp == ">":
        return True if lo > t else (False if hi <= t else None)
    if cmp == ">=":
        return True if lo >= t else (False if hi < t else None)
    if cmp == "<":
        return True if hi < t else (False if lo >= t else None)
    return True if hi <= t else (False if lo > t else None)


def _holds(value: float, cmp: str, t: float) -> bool:
    if cmp == ">":
        return value > t
    if cmp == ">=":
        return value >= t
    if cmp == "<":
        return value < t
    return value <= t


# --- per-query state --------------------------------------------------------

@dataclass
class _Unit:
    """One candidate: a single mask, or an image group of masks."""

    key: int
    members: tuple[MaskRecord, ...]
    lo: float = 0.0
    hi: float = math.inf
    value: float | None = None
    in_result: bool = False


class _Run:
    def __init__(self, plan: QueryPlan, chi: Chi, catalog: Catalog,
                 store: MaskStore | None, mode: str, threads: int = 1):
        if mode not in ("full", "incremental"):
            raise ValueError(f"unknown mode {mode!r}")
        self.plan = plan
        self.chi = chi
        self.catalog = catalog
        self.store = store if store is not None else MaskStore(catalog)
        self.mode = mode
        self.threads = max(1, threads)
        self.loaded: set[int] = set()
        self.stats = ExecStats()

    def dims(self, rec: MaskRecord) -> tuple[int, int]:
        d = self.chi.dims(rec.mask_id)
        if d is None:
            d = self.store.dims(rec.mask_id)
            if rec.mask_id in self.chi:
                self.chi.set_dims(rec.mask_id, *d)
        return d

    def resolve_roi(self, spec, rec: MaskRecord) -> Roi:
        if spec.kind == "constant":
            return spec.rect
        if spec.kind == "full_img":
            return Roi.full(*self.dims(rec))
        image = self.catalog.images.get(rec.image_id)
        if image is None or image.object_roi is None:
            raise ValidationError(
                f"roi 'object' unresolvable for image_id {rec.image_id}"
            )
        return image.object_roi

    def load(self, rec: MaskRecord) -> np.ndarray:
        arr = self.store.load(rec.mask_id)
        self.loaded.add(rec.mask_id)
        if self.mode == "incremental" and rec.mask_id not in self.chi:
            self.chi.index_mask(rec.mask_id, arr)
        return arr

    # bounds for one raw-mask pixel count
    def atom_bounds(self, atom: CpAtom, rec: MaskRecord) -> tuple[float, float]:
        roi = self.resolve_roi(atom.roi, rec)
        if rec.mask_id in self.chi:
            self.dims(rec)
            bp = self.chi.bounds(rec.mask_id, roi, atom.vrange)
            return (float(bp.lower), float(bp.upper))
        roi.validate_for(*self.dims(rec))
        return (0.0, float(roi.area))

    # bounds on the count of binarized-mask ones (v > t) inside roi
    def ones_bounds(self, rec: MaskRecord, roi: Roi, t: float) -> tuple[float, float]:
        buckets = self.chi.config.buckets
        if rec.mask_id in self.chi:
            self.dims(rec)
            bp = self.chi.bounds_for_buckets(
                rec.mask_id, roi,
                bucket_floor(buckets, t), bucket_above(buckets, t),
                buckets, buckets,
            )
            return (float(bp.lower), float(bp.upper))
        roi.validate_for(*self.dims(rec))
        return (0.0, float(roi.area))


# --- group metrics ----------------------------------------------------------

def _range_selects(vrange) -> tuple[bool, bool]:
    """(selects binary 1.0, selects binary 0.0)."""
    return (vrange.closed_top, vrange.lv == 0.0)


def _agg_atom_bounds(run: _Run, atom: CpAtom, members) -> tuple[float, float]:
    roi = run.resolve_roi(atom.roi, members[0])
    area = float(roi.area)
    n = len(members)
    member_bounds = [run.ones_bounds(rec, run.resolve_roi(atom.roi, rec), atom.agg.threshold)
                     for rec in members]
    lows = [b[0] for b in member_bounds]
    highs = [b[1] for b in member_bounds]
    if atom.agg.op == "intersect":
        ones_lo = max(0.0, sum(lows) - (n - 1) * area)
        ones_hi = min(highs)
    else:
        ones_lo = max(lows)
        ones_hi = min(sum(highs), area)
    sel1, sel0 = _range_selects(atom.vrange)
    if sel1 and sel0:
        return (area, area)
    if sel1:
        return (ones_lo, ones_hi)
    if sel0:
        return (area - ones_hi, area - ones_lo)
    return (0.0, 0.0)


def _agg_atom_exact(run: _Run, atom: CpAtom, arrays: dict[int, np.ndarray],
                    members) -> float:
    roi = run.resolve_roi(atom.roi, members[0])
    combined = None
    for rec in members:
        binary = arrays[rec.mask_id] > atom.agg.threshold
        if combined is None:
            combined = binary
        elif atom.agg.op == "intersect":
            combined &= binary
        else:
            combined |= binary
    window = combined[roi.r0:roi.r1, roi.c0:roi.c1]
    ones = int(np.count_nonzero(window))
    sel1, sel0 = _range_selects(atom.vrange)
    return float(sel1 * ones + sel0 * (roi.area - ones))


class _Metric:
    """Bounds and exact evaluation of a plan expression over units."""

    def __init__(self, run: _Run, expr: Expr, scalar_agg: str | None):
        self.run = run
        self.expr = expr
        self.scalar_agg = scalar_agg
        self.grouped = run.plan.group_by is not None

    def roi_area_cap(self, units: list[_Unit]) -> float:
        cap = 0.0
        for unit in units:
            for rec in unit.members:
                for atom in walk_atoms(self.expr):
                    cap = max(cap, float(self.run.resolve_roi(atom.roi, rec).area))
                break  # rois per atom are shared across members except full_img
        return cap

    # interval side

    def bounds(self, unit: _Unit) -> tuple[float, float]:
        if not self.grouped:
            rec = unit.members[0]

            def leaf(e):
                if isinstance(e, AreaOf):
                    a = float(self.run.resolve_roi(e.roi, rec).area)
                    return (a, a)
                return self.run.atom_bounds(e, rec)

            return _interval(self.expr, leaf)
        if self.scalar_agg is not None:
            per_member = [self._member_interval(rec) for rec in unit.members]
            return _combine_scalar(self.scalar_agg, per_member)

        def leaf(e):
            if isinstance(e, AreaOf):
                a = float(self.run.resolve_roi(e.roi, unit.members[0]).area)
                return (a, a)
            if e.agg is None:
                raise ValidationError("grouped expression needs MASK_AGG or a scalar aggregate")
            return _agg_atom_bounds(self.run, e, unit.members)

        return _interval(self.expr, leaf)

    def _member_interval(self, rec: MaskRecord) -> tuple[float, float]:
        def leaf(e):
            if isinstance(e, AreaOf):
                a = float(self.run.resolve_roi(e.roi, rec).area)
                return (a, a)
            if e.agg is not None:
                raise ValidationError("MASK_AGG cannot appear inside a scalar aggregate")
            return self.run.atom_bounds(e, rec)

        return _interval(self.expr, leaf)

    def bounds_many(self, units: list[_Unit]) -> None:
        if (not self.grouped and isinstance(self.expr, CpAtom)
                and self.expr.agg is None):
            self._bounds_batch(units, self.expr)
            return
        for unit in units:
            unit.lo, unit.hi = self.bounds(unit)

    def _bounds_batch(self, units: list[_Unit], atom: CpAtom) -> None:
        """Vectorized bound computation for bare pixel-count metrics."""
        by_key: dict[tuple, list[_Unit]] = {}
        for unit in units:
            rec = unit.members[0]
            roi = self.run.resolve_roi(atom.roi, rec)
            if rec.mask_id in self.run.chi:
                self.run.dims(rec)
                key = (self.run.dims(rec), roi.as_tuple())
                by_key.setdefault(key, []).append(unit)
            else:
                roi.validate_for(*self.run.dims(rec))
                unit.lo, unit.hi = 0.0, float(roi.area)
        for (dims, rect), batch in by_key.items():
            roi = Roi(*rect)
            ids = [u.members[0].mask_id for u in batch]
            pairs = self.run.chi.bounds_batch(ids, roi, atom.vrange)
            for unit, (lo, hi) in zip(batch, pairs):
                unit.lo, unit.hi = float(lo), float(hi)

    # exact side

    def exact(self, unit: _Unit) -> float:
        if not self.grouped:
            rec = unit.members[0]
            arr = self.run.load(rec)

            def leaf(e):
                if isinstance(e, AreaOf):
                    return float(self.run.resolve_roi(e.roi, rec).area)
                return float(cp_exact(arr, self.run.resolve_roi(e.roi, rec), e.vrange))

            return _exact(self.expr, leaf)
        # verifying a group loads every member
        arrays = {rec.mask_id: self.run.load(rec) for rec in unit.members}
        if self.scalar_agg is not None:
            values = []
            for rec in unit.members:
                def leaf(e, rec=rec):
                    if isinstance(e, AreaOf):
                        return float(self.run.resolve_roi(e.roi, rec).area)
                    return float(cp_exact(
                        arrays[rec.mask_id], self.run.resolve_roi(e.roi, rec), e.vrange
                    ))
                values.append(_exact(self.expr, leaf))
            return _apply_scalar(self.scalar_agg, values)

        def leaf(e):
            if isinstance(e, AreaOf):
                return float(self.run.resolve_roi(e.roi, unit.members[0]).area)
            return _agg_atom_exact(self.run, e, arrays, unit.members)

        return _exact(self.expr, leaf)

    def is_count(self) -> bool:
        bare = isinstance(self.expr, CpAtom)
        if self.scalar_agg in ("SUM", "MIN", "MAX"):
            return bare
        if self.scalar_agg == "AVG":
            return False
        return bare


def _combine_scalar(agg: str, ivs: list[tuple[float, float]]) -> tuple[float, float]:
    lows = [iv[0] for iv in ivs]
    highs = [iv[1] for iv in ivs]
    if agg == "SUM":
        return (sum(lows), sum(highs))
    if agg == "AVG":
        n = len(ivs)
        return (sum(lows) / n, sum(highs) / n)
    if agg == "MIN":
        return (min(lows), min(highs))
    return (max(lows), max(highs))


def _apply_scalar(agg: str, values: list[float]) -> float:
    if agg == "SUM":
        return float(sum(values))
    if agg == "AVG":
        return float(sum(values) / len(values))
    if agg == "MIN":
        return float(min(values))
    return float(max(values))


# --- evaluation -------------------------------------------------------------

def _build_units(run: _Run) -> list[_Unit]:
    plan = run.plan
    records = candidate_masks(plan, run.catalog)
    if plan.group_by is None:
        return [_Unit(key=rec.mask_id, members=(rec,)) for rec in records]
    groups: dict[int, list[MaskRecord]] = {}
    for rec in records:
        groups.setdefault(rec.image_id, []).append(rec)
    units = []
    required = set(plan.mask_types) if plan.mask_types else None
    for image_id in sorted(groups):
        members = groups[image_id]
        if required is not None and not required <= {m.mask_type for m in members}:
            run.stats.groups_excluded += 1
            continue
        units.append(_Unit(key=image_id, members=tuple(members)))
    return units


def _rank_units(run: _Run, metric: _Metric, units: list[_Unit],
                direction: str, limit: int | None) -> list[_Unit]:
    """Exact top-k (or full ordering) over bounded units, loading lazily."""
    k = len(units) if limit is None else min(limit, len(units))
    if k == 0 or not units:
        return []
    desc = direction == "DESC"

    if len(units) > k:
        # discard candidates that provably cannot reach the k-th place
        if desc:
            tau = sorted((u.lo for u in units), reverse=True)[k - 1]
            units = [u for u in units if u.hi >= tau]
        else:
            tau = sorted(u.hi for u in units)[k - 1]
            units = [u for u in units if u.lo <= tau]

    resolved: list[_Unit] = []
    unresolved: list[_Unit] = []
    for unit in units:
        if unit.lo == unit.hi:
            unit.value = unit.lo
            resolved.append(unit)
        else:
            unresolved.append(unit)
    # verification order: most promising first
    unresolved.sort(key=(lambda u: (-u.hi, u.key)) if desc else (lambda u: (u.lo, u.key)))

    def rank_key(value: float, key: int) -> tuple:
        return (-value, key) if desc else (value, key)

    while unresolved:
        if len(resolved) >= k:
            kth = sorted(resolved, key=lambda u: rank_key(u.value, u.key))[k - 1]
            head = unresolved[0]
            optimistic = head.hi if desc else head.lo
            if rank_key(optimistic, head.key) >= rank_key(kth.value, kth.key):
                break  # nothing unresolved can still displace the k-th row
        head = unresolved.pop(0)
        head.value = metric.exact(head)
        resolved.append(head)

    resolved.sort(key=lambda u: rank_key(u.value, u.key))
    return resolved[:k]


def _execute(run: _Run) -> list[ResultRow]:
    plan = run.plan
    units = _build_units(run)
    run.stats.total_candidates = sum(len(u.members) for u in units)

    order_metric = None
    if plan.order is not None:
        order_metric = _Metric(run, plan.order.expr, plan.order.scalar_agg)
    pred_metric = None
    if plan.predicate is not None:
        pred_metric = _Metric(run, plan.predicate.expr, None)

    sample_metric = order_metric or pred_metric
    survivors = units

    if pred_metric is not None:
        pred_metric.bounds_many(units)
        cmp_, thr = plan.predicate.cmp, plan.predicate.threshold
        undecided = [u for u in units if _decide(u.lo, u.hi, cmp_, thr) is None]
        if run.threads > 1 and undecided:
            _preload(run, undecided)
        survivors = []
        for unit in units:
            verdict = _decide(unit.lo, unit.hi, cmp_, thr)
            if verdict is None:
                value = pred_metric.exact(unit)
                unit.value = value
                verdict = _holds(value, cmp_, thr)
            elif unit.lo == unit.hi:
                unit.value = unit.lo
            if verdict:
                survivors.append(unit)
        if sample_metric is pred_metric:
            _record_bounds(run, units, pred_metric)

    if order_metric is not None:
        for unit in survivors:
            unit.value = None  # ordering metric may differ from the predicate's
        order_metric.bounds_many(survivors)
        _record_bounds(run, units if pred_metric is None else survivors, order_metric)
        selected = _rank_units(run, order_metric, survivors, plan.order.direction,
                               plan.limit)
    else:
        selected = sorted(survivors, key=lambda u: u.key)
        if plan.limit is not None:
            selected = selected[:plan.limit]
        if sample_metric is None:
            run.stats.hist_upper = 1.0

    for unit in selected:
        unit.in_result = True

    count_metric = sample_metric.is_count() if sample_metric is not None else False
    rows = []
    for unit in selected:
        value = unit.value
        if value is not None:
            value = int(round(value)) if count_metric else float(value)
        rows.append(ResultRow(key=unit.key, value=value))

    # mask-unit accounting: every member of a loaded unit counts as verified
    for unit in units:
        n = len(unit.members)
        if any(rec.mask_id in run.loaded for rec in unit.members):
            run.stats.verified += n
        elif unit.in_result:
            run.stats.accepted += n
        else:
            run.stats.pruned += n
    run.stats.masks_loaded = len(run.loaded)
    return rows


def _preload(run: _Run, units: list[_Unit]) -> None:
    """Fetch payloads for undecided units concurrently; decisions stay
    sequential, so results are order-independent."""
    from concurrent.futures import ThreadPoolExecutor

    records = [rec for unit in units for rec in unit.members]
    with ThreadPoolExecutor(max_workers=run.threads) as pool:
        list(pool.map(run.load, records))


def _record_bounds(run: _Run, units: list[_Unit], metric: _Metric) -> None:
    run.stats._bounds_all = [(u.lo, u.hi) for u in units]
    run.stats.bounds_sample = [
        (u.key, u.lo, u.hi) for u in sorted(units, key=lambda u: u.key)[:SAMPLE_CAP]
    ]
    if metric.is_count() or metric.scalar_agg is not None:
        run.stats.hist_upper = max(metric.roi_area_cap(units), 1.0)
    else:
        finite = [u.hi for u in units if math.isfinite(u.hi)]
        run.stats.hist_upper = max(finite, default=1.0)


def eval(plan: QueryPlan, chi: Chi, catalog: Catalog,
         store: MaskStore | None = None, mode: str = "full", threads: int = 1
         ) -> tuple[list[ResultRow], ExecStats]:
    """Execute any plan kind; mode "incremental" indexes masks as they load."""
    run = _Run(plan, chi, catalog, store, mode, threads)
    started = time.perf_counter()
    rows = _execute(run)
    run.stats.wall_time = time.perf_counter() - started
    return rows, run.stats


def eval_filter(plan, chi, catalog, store=None, mode="full", threads=1):
    if plan.kind != "filter":
        raise ValueError(f"expected a filter plan, got {plan.kind}")
    return eval(plan, chi, catalog, store, mode, threads)


def eval_topk(plan, chi, catalog, store=None, mode="full", threads=1):
    if plan.kind != "topk":
        raise ValueError(f"expected a top-k plan, got {plan.kind}")
    return eval(plan, chi, catalog, store, mode, threads)


def eval_aggregation(plan, chi, catalog, store=None, mode="full", threads=1):
    if plan.kind != "aggregation":
        raise ValueError(f"expected an aggregation plan, got {plan.kind}")
    return eval(plan, chi, catalog, store, mode, threads)


def confusion_matrix(catalog: Catalog, model_id: int | None = None
                     ) -> tuple[dict[tuple[int, int], list[int]], float | None]:
    """Cells map (true_label, pred_label) to sorted image_ids; accuracy is the
    diagonal fraction, None for an empty selection."""
    if model_id is None:
        image_ids = set(catalog.images)
    else:
        image_ids = {rec.image_id for rec in catalog.masks.values()
                     if rec.model_id == model_id}
    cells: dict[tuple[int, int], list[int]] = {}
    correct = total = 0
    for image_id in sorted(image_ids):
        image = catalog.images.get(image_id)
        if image is None:
            continue
        cells.setdefault((image.true_label, image.pred_label), []).append(image_id)
        total += 1
        if image.true_label == image.pred_label:
            correct += 1
    if total == 0:
        return {}, None
    return cells, correct / total
