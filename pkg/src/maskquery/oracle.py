"""Brute-force reference evaluator.

Loads every candidate mask unconditionally and computes every metric directly
from pixels, with no index and no pruning.  Deliberately written against the
plain mask API (threshold_mask / combine_masks / cp_exact) rather than the
engine's internals, so the two implementations can check each other.
"""

from __future__ import annotations

import math

from .catalog import Catalog, MaskStore
from .dialect import AreaOf, BinOp, Const, CpAtom, Expr, QueryPlan, candidate_masks
from .masks import Roi, combine_masks, cp_exact, threshold_mask


def _expr_value(expr: Expr, leaf) -> float:
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, (CpAtom, AreaOf)):
        return leaf(expr)
    a = _expr_value(expr.left, leaf)
    b = _expr_value(expr.right, leaf)
    if expr.op == "+":
        return a + b
    if expr.op == "-":
        return a - b
    if expr.op == "*":
        return a * b
    return a / b if b != 0.0 else 0.0


def _holds(value: float, cmp: str, t: float) -> bool:
    return {"<": value < t, "<=": value <= t, ">": value > t, ">=": value >= t}[cmp]


def _is_count_metric(plan: QueryPlan) -> bool:
    if plan.order is not None:
        if plan.order.scalar_agg == "AVG":
            return False
        return isinstance(plan.order.expr, CpAtom)
    if plan.predicate is not None:
        return isinstance(plan.predicate.expr, CpAtom)
    return False


class _BruteEval:
    def __init__(self, plan: QueryPlan, catalog: Catalog, store: MaskStore | None):
        self.plan = plan
        self.catalog = catalog
        self.store = store if store is not None else MaskStore(catalog)

    def roi_for(self, spec, rec, shape) -> Roi:
        if spec.kind == "constant":
            return spec.rect
        if spec.kind == "full_img":
            return Roi.full(*shape)
        return self.catalog.images[rec.image_id].object_roi

    def mask_value(self, rec, expr: Expr) -> float:
        arr = self.store.load(rec.mask_id)

        def leaf(e):
            roi = self.roi_for(e.roi, rec, arr.shape)
            if isinstance(e, AreaOf):
                return float(roi.area)
            return float(cp_exact(arr, roi, e.vrange))

        return _expr_value(expr, leaf)

    def group_value(self, members, expr: Expr, scalar_agg: str | None) -> float:
        if scalar_agg is not None:
            values = [self.mask_value(rec, expr) for rec in members]
            if scalar_agg == "SUM":
                return float(sum(values))
            if scalar_agg == "AVG":
                return float(sum(values) / len(values))
            if scalar_agg == "MIN":
                return float(min(values))
            return float(max(values))

        arrays = [self.store.load(rec.mask_id) for rec in members]

        def leaf(e):
            roi = self.roi_for(e.roi, members[0], arrays[0].shape)
            if isinstance(e, AreaOf):
                return float(roi.area)
            derived = combine_masks(
                [threshold_mask(a, e.agg.threshold) for a in arrays], e.agg.op
            )
            return float(cp_exact(derived, roi, e.vrange))

        return _expr_value(expr, leaf)

    def units(self) -> list[tuple[int, tuple]]:
        records = candidate_masks(self.plan, self.catalog)
        if self.plan.group_by is None:
            return [(rec.mask_id, (rec,)) for rec in records]
        groups: dict[int, list] = {}
        for rec in records:
            groups.setdefault(rec.image_id, []).append(rec)
        required = set(self.plan.mask_types) if self.plan.mask_types else None
        out = []
        for image_id in sorted(groups):
            members = groups[image_id]
            if required is not None and not required <= {m.mask_type for m in members}:
                continue
            out.append((image_id, tuple(members)))
        return out

    def unit_value(self, members, expr: Expr, scalar_agg: str | None) -> float:
        if self.plan.group_by is None:
            return self.mask_value(members[0], expr)
        return self.group_value(members, expr, scalar_agg)

    def run(self) -> list[tuple[int, int | float | None]]:
        plan = self.plan
        units = self.units()

        if plan.predicate is not None:
            p = plan.predicate
            units = [
                (key, members) for key, members in units
                if _holds(self.unit_value(members, p.expr, None), p.cmp, p.threshold)
            ]

        count_metric = _is_count_metric(plan)

        def norm(v: float) -> int | float:
            return int(round(v)) if count_metric else float(v)

        if plan.order is not None:
            desc = plan.order.direction == "DESC"
            scored = [
                (key, self.unit_value(members, plan.order.expr, plan.order.scalar_agg))
                for key, members in units
            ]
            scored.sort(key=lambda kv: (-kv[1] if desc else kv[1], kv[0]))
            if plan.limit is not None:
                scored = scored[:plan.limit]
            return [(key, norm(value)) for key, value in scored]

        rows = []
        for key, members in sorted(units, key=lambda u: u[0]):
            value = None
            if plan.predicate is not None:
                value = norm(self.unit_value(members, plan.predicate.expr, None))
            rows.append((key, value))
        if plan.limit is not None:
            rows = rows[:plan.limit]
        return rows


def eval_brute(plan: QueryPlan, catalog: Catalog, store: MaskStore | None = None
               ) -> list[tuple[int, int | float | None]]:
    return _BruteEval(plan, catalog, store).run()


def rows_match(engine_rows, brute_rows, plan: QueryPlan,
               rel_tol: float = 1e-9) -> tuple[bool, str]:
    """Compare engine output against the reference, honoring the plan shape.

    Ordered plans must match keys in order and values within tolerance.
    Unordered (filter) plans must match key sets; engine values, where
    present, must match the reference values.
    """
    e_keys = [r.key for r in engine_rows]
    b_keys = [k for k, _ in brute_rows]
    if e_keys != b_keys:
        return False, f"keys differ: engine {e_keys[:10]}... vs reference {b_keys[:10]}..."
    b_vals = dict(brute_rows)
    for row in engine_rows:
        if row.value is None:
            if plan.order is not None:
                return False, f"missing value for ordered row {row.key}"
            continue
        expected = b_vals[row.key]
        if expected is None:
            continue
        if isinstance(row.value, int) and isinstance(expected, int):
            if row.value != expected:
                return False, f"row {row.key}: {row.value} != {expected}"
        elif not math.isclose(float(row.value), float(expected),
                              rel_tol=rel_tol, abs_tol=1e-12):
            return False, f"row {row.key}: {row.value} !~ {expected}"
    return True, "ok"
