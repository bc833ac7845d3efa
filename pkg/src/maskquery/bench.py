"""Synthetic benchmark harness.

Builds a reproducible random workload of statements over a catalog, runs it
through the indexed engine, and optionally times the brute-force evaluator on
the same plans for a speedup comparison.  Each query gets a fresh mask store
by default so payload reads are cold and both sides pay the same I/O.

Workload distributions (fixed so numbers are comparable across runs):
  - statement kind: filter 45%, top-k 35%, grouped aggregation 20%
    (aggregations fall back to filters when the catalog has no images)
  - ROI: constant rectangle spanning 25-75% of each side (80%) or full_img
  - value range: lv uniform on [0, 0.85], uv above it, snapped to 1.0 half
    the time
  - filter threshold: uniform fraction of ROI area in [0.02, 0.6]
  - K: one of 5, 10, 25, 50; aggregations draw AVG / MASK_AGG forms evenly
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .catalog import Catalog, MaskStore
from .chi import Chi
from .dialect import (
    CpAtom,
    MaskAgg,
    OrderSpec,
    Predicate,
    QueryPlan,
    RoiSpec,
    parse,
    render,
    validate,
)
from .masks import Roi, ValueRange
from .oracle import eval_brute, rows_match

KINDS = ("filter", "topk", "aggregation")
K_CHOICES = (5, 10, 25, 50)


@dataclass
class BenchQuery:
    sql: str
    plan: QueryPlan


@dataclass
class BenchRow:
    index: int
    kind: str
    wall_time: float
    masks_loaded: int
    total_candidates: int
    fml: float
    result_rows: int
    naive_time: float | None = None
    speedup: float | None = None
    match: bool | None = None


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)

    @property
    def total_time(self) -> float:
        return sum(r.wall_time for r in self.rows)

    @property
    def total_naive(self) -> float | None:
        times = [r.naive_time for r in self.rows if r.naive_time is not None]
        return sum(times) if times else None

    @property
    def median_speedup(self) -> float | None:
        ratios = [r.speedup for r in self.rows if r.speedup is not None]
        return statistics.median(ratios) if ratios else None


def _mask_dims(catalog: Catalog) -> tuple[int, int]:
    store = MaskStore(catalog)
    first = catalog.mask_ids()[0]
    return store.dims(first)


def _random_roi_spec(rng: np.random.Generator, dims: tuple[int, int]) -> RoiSpec:
    if rng.random() < 0.2:
        return RoiSpec("full_img")
    h, w = dims
    rh = int(rng.integers(max(1, h // 4), max(2, 3 * h // 4)))
    rw = int(rng.integers(max(1, w // 4), max(2, 3 * w // 4)))
    r0 = int(rng.integers(0, h - rh + 1))
    c0 = int(rng.integers(0, w - rw + 1))
    return RoiSpec.constant(r0, c0, r0 + rh, c0 + rw)


def _random_range(rng: np.random.Generator) -> ValueRange:
    lv = round(float(rng.uniform(0.0, 0.85)), 3)
    if rng.random() < 0.5:
        uv = 1.0
    else:
        uv = round(float(rng.uniform(lv + 0.05, 1.0)), 3)
        uv = min(uv, 1.0)
        if uv <= lv:
            uv = 1.0
    return ValueRange(lv, uv)


def _roi_area(spec: RoiSpec, dims: tuple[int, int]) -> int:
    if spec.kind == "constant":
        return spec.rect.area
    return dims[0] * dims[1]


def random_workload(catalog: Catalog, n_queries: int, seed: int = 0
                    ) -> list[BenchQuery]:
    """Generate `n_queries` statements valid against the catalog.

    Each query is rendered to canonical text and re-parsed, so the benchmark
    exercises the full parse-plan-execute path, not just the engine.
    """
    if not catalog.masks:
        raise ValueError("catalog has no masks to benchmark against")
    rng = np.random.default_rng(seed)
    dims = _mask_dims(catalog)
    model_ids = sorted({rec.model_id for rec in catalog.masks.values()})
    mask_types = sorted({rec.mask_type for rec in catalog.masks.values()})
    groupable = bool(catalog.images) and all(
        rec.image_id in catalog.images for rec in catalog.masks.values()
    )

    queries = []
    for _ in range(n_queries):
        draw = rng.random()
        if draw < 0.45 or (draw >= 0.8 and not groupable):
            kind = "filter"
        elif draw < 0.8:
            kind = "topk"
        else:
            kind = "aggregation"
        roi = _random_roi_spec(rng, dims)
        vrange = _random_range(rng)
        atom = CpAtom(roi=roi, vrange=vrange)
        model_id = int(rng.choice(model_ids)) if rng.random() < 0.7 else None

        if kind == "filter":
            frac = float(rng.uniform(0.02, 0.6))
            threshold = max(1.0, round(frac * _roi_area(roi, dims)))
            cmp_ = str(rng.choice(("<", "<=", ">", ">=")))
            plan = QueryPlan(
                kind="filter", select="mask_id",
                predicate=Predicate(atom, cmp_, threshold),
                model_id=model_id,
            )
        elif kind == "topk":
            direction = "DESC" if rng.random() < 0.7 else "ASC"
            plan = QueryPlan(
                kind="topk", select="mask_id",
                order=OrderSpec(atom, direction),
                limit=int(rng.choice(K_CHOICES)),
                model_id=model_id,
            )
        else:
            types = tuple(mask_types) if len(mask_types) > 1 else (mask_types[0],)
            direction = "DESC" if rng.random() < 0.7 else "ASC"
            if rng.random() < 0.5:
                order = OrderSpec(atom, direction, scalar_agg="AVG")
            else:
                op = str(rng.choice(("intersect", "union")))
                agg_atom = CpAtom(roi=roi, vrange=vrange,
                                  agg=MaskAgg(op, 0.5))
                order = OrderSpec(agg_atom, direction)
            plan = QueryPlan(
                kind="aggregation", select="image_id",
                mask_types=types, group_by="image_id",
                order=order, limit=int(rng.choice(K_CHOICES)),
            )

        sql = render(plan)
        reparsed = validate(parse(sql), catalog)
        queries.append(BenchQuery(sql=sql, plan=reparsed))
    return queries


def run_query(query: BenchQuery, chi: Chi, catalog: Catalog, *,
              mode: str = "full", threads: int = 1,
              store: MaskStore | None = None) -> tuple[list, engine.ExecStats]:
    if store is None:
        store = MaskStore(catalog)  # cold payload reads
    return engine.eval(query.plan, chi, catalog, store, mode, threads)


def run_naive(query: BenchQuery, catalog: Catalog) -> tuple[list, float]:
    store = MaskStore(catalog)
    started = time.perf_counter()
    rows = eval_brute(query.plan, catalog, store)
    return rows, time.perf_counter() - started


def run_bench(catalog: Catalog, chi: Chi, queries: list[BenchQuery], *,
              compare_naive: bool = False, mode: str = "full",
              threads: int = 1, shared_store: bool = False) -> BenchReport:
    """Execute the workload; `shared_store` reuses one payload cache across
    queries (warm), otherwise every query starts cold."""
    report = BenchReport()
    store = MaskStore(catalog) if shared_store else None
    for i, query in enumerate(queries):
        rows, stats = run_query(query, chi, catalog, mode=mode,
                                threads=threads, store=store)
        row = BenchRow(
            index=i, kind=query.plan.kind, wall_time=stats.wall_time,
            masks_loaded=stats.masks_loaded,
            total_candidates=stats.total_candidates,
            fml=stats.fml, result_rows=len(rows),
        )
        if compare_naive:
            brute_rows, naive_time = run_naive(query, catalog)
            row.naive_time = naive_time
            row.speedup = naive_time / stats.wall_time if stats.wall_time > 0 else None
            row.match = rows_match(rows, brute_rows, query.plan)[0]
        report.rows.append(row)
    return report


def format_report(report: BenchReport, queries: list[BenchQuery] | None = None
                  ) -> str:
    """Stable tab-separated report, one line per query plus a summary."""
    header = ["idx", "kind", "wall_s", "loaded", "candidates", "fml", "rows"]
    compare = any(r.naive_time is not None for r in report.rows)
    if compare:
        header += ["naive_s", "speedup", "match"]
    lines = ["\t".join(header)]
    for row in report.rows:
        cells = [
            str(row.index), row.kind, f"{row.wall_time:.6f}",
            str(row.masks_loaded), str(row.total_candidates),
            f"{row.fml:.4f}", str(row.result_rows),
        ]
        if compare:
            cells += [
                f"{row.naive_time:.6f}" if row.naive_time is not None else "-",
                f"{row.speedup:.2f}" if row.speedup is not None else "-",
                {True: "yes", False: "NO", None: "-"}[row.match],
            ]
        lines.append("\t".join(cells))
    summary = f"total\t{report.total_time:.6f}"
    if compare:
        naive = report.total_naive or 0.0
        med = report.median_speedup
        summary += f"\tnaive_total\t{naive:.6f}"
        if med is not None:
            summary += f"\tmedian_speedup\t{med:.2f}"
    lines.append(summary)
    return "\n".join(lines)
