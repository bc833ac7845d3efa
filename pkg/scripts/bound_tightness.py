#!/usr/bin/env python3
"""Report how tight the index bounds are across region alignment classes.

For a sample of (mask, roi, range) triples the script compares the bound
width (upper - lower) to the roi area, split by whether the roi lands on
cell corners and the range on bucket edges.  Aligned queries must collapse
to zero width; the interesting number is the residual width everywhere else.

Example:
    python3 scripts/make_demo_dataset.py --out demo_data
    python3 scripts/bound_tightness.py --catalog demo_data/catalog.jsonl
"""

from __future__ import annotations

import argparse
import statistics

import numpy as np

from maskquery import build_index
from maskquery.catalog import MaskStore, catalog_load
from maskquery.chi import ChiConfig
from maskquery.masks import Roi, ValueRange, cp_exact


def _percentiles(widths: list[float]) -> str:
    if not widths:
        return "n/a"
    qs = statistics.quantiles(widths, n=100) if len(widths) > 1 else [widths[0]] * 99
    return (f"median {qs[49]:.4f}  p90 {qs[89]:.4f}  p99 {qs[98]:.4f}  "
            f"max {max(widths):.4f}")


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--catalog", required=True)
    ap.add_argument("--buckets", type=int, default=16)
    ap.add_argument("--cell", type=int, default=32, help="square cell side")
    ap.add_argument("--triples", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    catalog = catalog_load(args.catalog)
    config = ChiConfig(buckets=args.buckets, cell_h=args.cell, cell_w=args.cell)
    chi = build_index(catalog, config)
    store = MaskStore(catalog)
    rng = np.random.default_rng(args.seed)
    ids = sorted(catalog.masks)
    B = config.buckets

    buckets: dict[str, list[float]] = {
        "aligned roi, edge range": [],
        "aligned roi, free range": [],
        "free roi, edge range": [],
        "free roi, free range": [],
    }
    violations = 0
    for _ in range(args.triples):
        mask_id = int(rng.choice(ids))
        height, width = store.dims(mask_id)

        if rng.random() < 0.5 and height > args.cell and width > args.cell:
            # snap to cell corners where the grid allows it
            rs = sorted(rng.choice(np.arange(0, height + 1, args.cell), 2, replace=False))
            cs = sorted(rng.choice(np.arange(0, width + 1, args.cell), 2, replace=False))
            roi = Roi(int(rs[0]), int(cs[0]), int(rs[1]), int(cs[1]))
            roi_class = "aligned roi"
        else:
            r0 = int(rng.integers(0, height))
            c0 = int(rng.integers(0, width))
            roi = Roi(r0, c0, int(rng.integers(r0 + 1, height + 1)),
                      int(rng.integers(c0 + 1, width + 1)))
            roi_class = "free roi"

        if rng.random() < 0.5:
            a = int(rng.integers(0, B))
            b = int(rng.integers(a + 1, B + 1))
            vrange = ValueRange(a / B, b / B)
            range_class = "edge range"
        else:
            lv = float(rng.uniform(0.0, 0.99))
            vrange = ValueRange(lv, float(rng.uniform(lv + 1e-6, 1.0)))
            range_class = "free range"

        bp = chi.bounds(mask_id, roi, vrange)
        exact = cp_exact(store.load(mask_id), roi, vrange)
        if not (bp.lower <= exact <= bp.upper):
            violations += 1
        buckets[f"{roi_class}, {range_class}"].append(
            (bp.upper - bp.lower) / roi.area)

    print(f"{len(catalog.masks)} masks, {args.triples} triples, "
          f"buckets={B}, cell={args.cell}x{args.cell}")
    for name, widths in buckets.items():
        print(f"  {name:26s} n={len(widths):5d}  width/area: {_percentiles(widths)}")
    print(f"soundness violations: {violations}")
    return 1 if violations else 0


if __name__ == "__main__":
    raise SystemExit(main())
