#!/usr/bin/env python3
"""Generate a synthetic demo dataset and index, ready for `maskquery serve`.

Example:
    python3 scripts/make_demo_dataset.py --out demo_data --n-images 50 --with-images
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from maskquery import build_index, synth
from maskquery.chi import ChiConfig, index_save
from maskquery.masks import Roi


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--n-images", type=int, default=50)
    ap.add_argument("--models", type=int, default=2, help="model ids 1..N")
    ap.add_argument("--mask-types", type=int, default=2, help="mask types 1..N")
    ap.add_argument("--size", type=int, default=64, help="mask side in pixels")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--with-images", action="store_true",
                    help="also write PGM/PPM image payloads")
    ap.add_argument("--bimodal", action="store_true",
                    help="hot/cold masks over a fixed roi instead of blobs")
    ap.add_argument("--buckets", type=int, default=16)
    ap.add_argument("--cell", type=int, default=32, help="square cell side")
    args = ap.parse_args(argv)

    out = Path(args.out)
    if args.bimodal:
        side = args.size
        roi = Roi(0, 0, side // 2, side // 2)
        catalog = synth.make_bimodal_dataset(
            out, n_images=args.n_images, roi=roi,
            height=side, width=side, seed=args.seed)
    else:
        catalog = synth.make_dataset(
            out, n_images=args.n_images,
            models=tuple(range(1, args.models + 1)),
            mask_types=tuple(range(1, args.mask_types + 1)),
            height=args.size, width=args.size, seed=args.seed,
            with_images=args.with_images)

    config = ChiConfig(buckets=args.buckets, cell_h=args.cell, cell_w=args.cell)
    chi = build_index(catalog, config)
    for mask_id, err in sorted(chi.build_errors.items()):
        print(f"warning: mask {mask_id}: {err}", file=sys.stderr)
    index_path = out / "demo.chi1"
    index_save(chi, index_path)

    print(f"catalog: {out / 'catalog.jsonl'}  "
          f"({len(catalog.masks)} masks, {len(catalog.images)} images)")
    print(f"index:   {index_path}  ({len(chi)} masks indexed)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
