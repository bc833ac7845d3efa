"""Operator command line: ingest, index, query, bench, serve.

Conventions: result rows go to stdout as TSV, diagnostics and stats go to
stderr.  Exit codes: 0 ok, 2 usage or statement errors, 3 I/O failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import bench as bench_mod
from . import engine
from .catalog import (
    Catalog,
    CatalogError,
    ImageRecord,
    MaskRecord,
    MaskStore,
    catalog_load,
    catalog_save,
)
from .chi import ChiConfig, ChiFormatError, build_index, index_load, index_save
from .dialect import ParseError, ValidationError, parse, render, validate
from .masks import MaskFormatError, Roi
from .oracle import eval_brute, rows_match

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3

MASK_SUFFIXES = (".msk1", ".pgm")


def _err(message: str) -> None:
    print(f"error: {message}", file=sys.stderr)


# --- ingest -------------------------------------------------------------------

def _read_csv(path: str, required: tuple[str, ...]) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    for name in required:
        if rows and name not in rows[0]:
            raise CatalogError(f"{path}: missing column {name!r}")
    return rows


def cmd_ingest(args: argparse.Namespace) -> int:
    masks_dir = Path(args.masks)
    if not masks_dir.is_dir():
        _err(f"not a directory: {masks_dir}")
        return EXIT_IO
    files = sorted(p for p in masks_dir.iterdir() if p.suffix.lower() in MASK_SUFFIXES)
    if not files:
        _err(f"no mask files (*.msk1, *.pgm) in {masks_dir}")
        return EXIT_IO

    meta: dict[int, dict] = {}
    if args.map:
        for row in _read_csv(args.map, ("mask_id",)):
            mask_id = int(row["mask_id"])
            if mask_id in meta:
                raise CatalogError(f"{args.map}: duplicate mask_id {mask_id}")
            meta[mask_id] = row

    cat = Catalog(base_dir=Path(args.catalog).parent)
    skipped = 0
    for path in files:
        try:
            mask_id = int(path.stem)
        except ValueError:
            print(f"warning: skipping {path.name}: name is not a mask id",
                  file=sys.stderr)
            skipped += 1
            continue
        row = meta.get(mask_id, {})
        cat.add(MaskRecord(
            mask_id=mask_id,
            image_id=int(row.get("image_id", mask_id)),
            model_id=int(row.get("model_id", 1)),
            mask_type=int(row.get("mask_type", 1)),
            path=str(path.resolve()),
        ))
    if not cat.masks:
        _err("no ingestible mask files")
        return EXIT_IO

    rois: dict[int, Roi] = {}
    if args.rois:
        for row in _read_csv(args.rois, ("image_id", "r0", "c0", "r1", "c1")):
            image_id = int(row["image_id"])
            if image_id in rois:
                raise CatalogError(f"{args.rois}: duplicate image_id {image_id}")
            rois[image_id] = Roi(int(row["r0"]), int(row["c0"]),
                                 int(row["r1"]), int(row["c1"]))
    if args.labels:
        seen = set()
        for row in _read_csv(args.labels, ("image_id", "true_label", "pred_label")):
            image_id = int(row["image_id"])
            if image_id in seen:
                raise CatalogError(f"{args.labels}: duplicate image_id {image_id}")
            seen.add(image_id)
            cat.add(ImageRecord(
                image_id=image_id,
                true_label=int(row["true_label"]),
                pred_label=int(row["pred_label"]),
                path=row.get("path") or None,
                object_roi=rois.get(image_id),
            ))

    catalog_save(cat, args.catalog)
    print(f"wrote {args.catalog}: {len(cat.masks)} masks, {len(cat.images)} images"
          + (f", {skipped} files skipped" if skipped else ""), file=sys.stderr)
    return EXIT_OK


# --- index --------------------------------------------------------------------

def _parse_cell(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"cell must look like 32x32, got {text!r}")


def cmd_index_build(args: argparse.Namespace) -> int:
    if args.buckets <= 0 or any(c <= 0 for c in args.cell):
        _err("buckets and cell dimensions must be positive")
        return EXIT_USAGE
    catalog = catalog_load(args.catalog)
    config = ChiConfig(buckets=args.buckets, cell_h=args.cell[0], cell_w=args.cell[1])
    chi = build_index(catalog, config)
    for mask_id, reason in sorted(chi.build_errors.items()):
        print(f"warning: mask {mask_id} not indexed: {reason}", file=sys.stderr)
    index_save(chi, args.out)
    print(f"wrote {args.out}: {len(chi)} masks indexed "
          f"(B={config.buckets}, cell={config.cell_h}x{config.cell_w})",
          file=sys.stderr)
    return EXIT_OK


def cmd_index_stats(args: argparse.Namespace) -> int:
    chi = index_load(args.index)
    index_bytes = Path(args.index).stat().st_size
    line = (f"index {args.index}: {len(chi)} masks, "
            f"B={chi.config.buckets}, cell={chi.config.cell_h}x{chi.config.cell_w}, "
            f"{index_bytes} bytes")
    if args.catalog:
        catalog = catalog_load(args.catalog)
        raw = sum(
            catalog.mask_path(mask_id).stat().st_size
            for mask_id in catalog.mask_ids()
            if catalog.mask_path(mask_id).exists()
        )
        if raw:
            line += f", raw masks {raw} bytes, ratio {index_bytes / raw:.4f}"
    print(line)
    return EXIT_OK


# --- query ---------------------------------------------------------------------

def _load_pair(args: argparse.Namespace):
    catalog = catalog_load(args.catalog)
    if args.index and Path(args.index).exists():
        chi = index_load(args.index)
        if args.mode == "incremental":
            chi.backing_path = Path(args.index)
    elif args.mode == "incremental":
        # start empty; verification loads fill the index as queries run
        from .chi import DEFAULT_CONFIG, Chi

        chi = Chi(DEFAULT_CONFIG)
        if args.index:
            index_save(chi, args.index)
            chi.backing_path = Path(args.index)
    else:
        chi = build_index(catalog)
        if args.index:
            index_save(chi, args.index)
    return catalog, chi


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def cmd_query(args: argparse.Namespace) -> int:
    params = json.loads(args.params) if args.params else None
    catalog, chi = _load_pair(args)
    store = MaskStore(catalog)
    plan = validate(parse(args.sql, params), catalog, dims_of=store.dims)
    rows, stats = engine.eval(plan, chi, catalog, store, args.mode, args.threads)
    for row in rows:
        print(f"{row.key}\t{_format_value(row.value)}")
    if args.stats:
        print(json.dumps(stats.to_json(), indent=2), file=sys.stderr)
    if args.oracle:
        brute = eval_brute(plan, catalog, MaskStore(catalog))
        ok, reason = rows_match(rows, brute, plan)
        print("MATCH" if ok else f"MISMATCH: {reason}", file=sys.stderr)
        if not ok:
            return 1
    return EXIT_OK


# --- bench -----------------------------------------------------------------------

def cmd_bench(args: argparse.Namespace) -> int:
    if args.catalog:
        catalog = catalog_load(args.catalog)
    else:
        if not args.generate:
            _err("bench needs --catalog or --generate DIR")
            return EXIT_USAGE
        from .synth import make_dataset

        catalog = make_dataset(
            args.generate, n_images=args.n_images,
            models=tuple(range(1, args.models + 1)),
            mask_types=tuple(range(1, args.mask_types + 1)),
            height=args.size[0], width=args.size[1], seed=args.seed,
        )
        print(f"generated {len(catalog.masks)} masks under {args.generate}",
              file=sys.stderr)
    if args.index and Path(args.index).exists():
        chi = index_load(args.index)
    else:
        chi = build_index(catalog)
        if args.index:
            index_save(chi, args.index)
    queries = bench_mod.random_workload(catalog, args.queries, args.seed)
    report = bench_mod.run_bench(
        catalog, chi, queries,
        compare_naive=args.compare_naive, threads=args.threads,
    )
    print(bench_mod.format_report(report))
    return EXIT_OK


# --- serve ------------------------------------------------------------------------

def cmd_serve(args: argparse.Namespace) -> int:
    from .service import create_app

    import uvicorn

    app = create_app(args.data_root, ui_dir=args.ui_dir)
    try:
        uvicorn.run(app, host=args.host, port=args.port)
    except SystemExit as exc:  # uvicorn raises on bind failure
        return int(exc.code or 1)
    return EXIT_OK


# --- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskquery",
        description="Query engine over image mask collections.",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("ingest", help="Build a catalog from a directory of masks.")
    p.add_argument("--masks", required=True, help="directory of <mask_id>.msk1/.pgm")
    p.add_argument("--catalog", required=True, help="output JSON Lines path")
    p.add_argument("--map", help="CSV mask_id,image_id,model_id,mask_type")
    p.add_argument("--labels", help="CSV image_id,true_label,pred_label[,path]")
    p.add_argument("--rois", help="CSV image_id,r0,c0,r1,c1")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("index", help="Histogram index operations.")
    index_sub = p.add_subparsers(dest="index_cmd", required=True)
    pb = index_sub.add_parser("build", help="Index every catalog mask.")
    pb.add_argument("--catalog", required=True)
    pb.add_argument("--out", required=True)
    pb.add_argument("--buckets", type=int, default=16)
    pb.add_argument("--cell", type=_parse_cell, default=(32, 32),
                    help="cell size as HxW (default 32x32)")
    pb.set_defaults(fn=cmd_index_build)
    ps = index_sub.add_parser("stats", help="Describe an index file.")
    ps.add_argument("--index", required=True)
    ps.add_argument("--catalog", help="also compare against raw mask bytes")
    ps.set_defaults(fn=cmd_index_stats)

    p = sub.add_parser("query", help="Run one statement against a catalog.")
    p.add_argument("--catalog", required=True)
    p.add_argument("--index", help="CHI1 file; built in memory when absent")
    p.add_argument("--sql", required=True)
    p.add_argument("--params", help="JSON object binding bare identifiers")
    p.add_argument("--mode", choices=("full", "incremental"), default="full")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--stats", action="store_true", help="stats JSON to stderr")
    p.add_argument("--oracle", action="store_true",
                   help="also run the brute-force evaluator and diff")
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("bench", help="Time a random workload, optionally vs naive.")
    p.add_argument("--catalog", help="existing catalog to benchmark")
    p.add_argument("--index", help="CHI1 file; built when absent")
    p.add_argument("--generate", help="directory for a synthetic dataset")
    p.add_argument("--n-images", type=int, default=200)
    p.add_argument("--models", type=int, default=1)
    p.add_argument("--mask-types", type=int, default=1)
    p.add_argument("--size", type=_parse_cell, default=(64, 64),
                   help="mask size as HxW (default 64x64)")
    p.add_argument("--queries", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--compare-naive", action="store_true")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("serve", help="Start the HTTP service.")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--data-root", default=".")
    p.add_argument("--ui-dir", default=None)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ParseError, ValidationError, json.JSONDecodeError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    except (OSError, CatalogError, MaskFormatError, ChiFormatError) as exc:
        _err(str(exc))
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
