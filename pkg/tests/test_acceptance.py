"""End-to-end gates over synthesized datasets.

One test per core promise: engine results equal the brute-force oracle,
index bounds never exclude a true answer, aligned queries resolve without
touching mask payloads, pruning keeps the loaded fraction small, an indexed
filter beats a naive full scan, incremental indexing beats a full build for
narrow workloads, the index stays a small fraction of the raw mask bytes,
the canonical statement corpus round-trips, and augmentation preserves the
region of interest while being seed-deterministic outside it.

Each test prints a single verdict line so `pytest -s` reads as a checklist.
"""

from __future__ import annotations

import statistics
import time

import numpy as np
import pytest

from maskquery import synth
from maskquery.bench import random_workload
from maskquery.catalog import MaskStore
from maskquery.chi import Chi, ChiConfig, build_index, index_save
from maskquery.dialect import parse, render, validate
from maskquery.engine import eval as eval_plan
from maskquery.images import augment_image, load_image, splitmix64_bytes
from maskquery.masks import Roi, ValueRange, cp_exact
from maskquery.oracle import eval_brute, rows_match

RECT_CENTER = ((8, 8), (56, 56))

# the five statement shapes the dialect exists for, with parameters sized to
# the 64x64 gate dataset below (mask types 1..4, a single model)
CORPUS = [
    (
        "SELECT mask_id FROM MasksDatabaseView WHERE CP(mask, roi, (lv, uv)) < T;",
        {"roi": RECT_CENTER, "lv": 0.4, "uv": 1.0, "T": 800},
        "filter",
    ),
    (
        "SELECT mask_id FROM MasksDatabaseView "
        "ORDER BY CP(mask, roi, (lv, uv)) DESC LIMIT K;",
        {"roi": ((0, 0), (32, 64)), "lv": 0.5, "uv": 1.0, "K": 25},
        "topk",
    ),
    (
        "SELECT image_id FROM MasksDatabaseView WHERE mask_type IN (1, 2, ..., n) "
        "GROUP BY image_id ORDER BY CP(MASK_AGG(mask), roi, (lv, uv));",
        {"n": 4, "mask_agg": {"op": "union", "threshold": 0.5},
         "roi": RECT_CENTER, "lv": 0.5, "uv": 1.0},
        "aggregation",
    ),
    (
        "SELECT mask_id FROM MasksDatabaseView "
        "ORDER BY CP(mask, full_img, (0.2, 0.6)) DESC LIMIT 25;",
        {},
        "topk",
    ),
    (
        "SELECT image_id, CP(intersect(mask > 0.8), roi, (lv, uv)) "
        "/ CP(union(mask > 0.8), roi, (lv, uv)) as iou "
        "FROM MasksDatabaseView WHERE mask_type IN (1, 2) "
        "GROUP BY image_id ORDER BY iou ASC LIMIT 25;",
        {"roi": ((16, 16), (48, 48)), "lv": 0.5, "uv": 1.0},
        "aggregation",
    ),
]


def _verdict(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def gate_catalog(tmp_path_factory):
    base = tmp_path_factory.mktemp("gate_data")
    cat = synth.make_dataset(base, n_images=125, models=(1,),
                             mask_types=(1, 2, 3, 4), seed=2026)
    assert len(cat.masks) == 500
    return cat


@pytest.fixture(scope="module")
def gate_chi(gate_catalog):
    chi = build_index(gate_catalog)
    assert not chi.build_errors
    return chi


@pytest.fixture(scope="module")
def gate_store(gate_catalog):
    # shared across correctness gates: equivalence checks compare values, not IO
    return MaskStore(gate_catalog)


def test_engine_matches_oracle_on_mixed_workload(gate_catalog, gate_chi, gate_store):
    queries = [(q.sql, q.plan) for q in random_workload(gate_catalog, 95, seed=4242)]
    for sql, params, _ in CORPUS:
        plan = validate(parse(sql, params=params), gate_catalog)
        queries.append((render(plan), plan))
    assert len(queries) == 100

    t0 = time.perf_counter()
    mismatches = []
    for sql, plan in queries:
        rows, stats = eval_plan(plan, gate_chi, gate_catalog, gate_store)
        brute = eval_brute(plan, gate_catalog, gate_store)
        ok, why = rows_match(rows, brute, plan)
        if not ok:
            mismatches.append(f"{sql}: {why}")
        if stats.accepted + stats.pruned + stats.verified != stats.total_candidates:
            mismatches.append(f"{sql}: stats do not sum")
    elapsed = time.perf_counter() - t0

    ok = not mismatches and elapsed < 120.0
    detail = (f"{len(queries) - len(mismatches)}/{len(queries)} plans agree, "
              f"{elapsed:.1f}s (budget 120s)")
    if mismatches:
        detail += " | first: " + mismatches[0]
    _verdict("oracle-equivalence", ok, detail)


def test_bounds_always_contain_exact_count(gate_catalog, gate_chi, gate_store):
    rng = np.random.default_rng(99)
    ids = sorted(gate_catalog.masks)[:100]
    B = gate_chi.config.buckets
    checked = 0
    violations = []

    t0 = time.perf_counter()
    for mask_id in ids:
        arr = gate_store.load(mask_id)
        for _ in range(100):
            r0 = int(rng.integers(0, 64))
            r1 = int(rng.integers(r0 + 1, 65))
            c0 = int(rng.integers(0, 64))
            c1 = int(rng.integers(c0 + 1, 65))
            roi = Roi(r0, c0, r1, c1)
            draw = rng.random()
            if draw < 0.1:
                # bucket-edge endpoints, the exact-collapse case
                a = int(rng.integers(0, B))
                b = int(rng.integers(a + 1, B + 1))
                lv, uv = a / B, b / B
            elif draw < 0.2:
                # a hair off the edges, where rounding mistakes would hide
                a = int(rng.integers(0, B))
                b = int(rng.integers(a + 1, B + 1))
                lv = min(max(a / B + float(rng.choice((-1e-9, 1e-9))), 0.0), 1.0)
                uv = min(max(b / B + float(rng.choice((-1e-9, 1e-9))), lv + 1e-12), 1.0)
            elif draw < 0.3:
                lv, uv = float(rng.uniform(0.0, 0.999)), 1.0
            else:
                lv = float(rng.uniform(0.0, 0.99))
                uv = float(rng.uniform(lv + 1e-6, 1.0))
            vrange = ValueRange(lv, uv)

            exact = cp_exact(arr, roi, vrange)
            bp = gate_chi.bounds(mask_id, roi, vrange)
            checked += 1
            if not (0 <= bp.lower <= exact <= bp.upper <= roi.area):
                violations.append(
                    f"mask {mask_id} roi {roi.as_tuple()} range ({lv}, {uv}): "
                    f"[{bp.lower}, {bp.upper}] vs exact {exact}")
    elapsed = time.perf_counter() - t0

    ok = not violations and checked == 10_000 and elapsed < 60.0
    detail = f"{checked} triples, {len(violations)} violations, {elapsed:.1f}s (budget 60s)"
    if violations:
        detail += " | first: " + violations[0]
    _verdict("bound-soundness", ok, detail)


def test_aligned_queries_collapse_and_skip_loads(gate_catalog, gate_chi, gate_store):
    # rois on 32-pixel cell corners of the 64x64 masks, ranges on bucket edges
    rng = np.random.default_rng(7)
    spans = [(0, 32), (0, 64), (32, 64)]
    rois = [(r0, c0, r1, c1) for r0, r1 in spans for c0, c1 in spans]
    B = gate_chi.config.buckets
    edges = [(a, b) for a in range(B) for b in range(a + 1, B + 1)]
    combos = [(roi, ab) for roi in rois for ab in edges]
    picked = [combos[i] for i in rng.permutation(len(combos))[:1000]]
    assert len(picked) == 1000

    cmps = ["<", "<=", ">", ">="]
    fracs = [0.25, 0.5, 0.75]
    limits = [5, 25, 50]
    failures = []
    oracle_checked = 0
    for i, ((r0, c0, r1, c1), (a, b)) in enumerate(picked):
        lv, uv = a / B, b / B
        cp = f"CP(mask, (({r0}, {c0}), ({r1}, {c1})), ({lv}, {uv}))"
        if i % 10 < 7:
            threshold = int(fracs[i % 3] * (r1 - r0) * (c1 - c0))
            sql = (f"SELECT mask_id FROM MasksDatabaseView "
                   f"WHERE {cp} {cmps[i % 4]} {threshold}")
        else:
            sql = (f"SELECT mask_id FROM MasksDatabaseView "
                   f"ORDER BY {cp} {'DESC' if i % 2 else 'ASC'} LIMIT {limits[i % 3]}")
        plan = validate(parse(sql), gate_catalog)
        rows, stats = eval_plan(plan, gate_chi, gate_catalog, gate_store)

        if stats.masks_loaded or stats.verified:
            failures.append(f"{sql}: loaded={stats.masks_loaded} verified={stats.verified}")
            continue
        if plan.kind == "filter":
            if any(lo != hi for _, lo, hi in stats.bounds_sample):
                failures.append(f"{sql}: bounds did not collapse")
                continue
            if any(row.value is None for row in rows):
                failures.append(f"{sql}: filter row missing exact value")
                continue
        if i % 20 == 0:
            brute = eval_brute(plan, gate_catalog, gate_store)
            ok, why = rows_match(rows, brute, plan)
            oracle_checked += 1
            if not ok:
                failures.append(f"{sql}: {why}")

    ok = not failures
    detail = (f"{len(picked) - len(failures)}/{len(picked)} aligned queries resolved "
              f"from the index alone ({oracle_checked} spot-checked against the oracle)")
    if failures:
        detail += " | first: " + failures[0]
    _verdict("aligned-exactness", ok, detail)


def test_bimodal_filter_loads_small_fraction(tmp_path_factory):
    base = tmp_path_factory.mktemp("bimodal")
    cat = synth.make_bimodal_dataset(base, n_images=200, roi=Roi(0, 0, 32, 32), seed=17)
    chi = build_index(cat)
    assert not chi.build_errors

    # 0.55 sits between bucket edges and 625 sits inside the warm masks' bound
    # gap, so the warm decile must be verified while hot and cold are decided
    sql = ("SELECT mask_id FROM MasksDatabaseView "
           "WHERE CP(mask, ((0, 0), (32, 32)), (0.55, 1.0)) > 625")
    plan = validate(parse(sql), cat)
    rows, stats = eval_plan(plan, chi, cat, MaskStore(cat))
    brute = eval_brute(plan, cat, MaskStore(cat))
    match, why = rows_match(rows, brute, plan)

    ok = match and stats.verified > 0 and stats.fml <= 0.2
    _verdict("pruning-fml", ok,
             f"fml={stats.fml:.3f} (cap 0.2), verified={stats.verified}, "
             f"pruned={stats.pruned}, accepted={stats.accepted}, oracle match={match}")


def test_indexed_filter_beats_full_scan(tmp_path_factory):
    base = tmp_path_factory.mktemp("scan")
    cat = synth.make_dataset(base, n_images=1250, models=(1, 2), mask_types=(1, 2),
                             height=128, width=128, seed=11)
    assert len(cat.masks) == 5000
    chi = build_index(cat)
    assert not chi.build_errors

    # unaligned roi: every bound carries cover/inner slop, so the index does
    # real work instead of collapsing, yet still prunes most candidates
    threshold = int(0.8 * 68 * 68)
    sql = ("SELECT mask_id FROM MasksDatabaseView "
           f"WHERE CP(mask, ((30, 30), (98, 98)), (0.5, 1.0)) > {threshold}")
    plan = validate(parse(sql), cat)

    indexed_times = []
    for _ in range(5):
        t0 = time.perf_counter()
        rows, stats = eval_plan(plan, chi, cat, MaskStore(cat))
        indexed_times.append(time.perf_counter() - t0)
    naive_times = []
    for _ in range(5):
        t0 = time.perf_counter()
        brute = eval_brute(plan, cat, MaskStore(cat))
        naive_times.append(time.perf_counter() - t0)

    match, why = rows_match(rows, brute, plan)
    speedup = statistics.median(naive_times) / statistics.median(indexed_times)
    ok = match and speedup >= 5.0
    _verdict("scan-speedup", ok,
             f"median {speedup:.1f}x over 5 runs (need 5.0x), "
             f"indexed {statistics.median(indexed_times) * 1e3:.0f}ms vs "
             f"naive {statistics.median(naive_times) * 1e3:.0f}ms, "
             f"fml={stats.fml:.3f}, rows={len(rows)}, oracle match={match}")


def test_incremental_index_beats_full_build_on_narrow_workload(tmp_path_factory):
    base = tmp_path_factory.mktemp("incr")
    cat = synth.make_dataset(base, n_images=100, models=(1, 2, 3, 4, 5),
                             mask_types=(1,), seed=33)
    assert len(cat.masks) == 500

    # ten ranked queries, all restricted to model 3: a fifth of the masks
    rois = [(0, 0, 32, 32), (8, 8, 56, 56), (16, 0, 48, 64), (0, 16, 64, 48),
            (24, 24, 64, 64), (0, 0, 64, 64), (4, 4, 60, 60), (32, 0, 64, 64),
            (0, 32, 64, 64), (12, 20, 52, 44)]
    plans = []
    for i, (r0, c0, r1, c1) in enumerate(rois):
        lv = (4 + i % 5) / 16
        sql = ("SELECT mask_id FROM MasksDatabaseView WHERE model_id = 3 "
               f"ORDER BY CP(mask, (({r0}, {c0}), ({r1}, {c1})), ({lv}, 1.0)) "
               f"{'DESC' if i % 2 == 0 else 'ASC'} LIMIT 20")
        plans.append(validate(parse(sql), cat))

    chi_inc = Chi(ChiConfig())
    t0 = time.perf_counter()
    inc_rows = [eval_plan(p, chi_inc, cat, MaskStore(cat), mode="incremental")[0]
                for p in plans]
    inc_total = time.perf_counter() - t0

    t0 = time.perf_counter()
    chi_full = build_index(cat)
    full_rows = [eval_plan(p, chi_full, cat, MaskStore(cat))[0] for p in plans]
    full_total = time.perf_counter() - t0

    touched = len(chi_inc)
    ok = inc_rows == full_rows and touched <= 100 and inc_total < full_total
    _verdict("incremental-reuse", ok,
             f"incremental {inc_total * 1e3:.0f}ms < full build+query "
             f"{full_total * 1e3:.0f}ms, indexed {touched}/500 masks, "
             f"rows identical={inc_rows == full_rows}")


def test_index_file_under_five_percent_of_raw(gate_catalog, gate_chi, tmp_path):
    idx_path = tmp_path / "gate.chi1"
    index_save(gate_chi, idx_path)
    raw_bytes = sum(gate_catalog.mask_path(mid).stat().st_size
                    for mid in gate_catalog.masks)
    ratio = idx_path.stat().st_size / raw_bytes
    _verdict("index-size", ratio <= 0.05,
             f"index {idx_path.stat().st_size} bytes / raw {raw_bytes} bytes "
             f"= {ratio:.4f} (cap 0.05)")


def test_canonical_statements_roundtrip(gate_catalog):
    failures = []
    for sql, params, kind in CORPUS:
        try:
            plan = parse(sql, params=params)
            if plan.kind != kind:
                failures.append(f"{sql}: kind {plan.kind} != {kind}")
                continue
            validate(plan, gate_catalog)
            canonical = render(plan)
            again = parse(canonical)
            if again != plan:
                failures.append(f"{sql}: canonical text re-parses to a different plan")
            elif render(again) != canonical:
                failures.append(f"{sql}: render is not a fixed point")
        except Exception as exc:  # noqa: BLE001 - gate reports, does not raise
            failures.append(f"{sql}: {exc}")
    detail = f"{len(CORPUS) - len(failures)}/{len(CORPUS)} statements round-trip"
    if failures:
        detail += " | first: " + failures[0]
    _verdict("dialect-corpus", not failures, detail)


def test_augment_preserves_roi_and_randomizes_outside(tmp_path_factory):
    base = tmp_path_factory.mktemp("aug")
    cat = synth.make_dataset(base, n_images=20, with_images=True, seed=57)
    assert len(cat.images) == 20

    failures = []
    rgb_seen = gray_seen = False
    for image_id in sorted(cat.images):
        rec = cat.images[image_id]
        img = load_image(cat.image_path(image_id))
        roi = rec.object_roi
        before = img.copy()
        seed = 9000 + image_id

        aug = augment_image(img, roi, seed=seed)
        again = augment_image(img, roi, seed=seed)
        if not np.array_equal(img, before):
            failures.append(f"image {image_id}: input modified in place")
        if not np.array_equal(aug, again):
            failures.append(f"image {image_id}: same seed gave different output")
        if not np.array_equal(aug[roi.r0:roi.r1, roi.c0:roi.c1],
                              img[roi.r0:roi.r1, roi.c0:roi.c1]):
            failures.append(f"image {image_id}: roi content changed")

        inside = np.zeros(img.shape[:2], dtype=bool)
        inside[roi.r0:roi.r1, roi.c0:roi.c1] = True
        outside = aug[~inside].reshape(-1)
        if not np.array_equal(outside, splitmix64_bytes(seed, outside.size)):
            failures.append(f"image {image_id}: outside bytes off the seeded stream")

        rgb_seen = rgb_seen or img.ndim == 3
        gray_seen = gray_seen or img.ndim == 2

    ok = not failures and rgb_seen and gray_seen
    detail = f"{len(cat.images) - len(failures)}/20 images, gray and rgb both covered"
    if failures:
        detail += " | first: " + failures[0]
    _verdict("augmentation", ok, detail)
