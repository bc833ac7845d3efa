"""Mask payloads: geometry, value ranges, file formats, exact counting."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from maskquery.masks import (
    MaskFormatError,
    Roi,
    ValueRange,
    combine_masks,
    cp_exact,
    in_range,
    is_binary,
    load_mask,
    mask_dims,
    save_mask,
    threshold_mask,
    validate_mask,
)


def mask_arrays(max_side: int = 24):
    side = st.integers(1, max_side)
    return st.tuples(side, side).flatmap(
        lambda hw: hnp.arrays(
            np.float32, hw,
            elements=st.floats(0.0, 1.0, width=32, allow_nan=False),
        )
    )


def rois_within(height: int, width: int):
    return st.tuples(
        st.integers(0, height - 1), st.integers(0, width - 1)
    ).flatmap(lambda rc: st.tuples(
        st.just(rc[0]), st.just(rc[1]),
        st.integers(rc[0] + 1, height), st.integers(rc[1] + 1, width),
    )).map(lambda t: Roi(*t))


def value_ranges():
    return st.tuples(
        st.floats(0.0, 0.99, allow_nan=False),
        st.floats(0.0, 1.0, allow_nan=False),
    ).filter(lambda t: t[0] < t[1]).map(lambda t: ValueRange(*t))


# --- geometry ----------------------------------------------------------------

def test_roi_basics():
    roi = Roi(2, 3, 10, 7)
    assert roi.area == 32
    assert roi.as_tuple() == (2, 3, 10, 7)
    assert Roi.full(5, 6) == Roi(0, 0, 5, 6)
    roi.validate_for(10, 7)
    with pytest.raises(ValueError):
        roi.validate_for(9, 7)


@pytest.mark.parametrize("bad", [(0, 0, 0, 5), (3, 0, 2, 5), (-1, 0, 2, 2), (0, 4, 3, 4)])
def test_degenerate_roi_rejected(bad):
    with pytest.raises(ValueError):
        Roi(*bad)


def test_value_range_rules():
    assert ValueRange(0.8, 1.0).closed_top
    assert not ValueRange(0.2, 0.6).closed_top
    for lv, uv in [(0.5, 0.5), (0.7, 0.2), (-0.1, 0.5), (0.0, 1.5)]:
        with pytest.raises(ValueError):
            ValueRange(lv, uv)


def test_in_range_top_closure():
    arr = np.array([[0.0, 0.5, 0.79, 0.8, 1.0]], dtype=np.float32)
    assert in_range(arr, ValueRange(0.8, 1.0)).sum() == 2  # 0.8 and 1.0
    assert in_range(arr, ValueRange(0.0, 0.5)).sum() == 1  # upper edge open
    assert in_range(arr, ValueRange(0.0, 1.0)).sum() == 5


def test_cp_exact_counts():
    mask = np.zeros((4, 4), dtype=np.float32)
    mask[:2, :2] = 0.9
    assert cp_exact(mask, Roi.full(4, 4), ValueRange(0.5, 1.0)) == 4
    assert cp_exact(mask, Roi(0, 0, 3, 3), ValueRange(0.5, 1.0)) == 4
    assert cp_exact(mask, Roi(2, 2, 4, 4), ValueRange(0.5, 1.0)) == 0
    with pytest.raises(ValueError):
        cp_exact(mask, Roi(0, 0, 5, 4), ValueRange(0.5, 1.0))


@settings(deadline=None)
@given(mask_arrays())
def test_cp_full_range_equals_area(mask):
    h, w = mask.shape
    assert cp_exact(mask, Roi.full(h, w), ValueRange(0.0, 1.0)) == h * w


@settings(deadline=None, max_examples=60)
@given(mask_arrays(16), st.data())
def test_cp_additive_in_roi(mask, data):
    h, w = mask.shape
    roi = data.draw(rois_within(h, w))
    vrange = data.draw(value_ranges())
    if roi.r1 - roi.r0 < 2:
        return
    mid = data.draw(st.integers(roi.r0 + 1, roi.r1 - 1))
    top = Roi(roi.r0, roi.c0, mid, roi.c1)
    bottom = Roi(mid, roi.c0, roi.r1, roi.c1)
    assert (cp_exact(mask, roi, vrange)
            == cp_exact(mask, top, vrange) + cp_exact(mask, bottom, vrange))


@settings(deadline=None, max_examples=60)
@given(mask_arrays(16), st.data())
def test_cp_monotone_in_range(mask, data):
    h, w = mask.shape
    roi = data.draw(rois_within(h, w))
    inner = data.draw(value_ranges())
    outer = ValueRange(inner.lv / 2.0, min(1.0, inner.uv + (1.0 - inner.uv) / 2.0)) \
        if inner.uv < 1.0 else ValueRange(inner.lv / 2.0, 1.0)
    assert cp_exact(mask, roi, inner) <= cp_exact(mask, roi, outer)


# --- binarization and combination ---------------------------------------------

def test_threshold_strict_and_edges():
    arr = np.array([[0.0, 0.5, 0.5000001, 1.0]], dtype=np.float32)
    out = threshold_mask(arr, 0.5)
    assert out.tolist() == [[0.0, 0.0, 1.0, 1.0]]
    assert threshold_mask(arr, 1.0).sum() == 0
    assert threshold_mask(np.full((2, 2), 0.1, np.float32), 0.0).sum() == 4
    assert is_binary(out)
    with pytest.raises(ValueError):
        threshold_mask(arr, 1.5)


def test_combine_masks():
    a = np.array([[1, 0, 1, 0]], dtype=np.float32)
    b = np.array([[1, 1, 0, 0]], dtype=np.float32)
    assert combine_masks([a, b], "intersect").tolist() == [[1, 0, 0, 0]]
    assert combine_masks([a, b], "union").tolist() == [[1, 1, 1, 0]]
    assert combine_masks([a, a], "intersect").tolist() == a.tolist()
    with pytest.raises(ValueError):
        combine_masks([], "union")
    with pytest.raises(ValueError):
        combine_masks([a, np.ones((2, 2), np.float32)], "union")
    with pytest.raises(ValueError):
        combine_masks([np.full((1, 4), 0.5, np.float32)], "union")


def test_validate_mask_errors():
    with pytest.raises(MaskFormatError):
        validate_mask(np.ones(4, np.float32))
    with pytest.raises(MaskFormatError):
        validate_mask(np.full((2, 2), 1.5, np.float32))
    with pytest.raises(MaskFormatError):
        validate_mask(np.full((2, 2), np.nan, np.float32))


# --- file formats ---------------------------------------------------------------

@settings(deadline=None, max_examples=40)
@given(mask_arrays())
def test_mask_file_roundtrip(tmp_path_factory, mask):
    path = tmp_path_factory.mktemp("rt") / "m.msk1"
    save_mask(mask, path)
    loaded = load_mask(path)
    assert loaded.dtype == np.float32
    assert np.array_equal(loaded, mask)
    assert mask_dims(path) == mask.shape


def test_pgm_mapping(tmp_path):
    payload = bytes([0, 51, 255, 128, 7, 99])
    path = tmp_path / "m.pgm"
    path.write_bytes(b"P5\n# a comment\n3 2\n255\n" + payload)
    mask = load_mask(path)
    assert mask.shape == (2, 3)
    expected = np.frombuffer(payload, np.uint8).reshape(2, 3).astype(np.float32) / np.float32(255.0)
    assert np.array_equal(mask, expected)
    assert mask_dims(path) == (2, 3)


def test_mask_format_errors(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(b"WHAT")
    with pytest.raises(MaskFormatError):
        load_mask(p)
    p.write_bytes(b"MSK1" + b"\x02\x00\x00\x00\x02\x00\x00\x00" + b"\x00" * 7)
    with pytest.raises(MaskFormatError, match="truncated"):
        load_mask(p)
    p.write_bytes(b"MSK1\x00\x00")
    with pytest.raises(MaskFormatError, match="header"):
        load_mask(p)
    p.write_bytes(b"P5\n3 2\n70000\n" + b"\x00" * 6)
    with pytest.raises(MaskFormatError):
        load_mask(p)


def test_saved_values_out_of_range_rejected(tmp_path):
    bad = np.full((2, 2), 2.0, dtype=np.float32)
    with pytest.raises(MaskFormatError):
        save_mask(bad, tmp_path / "m.msk1")
