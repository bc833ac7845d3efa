"""Shared fixtures: one mid-sized synthetic dataset reused across test files."""

from __future__ import annotations

import pytest

from maskquery import build_index, synth


@pytest.fixture(scope="session")
def demo_catalog(tmp_path_factory):
    base = tmp_path_factory.mktemp("demo_ds")
    return synth.make_dataset(
        base, n_images=30, models=(1, 2), mask_types=(1, 2),
        height=64, width=64, seed=101, with_images=True,
    )


@pytest.fixture(scope="session")
def demo_chi(demo_catalog):
    chi = build_index(demo_catalog)
    assert not chi.build_errors
    return chi
