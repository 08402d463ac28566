import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forgeryloc import BlockGrid, InvalidArgumentError, plan_grid
from forgeryloc.postprocess import (
    binarize_blocks,
    blocks_to_mask,
    fill_holes,
    interpolate_grid,
    select_threshold,
    upscale_mask,
)

from oracles import bilinear_at, fill_holes_cc, scan_threshold


def test_bimodal_threshold_example():
    q = np.array([0.1] * 50 + [0.9] * 20)
    rep = select_threshold(q)
    assert not rep.fallback_used and 0.1 < rep.chosen_threshold < 0.9
    assert binarize_blocks(q, rep.chosen_threshold).sum() == 20
    assert rep.histogram.sum() == 70


def test_constant_field_falls_back():
    rep = select_threshold(np.full(40, 0.2))
    assert rep.fallback_used and rep.chosen_threshold == 0.5


def test_adjacent_masses_threshold_between_centers():
    # masses two bins apart with one empty bin between them
    i = 100
    q = np.array([(i + 0.5) / 256] * 30 + [(i + 2.5) / 256] * 10)
    rep = select_threshold(q)
    assert (i + 0.5) / 256 < rep.chosen_threshold < (i + 2.5) / 256


def test_empty_or_out_of_range_input():
    with pytest.raises(InvalidArgumentError):
        select_threshold(np.array([]))
    with pytest.raises(InvalidArgumentError):
        select_threshold(np.array([1.2]))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=200), st.integers(0, 10))
def test_threshold_matches_exhaustive_scan(values, quant):
    q = np.array(values)
    if quant:  # also exercise plateaus and exact ties
        q = np.round(q * quant) / quant
    rep = select_threshold(q)
    t, fb = scan_threshold(q.tolist())
    assert rep.chosen_threshold == t and rep.fallback_used == fb


def test_threshold_permutation_invariant(rng):
    q = rng.random(135)
    assert select_threshold(q).chosen_threshold == select_threshold(rng.permutation(q)).chosen_threshold


def test_fill_examples():
    ring = np.ones((5, 5), dtype=int)
    ring[2, 2] = 0
    assert fill_holes(ring).sum() == 25
    assert fill_holes(np.zeros((4, 6))).sum() == 0
    with pytest.raises(InvalidArgumentError):
        fill_holes(np.full((3, 3), 0.5))


def test_fill_uses_four_connectivity():
    g = np.ones((5, 5), dtype=int)
    g[1:4, 1:4] = 0
    g[0, 0] = 0  # only diagonally adjacent to the hole
    out = fill_holes(g)
    assert out[2, 2] == 1 and out[0, 0] == 0


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 10_000), st.floats(0.2, 0.8))
def test_fill_matches_component_oracle(rows, cols, seed, p):
    g = (np.random.default_rng(seed).random((rows, cols)) < p).astype(np.uint8)
    out = fill_holes(g)
    assert np.array_equal(out, fill_holes_cc(g))
    assert np.array_equal(fill_holes(out), out)
    assert np.all(out >= g)


def test_upscale_examples():
    g = BlockGrid(2, 3, 8)
    assert upscale_mask(np.ones((2, 3)), g, 16, 24).values.min() == 1
    one = plan_grid(100, 90)
    assert upscale_mask(np.ones((1, 1)), one, 100, 90).values.sum() == 9000
    four = BlockGrid(2, 2, 4)
    soft = interpolate_grid(np.array([[1, 0], [0, 0]]), four, 8, 8)
    # pixels 3 and 4 straddle the midpoint between centers; their average is the midpoint value
    assert soft[3:5, 3:5].mean() == pytest.approx(0.25)
    assert upscale_mask(np.array([[1, 0], [0, 0]]), four, 8, 8).values[3:5, 3:5].sum() == 0
    with pytest.raises(InvalidArgumentError):
        upscale_mask(np.ones((2, 3)), g, 17, 24)


def test_bilinear_matches_closed_form_at_probes(rng):
    grid = plan_grid(1080, 1920)
    values = rng.random((9, 15))
    soft = interpolate_grid(values, grid, 1080, 1920)
    for y, x in zip(rng.integers(0, 1080, 400), rng.integers(0, 1920, 400)):
        assert soft[y, x] == pytest.approx(bilinear_at(values.tolist(), 128, int(y), int(x)), abs=1e-12)


def test_upscale_monotone_in_block_values(rng):
    grid = BlockGrid(3, 4, 16)
    for _ in range(20):
        v = rng.random((3, 4))
        w = v.copy()
        w[rng.integers(3), rng.integers(4)] += rng.random()
        assert np.all(interpolate_grid(w, grid, 48, 64) >= interpolate_grid(v, grid, 48, 64) - 1e-12)


def test_end_to_end_reconstructs_block_mask(rng):
    grid = plan_grid(1080, 1920)
    for _ in range(20):
        truth = (rng.random((9, 15)) < 0.3).astype(np.uint8)
        truth = fill_holes(truth)
        if truth.sum() in (0, truth.size):
            continue
        # each mode stays inside one histogram bin
        q = np.where(truth == 1, 0.9 + rng.uniform(0, 1e-3, truth.shape), 0.1 + rng.uniform(0, 1e-3, truth.shape))
        mask, rep, block_mask = blocks_to_mask(q.ravel(), grid)
        assert not rep.fallback_used
        assert np.array_equal(block_mask, truth)
        assert np.array_equal(mask.values, upscale_mask(truth, grid, 1080, 1920).values)
