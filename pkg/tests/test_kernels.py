"""Numeric kernels of the conditioning scheme: blend schedule, map
interpolation, overlap scoring, sparsity penalty and its gradient."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hiercm.attention import (DEFAULT_SPARSITY_WEIGHT, AttentionStack,
                              combined_loss, dice_overlap,
                              grad_sparsity_loss, interpolate_attention,
                              schedule, sparsity_loss)

A_HALF = np.array([[1.0, 0.0], [0.0, 0.0]])
B_FULL = np.array([[1.0, 1.0], [0.0, 0.0]])
C_DISJOINT = np.array([[0.0, 0.0], [0.0, 1.0]])


# -- schedule ---------------------------------------------------------------

def test_schedule_endpoints_bit_exact():
    assert schedule(0, 8) == 1.0
    assert schedule(7, 8) == 0.0
    assert schedule(0, 2) == 1.0
    assert schedule(1, 2) == 0.0


def test_schedule_quarter_turn():
    # t = (T-1)/2 puts the argument at pi/4
    assert schedule(4, 9) == 0.7071067811865476


def test_schedule_strictly_decreasing():
    for total in (2, 5, 8, 33):
        values = [schedule(t, total) for t in range(total)]
        assert all(a > b for a, b in zip(values, values[1:]))


def test_schedule_domain_errors():
    with pytest.raises(ValueError, match="total_steps"):
        schedule(0, 1)
    with pytest.raises(ValueError, match="outside"):
        schedule(-1, 8)
    with pytest.raises(ValueError, match="outside"):
        schedule(8, 8)


# -- interpolation ----------------------------------------------------------

def test_interpolation_endpoints_bit_exact():
    g = np.array([[0.2, 0.4], [0.6, 0.8]])
    l1 = np.array([[1.0, 0.0], [0.0, 1.0]])
    l2 = np.array([[0.0, 1.0], [1.0, 0.0]])
    late = interpolate_attention(AttentionStack(g, [l1, l2], t=7, total_steps=8))
    np.testing.assert_array_equal(late, g)
    assert late is not g  # a copy, the caller may mutate it
    early = interpolate_attention(AttentionStack(g, [l1, l2], t=0, total_steps=8))
    np.testing.assert_array_equal(early, (l1 + l2) / 2)


def test_interpolation_midpoint_value():
    # ones blended with a zero local at s = cos(pi/4): every entry is 1 - s
    g = np.ones((3, 3))
    out = interpolate_attention(
        AttentionStack(g, [np.zeros((3, 3))], t=4, total_steps=9))
    np.testing.assert_array_equal(out, np.full((3, 3), 1.0 - 0.7071067811865476))


def test_stack_validation():
    g = np.ones((2, 2))
    with pytest.raises(ValueError, match="local map 0 shape"):
        AttentionStack(g, [np.ones((3, 3))], t=0, total_steps=8)
    with pytest.raises(ValueError, match="at least one local"):
        AttentionStack(g, [], t=0, total_steps=8)
    with pytest.raises(ValueError, match="negative"):
        AttentionStack(g, [-np.ones((2, 2))], t=0, total_steps=8)
    with pytest.raises(ValueError, match="2-D"):
        AttentionStack(np.ones(4), [np.ones(4)], t=0, total_steps=8)
    with pytest.raises(ValueError, match="outside"):
        AttentionStack(g, [g], t=8, total_steps=8)
    with pytest.raises(ValueError, match="total_steps"):
        AttentionStack(g, [g], t=0, total_steps=1)


# -- overlap ----------------------------------------------------------------

def test_dice_identical_and_disjoint():
    assert dice_overlap(A_HALF, A_HALF) == 1.0
    assert dice_overlap(A_HALF, C_DISJOINT) == 0.0


def test_dice_partial_overlap():
    assert abs(dice_overlap(A_HALF, B_FULL) - 2.0 / 3.0) <= 1e-12


def test_dice_symmetry_and_scale_covariance():
    assert dice_overlap(A_HALF, B_FULL) == dice_overlap(B_FULL, A_HALF)
    base = dice_overlap(A_HALF, B_FULL)
    scaled = dice_overlap(3.0 * A_HALF, 3.0 * B_FULL)
    assert math.isclose(scaled, 3.0 * base, rel_tol=1e-12)


def test_dice_both_zero_rejected():
    with pytest.raises(ValueError, match="both maps are exactly zero"):
        dice_overlap(np.zeros((2, 2)), np.zeros((2, 2)))


def test_dice_shape_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        dice_overlap(np.ones((2, 2)), np.ones((2, 3)))


def test_dice_strict_trace_differs_on_nonsymmetric_maps():
    nil = np.array([[0.0, 1.0], [0.0, 0.0]])  # nilpotent: trace(N @ N) = 0
    assert dice_overlap(nil, nil) == 1.0
    assert dice_overlap(nil, nil, strict_trace=True) == 0.0
    with pytest.raises(ValueError, match="square"):
        dice_overlap(np.ones((2, 3)), np.ones((2, 3)), strict_trace=True)


@given(st.lists(st.floats(0.0, 1.0), min_size=8, max_size=8))
def test_dice_range_for_unit_interval_maps(flat):
    a = np.array(flat[:4]).reshape(2, 2)
    b = np.array(flat[4:]).reshape(2, 2)
    if a.sum() + b.sum() == 0.0:
        return
    assert 0.0 <= dice_overlap(a, b) <= 1.0


# -- sparsity penalty -------------------------------------------------------

def test_sparsity_single_map_is_zero():
    assert sparsity_loss([np.random.default_rng(0).random((4, 4))]) == 0.0


def test_sparsity_disjoint_maps_is_zero():
    assert sparsity_loss([A_HALF, C_DISJOINT]) == 0.0


def test_sparsity_counts_ordered_pairs():
    # one unordered pair with overlap 2/3, counted twice
    assert abs(sparsity_loss([A_HALF, B_FULL]) - 4.0 / 3.0) <= 1e-12


def test_sparsity_permutation_invariant():
    rng = np.random.default_rng(7)
    maps = [rng.random((3, 3)) for _ in range(4)]
    assert math.isclose(sparsity_loss(maps), sparsity_loss(maps[::-1]),
                        rel_tol=1e-12)


# -- combined objective -----------------------------------------------------

def test_combined_loss_values():
    assert combined_loss(1.5, [A_HALF]) == 1.5  # empty pair sum
    assert combined_loss(2.0, [A_HALF, A_HALF], weight=1.0) == 4.0
    assert DEFAULT_SPARSITY_WEIGHT == 1e-4


def test_combined_weight_zero_skips_overlap_term():
    # with weight 0 an all-zero pair must not raise
    assert combined_loss(0.7, [np.zeros((2, 2)), np.zeros((2, 2))],
                         weight=0.0) == 0.7


def test_combined_loss_validation():
    with pytest.raises(ValueError, match="weight"):
        combined_loss(1.0, [A_HALF], weight=-0.1)
    with pytest.raises(ValueError, match="finite"):
        combined_loss(float("nan"), [A_HALF])


# -- sparsity gradient ------------------------------------------------------

def test_grad_single_map_is_zero():
    grads = grad_sparsity_loss([np.ones((2, 2))])
    assert len(grads) == 1
    np.testing.assert_array_equal(grads[0], np.zeros((2, 2)))


def test_grad_disjoint_pair_closed_form():
    # disjoint maps: overlap d = 0, so the gradient of each map is
    # 2 * 2 * other / (sum_a + sum_b) exactly
    grads = grad_sparsity_loss([A_HALF, C_DISJOINT])
    np.testing.assert_array_equal(grads[0], 2.0 * C_DISJOINT)
    np.testing.assert_array_equal(grads[1], 2.0 * A_HALF)


def test_grad_matches_finite_differences():
    rng = np.random.default_rng(123)
    maps = [rng.uniform(0.05, 1.0, (3, 3)) for _ in range(3)]
    grads = grad_sparsity_loss(maps)
    h = 1e-6
    scale = max(float(np.abs(g).max()) for g in grads)
    worst = 0.0
    for k in range(3):
        for i in range(3):
            for j in range(3):
                up = [m.copy() for m in maps]
                dn = [m.copy() for m in maps]
                up[k][i, j] += h
                dn[k][i, j] -= h
                fd = (sparsity_loss(up) - sparsity_loss(dn)) / (2 * h)
                worst = max(worst, abs(grads[k][i, j] - fd))
    # error relative to the gradient's own scale; per-entry relative error
    # is dominated by subtraction roundoff at near-zero entries
    assert worst / scale <= 1e-6
