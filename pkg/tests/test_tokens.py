"""Tests for mask generation, token throwing, dispersion, and isolation."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prmim import tokens
from prmim.tokens import (
    MASKED_RETAINED,
    MASKED_THROWN,
    UNMASKED,
    ConstraintError,
    GridShape,
    MaskPlan,
    SizeError,
)


def _plan_from_labels(labels, rows, cols):
    labels = np.asarray(labels, dtype=np.int64)
    n = rows * cols
    rho_e = np.count_nonzero(labels != UNMASKED) / n
    rho_d = np.count_nonzero(labels == MASKED_THROWN) / n
    return MaskPlan(grid=GridShape(rows, cols), labels=labels, rho_e=rho_e, rho_d=rho_d)


# -------------------------------------------------------- generate_mask


def test_mask_counts_196():
    plan = tokens.generate_mask(GridShape(14, 14), 0.75, 0)
    assert plan.n_masked == 147
    assert plan.unmasked_indices.size == 49


def test_mask_counts_small():
    plan = tokens.generate_mask(GridShape(2, 2), 0.5, 1)
    assert plan.n_masked == 2


def test_mask_determinism():
    a = tokens.generate_mask(GridShape(8, 8), 0.75, 123)
    b = tokens.generate_mask(GridShape(8, 8), 0.75, 123)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_mask_bad_rho_e():
    with pytest.raises(ValueError):
        tokens.generate_mask(GridShape(4, 4), 1.5, 0)


# ------------------------------------------------------ distance_matrix


def test_distance_345_triangle():
    labels = np.zeros(5 * 5, dtype=np.int64)
    labels[0] = MASKED_RETAINED           # (0, 0)
    labels[3 * 5 + 4] = MASKED_RETAINED   # (3, 4)
    plan = _plan_from_labels(labels, 5, 5)
    dmat = tokens.distance_matrix(plan)
    assert dmat.dist[0, 1] == 5.0


def test_distance_symmetry_zero_diagonal():
    plan = tokens.generate_mask(GridShape(7, 5), 0.6, 9)
    dmat = tokens.distance_matrix(plan)
    np.testing.assert_array_equal(dmat.dist, dmat.dist.T)
    np.testing.assert_array_equal(np.diag(dmat.dist), 0.0)


# --------------------------------------------------------- throw_random


def test_throw_zero_keeps_plan():
    plan = tokens.generate_mask(GridShape(8, 8), 0.75, 3)
    out = tokens.throw_random(plan, 0.0, 4)
    np.testing.assert_array_equal(out.labels, plan.labels)


def test_throw_counts_196():
    plan = tokens.generate_mask(GridShape(14, 14), 0.75, 5)
    out = tokens.throw_random(plan, 0.5, 6)
    assert out.thrown_indices.size == 98
    assert out.retained_indices.size == 49


def test_throw_rho_d_exceeds_rho_e():
    plan = tokens.generate_mask(GridShape(8, 8), 0.5, 7)
    with pytest.raises(ValueError):
        tokens.throw_random(plan, 0.6, 8)


@pytest.mark.parametrize("thrower", [tokens.throw_random, tokens.throw_furthest])
def test_throw_count_invariant_over_seeds(thrower):
    grid = GridShape(8, 8)
    for seed in range(100):
        plan = tokens.generate_mask(grid, 0.75, seed)
        out = thrower(plan, 0.4, seed + 1)
        n = grid.n_tokens
        assert out.thrown_indices.size == tokens.round_half_up(n * 0.4)
        assert out.n_masked == tokens.round_half_up(n * 0.75)
        # partition: every token has exactly one label
        assert np.all(np.isin(out.labels, [UNMASKED, MASKED_RETAINED, MASKED_THROWN]))


# ------------------------------------------------------- throw_furthest


def test_furthest_collinear_endpoints():
    labels = np.zeros(1 * 4, dtype=np.int64)
    labels[:] = MASKED_RETAINED  # four collinear tokens (0,0)..(0,3)
    plan = _plan_from_labels(labels, 1, 4)
    out = tokens.throw_furthest(plan, 2 / 4, 0, first_index=0)
    np.testing.assert_array_equal(out.retained_indices, [0, 3])


def test_furthest_2x2_diagonal():
    labels = np.full(4, MASKED_RETAINED, dtype=np.int64)
    plan = _plan_from_labels(labels, 2, 2)
    out = tokens.throw_furthest(plan, 2 / 4, 0, first_index=0)
    np.testing.assert_array_equal(out.retained_indices, [0, 3])


def test_furthest_deterministic_given_seed():
    plan = tokens.generate_mask(GridShape(8, 8), 0.75, 11)
    a = tokens.throw_furthest(plan, 0.5, 12)
    b = tokens.throw_furthest(plan, 0.5, 12)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_furthest_beats_random_median_usually():
    grid = GridShape(4, 4)
    wins = 0
    n_instances = 40
    for inst in range(n_instances):
        rng = np.random.Generator(np.random.PCG64(inst))
        n_m = int(rng.integers(8, 13))
        plan = tokens.generate_mask(grid, n_m / 16, 1000 + inst)
        retain = int(rng.integers(2, max(3, 2 * n_m // 3 + 1)))
        rho_d = (n_m - retain) / 16
        dmat = tokens.distance_matrix(plan)
        greedy = tokens.dispersion_objective(
            dmat, tokens.selection_vector(tokens.throw_furthest(plan, rho_d, inst))
        )
        rand = [
            tokens.dispersion_objective(
                dmat, tokens.selection_vector(tokens.throw_random(plan, rho_d, 77 * inst + j))
            )
            for j in range(50)
        ]
        if greedy >= float(np.median(rand)):
            wins += 1
    assert wins >= 0.9 * n_instances


# ------------------------------------------------- dispersion objective


def test_objective_pair_counted_twice():
    labels = np.zeros(25, dtype=np.int64)
    labels[0] = MASKED_RETAINED
    labels[3 * 5 + 4] = MASKED_RETAINED
    plan = _plan_from_labels(labels, 5, 5)
    dmat = tokens.distance_matrix(plan)
    assert tokens.dispersion_objective(dmat, tokens.selection_vector(plan)) == 10.0


def test_objective_single_token_zero():
    labels = np.zeros(9, dtype=np.int64)
    labels[4] = MASKED_RETAINED
    plan = _plan_from_labels(labels, 3, 3)
    dmat = tokens.distance_matrix(plan)
    assert tokens.dispersion_objective(dmat, [1]) == 0.0


def test_objective_matches_pair_enumeration():
    plan = tokens.generate_mask(GridShape(6, 6), 0.5, 13)
    out = tokens.throw_random(plan, 0.25, 14)
    dmat = tokens.distance_matrix(out)
    s = tokens.selection_vector(out)
    expected = 0.0
    for i in range(dmat.n):
        for j in range(dmat.n):
            if s[i] == 1 and s[j] == 1:
                expected += dmat.dist[i, j]
    assert abs(tokens.dispersion_objective(dmat, s) - expected) <= 1e-9


def test_objective_infeasible_selection():
    plan = tokens.generate_mask(GridShape(4, 4), 0.5, 15)
    dmat = tokens.distance_matrix(plan)
    with pytest.raises(ConstraintError):
        tokens.dispersion_objective(dmat, np.ones(dmat.n, dtype=int), retain_count=2)
    with pytest.raises(ConstraintError):
        tokens.dispersion_objective(dmat, np.full(dmat.n, 2))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_selection_feasibility(seed):
    grid = GridShape(6, 6)
    plan = tokens.generate_mask(grid, 0.75, seed)
    for thrower in (tokens.throw_random, tokens.throw_furthest):
        out = thrower(plan, 0.4, seed ^ 0x5A5A)
        s = tokens.selection_vector(out)
        n_t = tokens.round_half_up(grid.n_tokens * 0.4)
        assert int(s.sum()) == out.n_masked - n_t


# ----------------------------------------------------- brute force oracles


def test_brute_force_collinear():
    labels = np.full(4, MASKED_RETAINED, dtype=np.int64)
    plan = _plan_from_labels(labels, 1, 4)
    dmat = tokens.distance_matrix(plan)
    s, obj = tokens.brute_force_select(dmat, 2)
    np.testing.assert_array_equal(s, [1, 0, 0, 1])
    assert obj == 6.0


def test_brute_force_retain_all():
    plan = tokens.generate_mask(GridShape(3, 3), 0.6, 16)
    dmat = tokens.distance_matrix(plan)
    s, obj = tokens.brute_force_select(dmat, dmat.n)
    np.testing.assert_array_equal(s, 1)
    assert abs(obj - dmat.dist.sum()) <= 1e-12


def test_brute_force_dominates_greedy():
    grid = GridShape(5, 5)
    plan = tokens.generate_mask(grid, 10 / 25, 17)
    retain = 4
    rho_d = (10 - retain) / 25
    dmat = tokens.distance_matrix(plan)
    greedy_obj = tokens.dispersion_objective(
        dmat, tokens.selection_vector(tokens.throw_furthest(plan, rho_d, 18))
    )
    _, best_obj = tokens.brute_force_select(dmat, retain)
    assert best_obj >= greedy_obj - 1e-12


def test_brute_force_guard():
    labels = np.full(60, MASKED_RETAINED, dtype=np.int64)
    plan = _plan_from_labels(labels, 6, 10)
    dmat = tokens.distance_matrix(plan)
    with pytest.raises(SizeError):
        tokens.brute_force_select(dmat, 30)


def test_brute_force_maxmin_optimal():
    plan = tokens.generate_mask(GridShape(4, 4), 9 / 16, 19)
    dmat = tokens.distance_matrix(plan)
    s, best = tokens.brute_force_maxmin(dmat, 3)
    assert abs(tokens.min_pairwise_distance(dmat, s) - best) <= 1e-12
    greedy = tokens.throw_furthest(plan, (9 - 3) / 16, 20)
    assert tokens.min_pairwise_distance(dmat, tokens.selection_vector(greedy)) <= best + 1e-12


def test_min_pairwise_distance_degenerate():
    plan = tokens.generate_mask(GridShape(3, 3), 4 / 9, 21)
    dmat = tokens.distance_matrix(plan)
    assert tokens.min_pairwise_distance(dmat, [1, 0, 0, 0]) == math.inf


# -------------------------------------------------------- isolation rate


def test_isolation_no_thrown():
    plan = tokens.generate_mask(GridShape(4, 4), 0.5, 22)
    assert tokens.isolation_rate(plan) == 0.0


def test_isolation_all_thrown_center():
    labels = np.full(9, MASKED_THROWN, dtype=np.int64)
    plan = _plan_from_labels(labels, 3, 3)
    assert tokens.isolation_rate(plan, 3) == 1.0


def test_isolation_half():
    # 1x5 strip [T T T U T]: tokens 0 and 1 see only thrown neighbors
    # (isolated); tokens 2 and 4 have the unmasked neighbor in-window.
    labels = np.array([MASKED_THROWN, MASKED_THROWN, MASKED_THROWN,
                       UNMASKED, MASKED_THROWN], dtype=np.int64)
    plan = _plan_from_labels(labels, 1, 5)
    assert tokens.isolation_rate(plan, 3) == 0.5


def test_isolation_window_validation():
    plan = tokens.generate_mask(GridShape(4, 4), 0.5, 23)
    with pytest.raises(ValueError):
        tokens.isolation_rate(plan, 2)


def test_isolation_border_clipping():
    # Corner thrown token: the clipped 3x3 window holds an unmasked token,
    # so it is not isolated.
    labels = np.full(4, MASKED_THROWN, dtype=np.int64)
    labels[3] = UNMASKED
    plan = _plan_from_labels(labels, 2, 2)
    assert tokens.isolation_rate(plan, 3) == 0.0
