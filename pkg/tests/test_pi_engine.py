import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smj.grid import deterministic_grid, grid_deviation, sample_grid
from smj.intensity import constant_family, expression_family
from smj.pi_engine import (
    UniformizationRateError,
    build_pi_table,
    build_step_matrices,
    c_sequence,
    dump_pi_csv,
    iter_pi_levels,
    tv_accumulation_bound,
    tv_distance,
)


def brute_force_pi(steps, k, i):
    """Distribution of (state, duration counter) after k steps, by enumerating state sequences."""
    J = steps.J
    out = np.zeros((k + 1, J))
    for path in itertools.product(range(J), repeat=k):
        p, state, w = 1.0, i, 0
        for l, nxt in enumerate(path):
            p *= steps.Q(l, w)[state, nxt]
            if p == 0.0:
                break
            w = w + 1 if nxt == state else 0
            state = nxt
        if p:
            out[w, state] += p
    return out


@pytest.fixture(scope="module")
def dd_family():
    return expression_family(
        [[None, "0.4 + 0.2 * s", "0.1 * v"], ["0.3 * exp(-v)", None, "0.2 + 0.05 * s"], [0.0, 0.0, None]],
        gamma0=2.0, lipschitz_K=2.0,
    )


@pytest.mark.parametrize("mode", ["unconditional", "conditional"])
def test_recursion_matches_path_enumeration(dd_family, mode):
    grid = sample_grid(4.0, 2.0, seed=7) if mode == "conditional" else None
    steps = build_step_matrices(dd_family, 4.0, mode, grid)
    table = build_pi_table(steps, 6)
    for k in range(7):
        for i in range(3):
            ref = brute_force_pi(steps, k, i)
            np.testing.assert_allclose(table.pi[k, : k + 1, i, :], ref, rtol=1e-13, atol=1e-15)
            assert not table.pi[k, k + 1 :].any()


def test_table_invariants(disability40):
    steps = build_step_matrices(disability40, 30.0, "conditional", sample_grid(30.0, 5.0, seed=2))
    table = build_pi_table(steps, 200)
    table.check(1e-12)
    assert table.L_max == 200 and table.J == 3


def test_gamma_one_absorbs_in_one_step():
    fam = constant_family([[-1.0, 1.0], [0.0, 0.0]])
    t = build_pi_table(build_step_matrices(fam, 1.0), 1)
    np.testing.assert_array_equal(t.pi[1, 0], [[0.0, 1.0], [0.0, 0.0]])
    np.testing.assert_array_equal(t.pi[1, 1], [[0.0, 0.0], [0.0, 1.0]])


def test_zero_levels(absorbing2):
    t = build_pi_table(build_step_matrices(absorbing2, 2.0), 0)
    assert t.pi.shape == (1, 1, 2, 2)
    np.testing.assert_array_equal(t.pi[0, 0], np.eye(2))


def test_unconditional_step_argument(disability40):
    steps = build_step_matrices(disability40, 30.0)
    s, v = steps.arguments(59, 14)
    assert (s, v) == (2.0, 0.5)
    expected = np.eye(3) + disability40(2.0, 0.5) / 30.0
    np.testing.assert_allclose(steps.Q(59, 14), expected, rtol=0, atol=1e-16)
    np.testing.assert_allclose(steps.table(60)[59, 14], expected, rtol=0, atol=1e-16)


def test_conditional_step_argument(disability40):
    grid = sample_grid(30.0, 3.0, seed=4)
    steps = build_step_matrices(disability40, 30.0, "conditional", grid)
    s, v = steps.arguments(59, 14)
    chi = grid.arrivals
    assert s == chi[60] and v == chi[60] - chi[45]
    np.testing.assert_allclose(steps.Q(59, 14), np.eye(3) + disability40(s, v) / 30.0, atol=1e-16)


def test_gamma_at_bound_allowed():
    fam = constant_family([[-2.0, 2.0], [0.5, -0.5]])
    steps = build_step_matrices(fam, 2.0)
    assert steps.Q(0, 0)[0, 0] == 0.0
    build_pi_table(steps, 10).check()


def test_gamma_below_bound_rejected(disability):
    with pytest.raises(UniformizationRateError, match="uniformization rate too small"):
        build_step_matrices(disability, 0.5 * disability.gamma0)


def test_understated_gamma0_detected():
    fam = constant_family([[-3.0, 3.0], [0.0, 0.0]], gamma0=1.0)
    steps = build_step_matrices(fam, 2.0)
    with pytest.raises(UniformizationRateError, match="uniformization rate too small"):
        steps.table(3)


def test_conditional_needs_grid(absorbing2):
    with pytest.raises(ValueError):
        build_step_matrices(absorbing2, 2.0, "conditional")
    with pytest.raises(ValueError):
        build_step_matrices(absorbing2, 2.0, "sideways")


def test_constant_family_modes_identical():
    fam = constant_family([[-1.0, 0.7, 0.3], [0.2, -0.5, 0.3], [0.0, 0.0, 0.0]])
    u = build_pi_table(build_step_matrices(fam, 10.0), 60)
    c = build_pi_table(build_step_matrices(fam, 10.0, "conditional", sample_grid(10.0, 5.0, seed=9)), 60)
    np.testing.assert_array_equal(u.pi, c.pi)


def test_duration_marginal_is_markov_power():
    # for a constant family sum_w Pi(k, w) = Q^k
    lam = np.array([[-1.0, 0.7, 0.3], [0.2, -0.5, 0.3], [0.0, 0.0, 0.0]])
    t = build_pi_table(build_step_matrices(constant_family(lam), 4.0), 25)
    Q = np.eye(3) + lam / 4.0
    for k in [0, 1, 5, 25]:
        np.testing.assert_allclose(t.pi[k].sum(axis=0), np.linalg.matrix_power(Q, k), atol=1e-14)


def test_deterministic_grid_matches_unconditional(dd_family):
    g = deterministic_grid(5.0, 40)
    # chi[l+1] = (l+1)/gamma and chi[l+1] - chi[l-w] = (w+1)/gamma
    c = build_pi_table(build_step_matrices(dd_family, 5.0, "conditional", g), 30)
    u = build_pi_table(build_step_matrices(dd_family, 5.0), 30)
    np.testing.assert_allclose(c.pi, u.pi, atol=1e-14)


def test_streaming_levels_match_table(dd_family):
    steps = build_step_matrices(dd_family, 3.0)
    table = build_pi_table(steps, 20)
    for k, level in iter_pi_levels(steps, 20):
        np.testing.assert_allclose(level, table.pi[k, : k + 1], atol=1e-15)


def test_grid_too_short_for_levels(disability40):
    grid = sample_grid(10.0, 1.0, seed=0)
    steps = build_step_matrices(disability40, 10.0, "conditional", grid)
    with pytest.raises(IndexError):
        build_pi_table(steps, grid.L + 1)


def test_tv_distance_subsets(dd_family):
    a = build_pi_table(build_step_matrices(dd_family, 3.0), 10)
    b = build_pi_table(build_step_matrices(dd_family, 3.0, "conditional", sample_grid(3.0, 10.0, seed=1)), 10)
    full = tv_distance(a, b, 8)
    parts = tv_distance(a, b, 8, [0, 1, 2, 3]) + tv_distance(a, b, 8, range(4, 9))
    np.testing.assert_allclose(full, parts, rtol=1e-14)
    np.testing.assert_array_equal(tv_distance(a, b, 8, [20, 30]), 0.0)
    np.testing.assert_array_equal(tv_distance(a, a, 8), 0.0)


def test_c_sequence_definition():
    rng = np.random.default_rng(0)
    n = 6
    qa = rng.random((n, n, 2, 2))
    qb = rng.random((n, n, 2, 2))
    C = c_sequence(qa, qb)
    assert C[0] == 0.0 and len(C) == n + 1
    for k in range(1, n + 1):
        ref = max(np.abs(qa[l, w] - qb[l, w]).sum(axis=1).max() for l in range(k) for w in range(l + 1))
        assert C[k] == pytest.approx(ref)


@pytest.mark.parametrize("seed", range(4))
def test_accumulation_bound_disability(disability40, seed):
    gamma = 30.0
    grid = sample_grid(gamma, 5.0, seed=seed)
    c = build_pi_table(build_step_matrices(disability40, gamma, "conditional", grid), 150)
    u = build_pi_table(build_step_matrices(disability40, gamma), 150)
    C = c_sequence(c.steps.table(151), u.steps.table(151))
    rng = np.random.default_rng(seed)
    for k in [1, 2, 10, 37, 100, 150]:
        for subset in [None, np.nonzero(rng.random(k + 1) < 0.5)[0]]:
            lhs, rhs = tv_accumulation_bound(c, u, k, subset, C)
            assert lhs.max() <= rhs + 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_step_matrix_distance_bound(disability40, seed):
    gamma, eps = 100.0, 0.1
    k_eps = int(math.floor(gamma ** (1 + eps)))
    grid = sample_grid(gamma, 2.0, seed=seed)
    cond = build_step_matrices(disability40, gamma, "conditional", grid)
    unc = build_step_matrices(disability40, gamma)
    C = c_sequence(cond.table(k_eps + 1), unc.table(k_eps + 1))
    assert C[k_eps] <= 3 * disability40.lipschitz_K * grid_deviation(grid, eps) / gamma + 1e-12


def test_dump_csv(tmp_path, absorbing2):
    t = build_pi_table(build_step_matrices(absorbing2, 2.0), 3)
    p = tmp_path / "pi.csv"
    dump_pi_csv(t, p, seed=None)
    lines = p.read_text().splitlines()
    assert lines[0] == "k,w,i,j,value,mode,gamma,seed"
    assert len(lines) == 1 + 10 * 4
    assert lines[1] == "0,0,1,1,1.0,unconditional,2.0,"


@settings(max_examples=25, deadline=None)
@given(
    rates=st.lists(st.floats(0.0, 1.0), min_size=6, max_size=6),
    gamma=st.floats(2.0, 12.0),
    L=st.integers(0, 40),
)
def test_rows_stochastic_property(rates, gamma, L):
    a, b, c, d, e, f = rates
    fam = expression_family([[None, f"{a} * exp(-v)", f"{b} * s / (1 + s)"],
                             [f"{c} + 0 * v", None, f"{d} * min(v, 1)"],
                             [f"{e} * (s < 1)", f"{f}", None]], gamma0=2.0)
    t = build_pi_table(build_step_matrices(fam, gamma), L)
    t.check(1e-12)
