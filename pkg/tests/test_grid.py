import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from smj.grid import (
    PoissonGrid,
    deterministic_grid,
    erlang_pdf,
    grid_deviation,
    grid_deviation_bound,
    poisson_pmf,
    poisson_tail,
    poisson_tail_index,
    sample_grid,
)


def test_pmf_empty_product():
    assert poisson_pmf(0.0, 0) == 1.0


def test_pmf_at_zero_count():
    # exp(-2)
    assert poisson_pmf(2.0, 0) == pytest.approx(math.exp(-2.0), rel=1e-14)
    assert poisson_pmf(2.0, 0) == pytest.approx(0.1353353, abs=1e-7)


def test_pmf_matches_factorial_formula():
    for lam, k in [(0.3, 4), (7.5, 3), (40.0, 40), (120.0, 95)]:
        direct = math.exp(-lam) * lam ** k / math.factorial(k)
        assert poisson_pmf(lam, k) == pytest.approx(direct, rel=1e-12)


def test_pmf_rejects_bad_arguments():
    with pytest.raises(ValueError):
        poisson_pmf(-1.0, 0)
    with pytest.raises(ValueError):
        poisson_pmf(1.0, -1)
    with pytest.raises(ValueError):
        poisson_pmf(1.0, 1.5)


@pytest.mark.parametrize("lam", [0.01, 1.0, 30.0, 150.0, 1500.0])
def test_truncated_pmf_sum(lam):
    tail = 1e-10
    K = poisson_tail_index(lam, tail)
    total = poisson_pmf(lam, np.arange(K + 1)).sum()
    assert total >= 1 - tail - 1e-13
    assert poisson_tail(lam, K) < tail
    assert K == 1 or poisson_tail(lam, K - 1) >= tail


def test_erlang_at_origin_is_rate():
    for g in [0.5, 3.0, 100.0]:
        assert erlang_pdf(1, g, 0.0) == pytest.approx(g, rel=1e-15)


def test_erlang_value():
    # x exp(-x) at x = 1
    assert erlang_pdf(2, 1.0, 1.0) == pytest.approx(math.exp(-1.0), rel=1e-14)
    assert erlang_pdf(2, 1.0, 1.0) == pytest.approx(0.3678794, abs=1e-7)


def test_erlang_rejects_zero_shape():
    with pytest.raises(ValueError):
        erlang_pdf(0, 1.0, 1.0)
    with pytest.raises(ValueError):
        erlang_pdf(1, 0.0, 1.0)


@pytest.mark.parametrize("k", [1, 2, 7, 20, 50])
def test_erlang_integrates_to_one(k):
    g = 3.0
    val, err = integrate.quad(lambda x: erlang_pdf(k, g, x), 0, np.inf, epsabs=1e-12, epsrel=1e-12, limit=200)
    assert abs(val - 1.0) <= 1e-8


def test_convolution_identity_reference_case():
    l, w, g, s = 5, 2, 3.0, 1.7
    val, _ = integrate.quad(lambda v: erlang_pdf(l - w, g, s - v) * poisson_pmf(g * v, w), 0, s,
                            epsabs=1e-13, epsrel=1e-13)
    assert abs(val - poisson_pmf(g * s, l)) <= 1e-8


def test_sample_grid_covers_horizon():
    g = sample_grid(1.0, 1.0, tail_prob=1e-12, seed=5)
    assert g.L >= 1 and g.arrivals[-1] > 1.0
    assert g.arrivals[0] == 0.0
    assert np.all(np.diff(g.arrivals) > 0)
    np.testing.assert_array_equal(g.arrivals, np.concatenate([[0.0], np.cumsum(g.increments)]))


def test_sample_grid_is_reproducible():
    a = sample_grid(30.0, 5.0, seed=11)
    b = sample_grid(30.0, 5.0, seed=11)
    np.testing.assert_array_equal(a.arrivals, b.arrivals)
    c = sample_grid(30.0, 5.0, seed=12)
    assert not np.array_equal(a.arrivals[:10], c.arrivals[:10])


def test_longer_grid_extends_shorter_one():
    a = sample_grid(10.0, 2.0, seed=3)
    b = sample_grid(10.0, 40.0, seed=3)
    np.testing.assert_array_equal(b.arrivals[: len(a)], a.arrivals)


def test_sample_grid_length_covers_tail_index():
    g = sample_grid(30.0, 5.0, tail_prob=1e-10, seed=0)
    assert g.L >= poisson_tail_index(150.0, 1e-10) + 1


def test_arrival_count_concentrates():
    # Poisson(500) concentration: |count/500 - 1| <= 0.1 is a 4.5 sd event
    ratios = np.array([sample_grid(100.0, 5.0, seed=s).count_before(5.0) / 500.0 for s in range(1000)])
    assert np.mean((ratios >= 0.9) & (ratios <= 1.1)) >= 0.95


def test_deviation_zero_on_deterministic_grid():
    assert grid_deviation(deterministic_grid(7.0, 100), 0.1) == 0.0


def test_deviation_single_arrival():
    g = PoissonGrid(1.0, np.array([0.0, 1.37]), np.array([1.37]))
    assert grid_deviation(g, 0.1) == pytest.approx(0.37)


def test_deviation_bound_holds_for_most_seeds():
    eps = 0.1
    bound = grid_deviation_bound(100.0, eps)
    assert bound == pytest.approx(2 * math.exp(0.5 + eps / 2 + 4) * math.log(100) * 100 ** (-0.45))
    devs = np.array([grid_deviation(sample_grid(100.0, 2.0, seed=s), eps) for s in range(500)])
    assert np.mean(devs <= bound) >= 0.95


@settings(max_examples=60, deadline=None)
@given(lam=st.floats(0.0, 400.0), k=st.integers(0, 600))
def test_pmf_in_unit_interval(lam, k):
    p = poisson_pmf(lam, k)
    assert 0.0 <= p <= 1.0


@settings(max_examples=40, deadline=None)
@given(l=st.integers(1, 25), w=st.integers(0, 24), g=st.floats(0.5, 20.0), s=st.floats(0.05, 3.0))
def test_convolution_identity_property(l, w, g, s):
    if w >= l:
        w = l - 1
    val, _ = integrate.quad(lambda v: erlang_pdf(l - w, g, s - v) * poisson_pmf(g * v, w), 0, s,
                            epsabs=1e-13, epsrel=1e-12, limit=200)
    assert abs(val - poisson_pmf(g * s, l)) <= 1e-8
