import math

import numpy as np
import pytest

from smj.intensity import constant_family
from smj.kernel import UniformizationKernel
from smj.monte_carlo import mc_reserve
from smj.valuation import (
    DiscountCurve,
    DiscretePayment,
    PaymentSpec,
    actuarial_premium_solve,
    augment_payments,
    cashflow,
    reserve,
    reserve_at,
)

DI_RATE = "(j == 2) * (s >= 1) * (s <= 4) * exp(-s / 5) / 100"
DD_RATE = "(j == 2) * (v >= 0.1) * (s >= 1) * (s <= 4) * exp(-(s - v) / 5) / 100"
LUMP = "(j == 1) * (k > 1) + (j == 2) * (k == 3)"


@pytest.fixture(scope="module")
def k2():
    return UniformizationKernel(constant_family([[-1.0, 1.0], [0.0, 0.0]]), 100.0, 2.0)


@pytest.fixture(scope="module")
def kdis(disability40):
    return UniformizationKernel(disability40, 30.0, 5.0)


def test_zero_payments(kdis):
    pay = PaymentSpec.zero(3, 5.0)
    cf = cashflow(kdis, pay, np.linspace(0, 5, 11))
    assert not cf.values.any() and not cf.point_mass.any()
    assert not reserve(kdis, pay, DiscountCurve.constant(0.03), n_s=10).any()


def test_single_state_unit_rate():
    k = UniformizationKernel(constant_family([[0.0]], gamma0=1.0), 5.0, 2.0)
    pay = PaymentSpec.from_expressions(1, 2.0, rate="1")
    assert reserve(k, pay, i=0, n_s=20) == pytest.approx(2.0, abs=1e-9)
    r = 0.05
    assert reserve(k, pay, DiscountCurve.constant(r), i=0, n_s=40) == pytest.approx((1 - math.exp(-2 * r)) / r,
                                                                                  rel=1e-9)


def test_rate_in_every_state_pays_horizon(kdis):
    pay = PaymentSpec.from_expressions(3, 5.0, rate="1")
    np.testing.assert_allclose(reserve(kdis, pay, n_s=20), 5.0, atol=1e-8)


def test_lump_on_absorption(k2):
    T = 2.0
    pay = PaymentSpec.from_expressions(2, T, lump="(j == 1) * (k == 2)")
    assert reserve(k2, pay, i=0) == pytest.approx(1 - math.exp(-T), abs=1e-8)
    r = 0.04
    assert reserve(k2, pay, DiscountCurve.constant(r), i=0) == pytest.approx(
        (1 - math.exp(-(1 + r) * T)) / (1 + r), abs=1e-8)


def test_cashflow_curve_of_lump(k2):
    pay = PaymentSpec.from_expressions(2, 2.0, lump="(j == 1) * (k == 2)")
    s = np.linspace(0, 2, 9)
    cf = cashflow(k2, pay, s)
    np.testing.assert_allclose(cf.of(0), np.exp(-s), atol=1e-9)
    np.testing.assert_array_equal(cf.of(1), 0.0)


def test_discrete_payment(k2):
    # pure endowment: 1 at T if still in state 1
    pay = PaymentSpec(2, 2.0, discrete=[DiscretePayment(2.0, 0, 1.0)])
    assert reserve(k2, pay, i=0) == pytest.approx(math.exp(-2.0), abs=1e-9)
    # in state 2 at time 2 with duration >= 0.5: absorbed before 1.5
    pay = PaymentSpec(2, 2.0, discrete=[DiscretePayment(2.0, 1, 1.0, v_min=0.5)])
    assert reserve(k2, pay, i=0, n_v=1000) == pytest.approx(1 - math.exp(-1.5), abs=2e-7)


def test_duration_dependent_rate_matches_independent_when_v_unused(kdis):
    a = PaymentSpec.from_expressions(3, 5.0, rate=DI_RATE)
    b = PaymentSpec.from_expressions(3, 5.0, rate=DI_RATE + " + 0 * v")
    assert a.rate_duration_independent and not b.rate_duration_independent
    s = np.linspace(0, 5, 11)
    np.testing.assert_allclose(cashflow(kdis, a, s, n_v=400).values, cashflow(kdis, b, s, n_v=400).values,
                               rtol=1e-3, atol=1e-9)


def test_audit_catches_false_declaration():
    with pytest.raises(ValueError, match="duration independent"):
        PaymentSpec(2, 1.0, rate=lambda s, v: np.stack([v, v], axis=-1), duration_independent=True)


def test_nonfinite_payment_rejected():
    with pytest.raises(ValueError, match="not finite"):
        PaymentSpec.from_expressions(2, 1.0, rate="1 / (s - 0.5)")


def test_linearity(kdis):
    a = PaymentSpec.from_expressions(3, 5.0, rate=DD_RATE)
    b = PaymentSpec.from_expressions(3, 5.0, lump=LUMP)
    d = DiscountCurve.constant(0.02)
    va = reserve(kdis, a, d, n_s=40, n_v=60)
    vb = reserve(kdis, b, d, n_s=40, n_v=60)
    np.testing.assert_allclose(reserve(kdis, a + b, d, n_s=40, n_v=60), va + vb, rtol=1e-12)
    np.testing.assert_allclose(reserve(kdis, a.scaled(-2.5), d, n_s=40, n_v=60), -2.5 * va, rtol=1e-12)


def test_discount_monotone(kdis):
    pay = PaymentSpec.from_expressions(3, 5.0, rate=DI_RATE, lump=LUMP)
    vals = [reserve(kdis, pay, DiscountCurve.constant(r), n_s=40) for r in [0.0, 0.01, 0.05, 0.2]]
    for lo, hi in zip(vals[1:], vals[:-1]):
        assert np.all(lo[:2] < hi[:2])
        assert lo[2] == hi[2] == 0.0  # nothing is paid from the dead state


def test_discount_curve():
    d = DiscountCurve((0.0, 1.0, 3.0), (0.01, 0.03, 0.02))
    assert d.integral(0.5) == pytest.approx(0.005)
    assert d.integral(2.0) == pytest.approx(0.01 + 0.03)
    assert d.integral(5.0) == pytest.approx(0.01 + 0.06 + 0.04)
    sh = d.shifted(2.0)
    for s in [0.3, 1.0, 2.5]:
        assert sh.integral(s) == pytest.approx(d.integral(2.0 + s) - d.integral(2.0))
    with pytest.raises(ValueError):
        DiscountCurve((0.5,), (0.01,))


def test_reserve_at_origin_matches_base(disability40, kdis):
    pay = PaymentSpec.from_expressions(3, 5.0, rate=DD_RATE, lump=LUMP)
    d = DiscountCurve.constant(0.02)
    base = reserve(kdis, pay, d, n_s=40, n_v=80)
    for i in range(3):
        v = reserve_at(disability40, pay, d, 0.0, i, 0.0, 30.0, n_s=40, n_v=80)
        assert v == pytest.approx(base[i], rel=1e-9, abs=1e-12)


def test_reserve_at_rejects_outside(disability40):
    pay = PaymentSpec.from_expressions(3, 5.0, rate=DD_RATE)
    with pytest.raises(ValueError):
        reserve_at(disability40, pay, None, 5.0, 1, 0.0, 30.0)
    with pytest.raises(ValueError):
        reserve_at(disability40, pay, None, 1.0, 1, -0.1, 30.0)


def test_reserve_continuous_in_duration(disability40):
    pay = PaymentSpec.from_expressions(3, 5.0, rate=DD_RATE, lump=LUMP)
    vals = [reserve_at(disability40, pay, None, 1.0, 1, u, 30.0, n_s=40, n_v=60) for u in [0.0, 1e-3, 1.0]]
    assert vals[1] == pytest.approx(vals[0], abs=1e-3)
    assert vals[2] != pytest.approx(vals[0], rel=1e-6)


def test_reserve_at_matches_monte_carlo(disability40):
    pay = PaymentSpec.from_expressions(3, 5.0, rate=DD_RATE, lump=LUMP)
    d = DiscountCurve.constant(0.02)
    v = reserve_at(disability40, pay, d, 1.0, 1, 0.5, 100.0, n_s=80, n_v=100)
    mc = mc_reserve(disability40, pay, d, 1, 0.5, 40_000, seed=17, t0=1.0)
    assert abs(v - mc.mean) <= 4 * mc.se + 2e-3 * abs(v)


def test_augment_payments_blocks():
    pay = PaymentSpec.from_expressions(2, 3.0, rate="(j == 2) * v", lump="(j == 1) * (k == 2) * (1 + s)",
                                       discrete=[{"time": 2.5, "state": 2, "amount": 4.0, "v_min": 1.0}])
    aug = augment_payments(pay, 1.0, 0.5)
    np.testing.assert_allclose(aug.rates(0.2, 0.3), [0.0, 0.8, 0.0, 0.3])
    L = aug.lumps(0.2, 0.3)
    assert L[0, 3] == pytest.approx(2.2) and L[2, 3] == pytest.approx(2.2) and L[0, 1] == 0.0
    assert aug.horizon == 2.0
    assert [(d.time, d.state, d.v_min) for d in aug.discrete] == [(1.5, 1, 0.5), (1.5, 3, 1.0)]


def test_premium_zero_benefits(k2):
    def spec(c):
        return PaymentSpec.from_expressions(2, 2.0, rate=f"-{c} * (j == 1)")

    assert actuarial_premium_solve(k2, spec) == pytest.approx(0.0, abs=1e-12)


def test_premium_closed_form(k2):
    T = 2.0

    def single(c):
        return PaymentSpec.from_expressions(2, T, lump="(j == 1) * (k == 2)", b0=-c)

    assert actuarial_premium_solve(k2, single) == pytest.approx(1 - math.exp(-T), abs=1e-8)

    def level(c):
        return PaymentSpec.from_expressions(2, T, rate=f"-{c} * (j == 1)", lump="(j == 1) * (k == 2)")

    # benefit and premium streams share the density exp(-s) in state 1
    assert actuarial_premium_solve(k2, level, DiscountCurve.constant(0.03)) == pytest.approx(1.0, abs=1e-8)


def test_premium_rejects_nonaffine(k2):
    def spec(c):
        return PaymentSpec.from_expressions(2, 2.0, rate=f"-{c * c} * (j == 1)", lump="(j == 1) * (k == 2)")

    with pytest.raises(ValueError, match="affine"):
        actuarial_premium_solve(k2, spec)
