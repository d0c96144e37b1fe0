import math

import numpy as np
import pytest

from smj.disability import ACTIVE, DEAD, DISABLED, DisabilityRates, default_rates, disability_family
from smj.expressions import ExpressionError, compile_expression
from smj.intensity import (
    IntensityFamily,
    augment,
    constant_family,
    expression_family,
    lipschitz_audit,
    shift,
    validate,
)


def _grid(s_vals, v_vals):
    return [(s, v) for s in s_vals for v in v_vals]


def test_constant_family_is_valid(absorbing2):
    rep = validate(absorbing2, _grid(np.linspace(0, 10, 11), np.linspace(0, 10, 11)))
    assert rep.valid
    assert rep.max_rate == 1.0 <= absorbing2.gamma0


def test_negative_offdiagonal_is_reported():
    fam = IntensityFamily(2, lambda s, v: np.where((s == 1.0)[..., None, None], np.array([[0.5, -0.5], [0, 0]]),
                                                   np.array([[-1.0, 1.0], [0, 0]])), 1.0)
    rep = validate(fam, [(0.0, 0.0), (1.0, 0.0)])
    assert not rep.valid
    kinds = {(v.kind, v.s, v.row, v.col) for v in rep.violations}
    assert ("sign", 1.0, 0, 1) in kinds


def test_row_sum_and_bound_violations():
    fam = constant_family([[-1.0, 2.0], [0.0, 0.0]], gamma0=2.0)
    rep = validate(fam, [(0.0, 0.0)])
    assert [v.kind for v in rep.violations] == ["row_sum"]
    fam = constant_family([[-3.0, 3.0], [0.0, 0.0]], gamma0=2.0)
    assert [v.kind for v in validate(fam, [(0.0, 0.0)]).violations] == ["bound"]


def test_disability_valid_on_working_ages(disability):
    rep = validate(disability, _grid(np.arange(25, 68), np.linspace(0, 5, 26)))
    assert rep.valid, str(rep)


def test_disability_absorbing_row(disability):
    s = np.linspace(0, 110, 37)
    v = np.linspace(0, 12, 37)
    lam = disability(s, v)
    assert np.all(lam[:, DEAD, :] == 0.0)


def test_disability_frozen_below_25(disability):
    v = np.linspace(0, 8, 9)
    np.testing.assert_array_equal(disability(20.0, v)[:, ACTIVE, DISABLED], disability(25.0, v)[:, ACTIVE, DISABLED])
    np.testing.assert_array_equal(disability(80.0, v)[:, ACTIVE, DISABLED], disability(67.0, v)[:, ACTIVE, DISABLED])


def test_recovery_formula_shipped_parameters(disability):
    r = default_rates()
    phi3 = r.phi[3]
    beta1 = r.beta[0]
    theta3 = r.theta[2]
    expected = math.exp(phi3 + beta1 * 40 + theta3 * 0.1)
    assert disability(40.0, 0.1)[DISABLED, ACTIVE] == pytest.approx(expected, rel=1e-14)


def test_disability_rates_continuous_and_lipschitz(disability):
    r = default_rates()
    assert r.is_continuous()
    ratio, K = lipschitz_audit(disability, ((20.0, 90.0), (0.0, 8.0)), n_pairs=4000, seed=1)
    assert K is not None and ratio <= K


def test_disability_gamma0_dominates(disability):
    pts = _grid(np.linspace(0, 120, 241), np.linspace(0, 10, 101))
    rep = validate(disability, pts)
    assert rep.valid
    assert rep.max_rate <= disability.gamma0


def test_discontinuous_parameters_have_no_lipschitz_constant():
    d = default_rates().to_dict()
    d["phi"] = [d["phi"][0] + 0.3] + list(d["phi"][1:])
    r = DisabilityRates.from_dict(d)
    assert not r.is_continuous()
    assert r.lipschitz_constant() is None
    assert disability_family(r).lipschitz_K is None


def test_unknown_disability_parameter():
    with pytest.raises(ValueError, match="unknown"):
        DisabilityRates.from_dict({**default_rates().to_dict(), "kappa": 1.0})


def test_augment_identity_blocks(disability):
    aug = augment(disability, 0.0, 0.0)
    s, v = 47.0, 0.8
    base = disability(s, v)
    got = aug(s, v)
    np.testing.assert_array_equal(got[:3, :3], np.diag(np.diag(base)))
    off = base - np.diag(np.diag(base))
    np.testing.assert_array_equal(got[:3, 3:], off)
    np.testing.assert_array_equal(got[3:, :3], 0.0)
    np.testing.assert_array_equal(got[3:, 3:], base)


def test_augment_shifts_time_and_duration(disability):
    aug = augment(disability, 40.0, 1.0)
    got = aug(2.0, 0.5)
    up = disability(42.0, 1.5)
    low = disability(42.0, 0.5)
    np.testing.assert_array_equal(np.diag(got[:3, :3]), np.diag(up))
    np.testing.assert_array_equal(got[:3, 3:], up - np.diag(np.diag(up)))
    np.testing.assert_array_equal(got[3:, 3:], low)


def test_augment_is_conservative():
    fam = constant_family([[-2.0, 1.5, 0.5], [0.3, -0.3, 0.0], [0.0, 0.0, 0.0]])
    aug = augment(fam, 1.0, 2.0)
    lam = aug(np.linspace(0, 3, 7), np.linspace(0, 3, 7))
    assert np.abs(lam.sum(axis=-1)).max() <= 1e-15


def test_augment_rejects_negative_offsets(absorbing2):
    with pytest.raises(ValueError):
        augment(absorbing2, -1.0, 0.0)


def test_shift(disability):
    sh = shift(disability, 40.0)
    np.testing.assert_array_equal(sh(3.0, 1.2), disability(43.0, 1.2))
    assert shift(disability, 0.0) is disability


def test_expression_family():
    fam = expression_family([[None, "0.5 + 0.1 * s", "0.2"], ["min(v, 1)", None, 0.1], [0, 0, 0]], gamma0=1.2,
                            lipschitz_K=2.2)
    lam = fam(2.0, 0.4)
    np.testing.assert_allclose(lam[0], [-0.9, 0.7, 0.2])
    np.testing.assert_allclose(lam[1], [0.4, -0.5, 0.1])
    assert not fam.duration_independent
    assert validate(fam, _grid([0.0, 2.0, 5.0], [0.0, 3.0])).valid


def test_expression_language():
    e = compile_expression("(j == 2) * (s >= 1) * (s <= 4) * exp(-s / 5) / 100", allowed={"j", "s"})
    s = np.array([0.5, 1.0, 2.0, 4.0, 4.5])
    np.testing.assert_allclose(e(j=2, s=s), np.where((s >= 1) & (s <= 4), np.exp(-s / 5) / 100, 0.0))
    assert np.all(e(j=1, s=s) == 0)
    assert e.names == {"j", "s"}
    f = compile_expression("where(v > 1 and not s < 0, clip(v, 0, 2), -1)", allowed={"s", "v"})
    np.testing.assert_array_equal(f(s=0.0, v=np.array([0.5, 1.5, 3.0])), [-1.0, 1.5, 2.0])


@pytest.mark.parametrize("bad", ["__import__('os')", "s.real", "[s]", "lambda: 1", "foo(s)", "t + 1", "", "s +"])
def test_expression_rejects(bad):
    with pytest.raises(ExpressionError):
        compile_expression(bad, allowed={"s", "v"})


def test_family_eval_is_deterministic(disability):
    s = np.linspace(20, 90, 50)
    v = np.linspace(0, 7, 50)
    np.testing.assert_array_equal(disability(s, v), disability(s, v))
