"""
Three-state disability model (1 active, 2 disabled, 3 dead) with
duration-dependent recovery and disabled mortality.

Rates are functions of age ``t`` and duration ``u``:

* ``l13(t)``: natural cubic spline through (age, log-rate) knots, flat outside
  the knot range;
* ``l12(t)``: exponential of a fifth-order polynomial, frozen below age 25 and
  above age 67;
* ``l21(t, u)``: piecewise exponential-linear with duration breakpoints
  0.23, 2 and 5;
* ``l23(t, u)``: exponential-linear for ``u <= 5``, duration-free beyond.

The parameter set shipped in ``data/disability_default.yaml`` is an
illustrative stand-in, not a calibration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from importlib import resources

import numpy as np
import yaml
from scipy.interpolate import CubicSpline

from .intensity import IntensityFamily, generator_from_offdiag

__all__ = ["DisabilityRates", "disability_family", "default_rates", "ACTIVE", "DISABLED", "DEAD"]

ACTIVE, DISABLED, DEAD = 0, 1, 2
_SAFETY = 1.01


@dataclass(frozen=True)
class DisabilityRates:
    mortality_ages: tuple
    mortality_log_rates: tuple
    # log l12_base(t) = sum_k c_k ((t - center) / scale)**k, k = 0..5
    disability_poly: tuple
    disability_poly_center: float = 0.0
    disability_poly_scale: float = 1.0
    disability_clamp: tuple = (25.0, 67.0)
    # recovery: phi = (phi0, phi1, phi2, phi3), beta = (beta1, beta2), theta = (theta1, theta2, theta3)
    phi: tuple = (0.0, 0.0, 0.0, 0.0)
    beta: tuple = (0.0, 0.0)
    theta: tuple = (0.0, 0.0, 0.0)
    recovery_breaks: tuple = (0.23, 2.0, 5.0)
    # disabled mortality: alpha = (alpha1, alpha2), eta = (eta1, eta2), zeta1
    alpha: tuple = (0.0, 0.0)
    eta: tuple = (0.0, 0.0)
    zeta1: float = 0.0
    mortality_break: float = 5.0
    # ages at which l21 and l23 are frozen; keeps every rate bounded
    age_window: tuple = (20.0, 90.0)
    note: str = field(default="", compare=False)

    def __post_init__(self):
        if len(self.disability_poly) != 6:
            raise ValueError("disability_poly needs 6 coefficients (fifth-order polynomial)")
        if len(self.mortality_ages) != len(self.mortality_log_rates) or len(self.mortality_ages) < 3:
            raise ValueError("mortality spline needs >= 3 matching (age, log-rate) knots")
        if np.any(np.diff(self.mortality_ages) <= 0):
            raise ValueError("mortality knot ages must be strictly increasing")
        if len(self.phi) != 4 or len(self.beta) != 2 or len(self.theta) != 3:
            raise ValueError("recovery needs phi0..phi3, beta1..beta2, theta1..theta3")
        b = self.recovery_breaks
        if len(b) != 3 or not (0 < b[0] < b[1] < b[2]):
            raise ValueError("recovery breakpoints must be increasing and positive")
        if self.disability_poly_scale == 0:
            raise ValueError("disability_poly_scale must be non-zero")
        lo, hi = self.age_window
        if not lo < hi:
            raise ValueError("age_window must be an increasing pair")

    @classmethod
    def from_dict(cls, d: dict) -> "DisabilityRates":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown disability parameters: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)

    def to_dict(self) -> dict:
        return {f.name: list(getattr(self, f.name)) if isinstance(getattr(self, f.name), tuple) else getattr(self, f.name)
                for f in fields(self)}

    # individual rates -----------------------------------------------------

    @property
    def _spline(self):
        return CubicSpline(np.asarray(self.mortality_ages, float), np.asarray(self.mortality_log_rates, float),
                           bc_type="natural")

    def l13(self, t, spline=None):
        spline = spline or self._spline
        a = np.clip(t, self.mortality_ages[0], self.mortality_ages[-1])
        return np.exp(spline(a))

    def _poly(self, t):
        lo, hi = self.disability_clamp
        x = (np.clip(t, lo, hi) - self.disability_poly_center) / self.disability_poly_scale
        return np.polynomial.polynomial.polyval(x, self.disability_poly)

    def l12(self, t):
        return np.exp(self._poly(t))

    def l21(self, t, u):
        t = np.clip(t, *self.age_window)
        phi0, phi1, phi2, phi3 = self.phi
        beta1, beta2 = self.beta
        theta1, theta2, theta3 = self.theta
        b1, b2, b3 = self.recovery_breaks
        expo = np.select(
            [u <= b1, u <= b2, u <= b3],
            [phi3 + beta1 * t + theta3 * u, phi2 + beta1 * t + theta2 * u, phi1 + beta1 * t + theta1 * u],
            phi0 + beta2 * t,
        )
        return np.exp(expo)

    def l23(self, t, u):
        t = np.clip(t, *self.age_window)
        a1, a2 = self.alpha
        e1, e2 = self.eta
        return np.exp(np.where(u <= self.mortality_break, a1 + e1 * t + self.zeta1 * u, a2 + e2 * t))

    # bounds ---------------------------------------------------------------

    def _exp_linear_sup(self, c, bt, bu, t_range, u_range, deriv=1.0):
        """sup of deriv * exp(c + bt*t + bu*u) over a box (attained at a corner)."""
        m = c + max(bt * t_range[0], bt * t_range[1]) + max(bu * u_range[0], bu * u_range[1])
        return abs(deriv) * math.exp(m)

    def _recovery_pieces(self):
        phi0, phi1, phi2, phi3 = self.phi
        beta1, beta2 = self.beta
        theta1, theta2, theta3 = self.theta
        b1, b2, b3 = self.recovery_breaks
        return [
            (phi3, beta1, theta3, (0.0, b1)),
            (phi2, beta1, theta2, (b1, b2)),
            (phi1, beta1, theta1, (b2, b3)),
            (phi0, beta2, 0.0, (b3, b3)),
        ]

    def _mortality_pieces(self):
        a1, a2 = self.alpha
        e1, e2 = self.eta
        b = self.mortality_break
        return [(a1, e1, self.zeta1, (0.0, b)), (a2, e2, 0.0, (b, b))]

    def _dense_ages(self):
        lo = min(self.mortality_ages[0], self.disability_clamp[0])
        hi = max(self.mortality_ages[-1], self.disability_clamp[1])
        return np.linspace(lo, hi, 200_001)

    def sup_rates(self) -> dict:
        """Upper bounds of each transition rate over all ``t, u >= 0``."""
        ages = self._dense_ages()
        w = self.age_window
        return {
            "l12": _SAFETY * float(np.max(self.l12(ages))),
            "l13": _SAFETY * float(np.max(self.l13(ages))),
            "l21": max(self._exp_linear_sup(c, bt, bu, w, ur) for c, bt, bu, ur in self._recovery_pieces()),
            "l23": max(self._exp_linear_sup(c, bt, bu, w, ur) for c, bt, bu, ur in self._mortality_pieces()),
        }

    def gamma0(self) -> float:
        r = self.sup_rates()
        return max(r["l12"] + r["l13"], r["l21"] + r["l23"])

    def is_continuous(self, tol: float = 1e-12) -> bool:
        """True when recovery and disabled mortality are continuous in (t, u)."""
        phi0, phi1, phi2, phi3 = self.phi
        beta1, beta2 = self.beta
        theta1, theta2, theta3 = self.theta
        b1, b2, b3 = self.recovery_breaks
        a1, a2 = self.alpha
        e1, e2 = self.eta
        checks = [
            phi3 + theta3 * b1 - (phi2 + theta2 * b1),
            phi2 + theta2 * b2 - (phi1 + theta1 * b2),
            phi1 + theta1 * b3 - phi0,
            beta1 - beta2,
            a1 + self.zeta1 * self.mortality_break - a2,
            e1 - e2,
        ]
        return all(abs(c) <= tol for c in checks)

    def lipschitz_constant(self) -> float | None:
        """K for the row total-variation norm, or None if a rate is discontinuous."""
        if not self.is_continuous():
            return None
        ages = self._dense_ages()
        spline = self._spline
        a = np.clip(ages, self.mortality_ages[0], self.mortality_ages[-1])
        d13 = _SAFETY * float(np.max(np.abs(spline(a, 1)) * self.l13(ages, spline)))
        lo, hi = self.disability_clamp
        x = (np.clip(ages, lo, hi) - self.disability_poly_center) / self.disability_poly_scale
        dpoly = np.polynomial.polynomial.polyval(x, np.polynomial.polynomial.polyder(self.disability_poly))
        d12 = _SAFETY * float(np.max(np.abs(dpoly / self.disability_poly_scale) * self.l12(ages)))
        w = self.age_window
        d21_t = max(self._exp_linear_sup(c, bt, bu, w, ur, bt) for c, bt, bu, ur in self._recovery_pieces())
        d21_u = max(self._exp_linear_sup(c, bt, bu, w, ur, bu) for c, bt, bu, ur in self._recovery_pieces())
        d23_t = max(self._exp_linear_sup(c, bt, bu, w, ur, bt) for c, bt, bu, ur in self._mortality_pieces())
        d23_u = max(self._exp_linear_sup(c, bt, bu, w, ur, bu) for c, bt, bu, ur in self._mortality_pieces())
        row1 = max(2 * (d12 + d13), 0.0)
        row2 = max(2 * (d21_t + d23_t), 2 * (d21_u + d23_u))
        return max(row1, row2)


def default_rates() -> DisabilityRates:
    text = resources.files("smj").joinpath("data/disability_default.yaml").read_text()
    return DisabilityRates.from_dict(yaml.safe_load(text))


def disability_family(rates: DisabilityRates | None = None, check_window=(0.0, 120.0)) -> IntensityFamily:
    """Intensity family of the disability model, time axis = age.

    Raises ``ValueError`` if any rate is non-finite on ``check_window``.
    """
    rates = rates or default_rates()
    spline = rates._spline

    def func(s, v):
        out = np.zeros(np.shape(s) + (3, 3))
        out[..., ACTIVE, DISABLED] = rates.l12(s)
        out[..., ACTIVE, DEAD] = rates.l13(s, spline)
        out[..., DISABLED, ACTIVE] = rates.l21(s, v)
        out[..., DISABLED, DEAD] = rates.l23(s, v)
        return generator_from_offdiag(out)

    ages = np.linspace(*check_window, 1201)
    durs = np.linspace(0.0, 10.0, 101)
    probe = func(*np.meshgrid(ages, durs))
    if not np.all(np.isfinite(probe)):
        raise ValueError("disability parameters give non-finite rates on the validation window")
    return IntensityFamily(3, func, rates.gamma0(), rates.lipschitz_constant(), "disability",
                           ("active", "disabled", "dead"))
