"""
Expected cashflows and prospective reserves from transition and jump measures.

For start state ``i`` the cashflow density at time ``s`` is::

    c_i(s) = sum_j int p_ij(s, dv) b_j(s, v) + sum_{j != k} int p_{i;jk}(s, dv) b_jk(s, v)

and the reserve is ``int_0^T exp(-int_0^s r) c_i(s) ds`` plus discounted
discrete payments.  States are 0-based in the API; expressions use 1-based
``j`` and ``k``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import simpson, trapezoid

from ._parallel import pmap
from .expressions import compile_expression
from .intensity import IntensityFamily, augment
from .kernel import UniformizationKernel

__all__ = [
    "DiscretePayment",
    "PaymentSpec",
    "DiscountCurve",
    "CashflowCurve",
    "cashflow",
    "reserve",
    "reserve_at",
    "actuarial_premium_solve",
    "augment_payments",
]

DEFAULT_NS = 200
DEFAULT_NV = 200


@dataclass(frozen=True)
class DiscretePayment:
    """Amount paid at ``time`` if in ``state`` with duration in ``[v_min, v_max]``."""

    time: float
    state: int
    amount: float
    v_min: float = 0.0
    v_max: float = np.inf

    def __post_init__(self):
        if self.time < 0:
            raise ValueError("discrete payment time must be >= 0")
        if self.v_min > self.v_max:
            raise ValueError("discrete payment duration range is empty")


@dataclass
class PaymentSpec:
    """Payment functions of a contract on J states.

    Attributes
    ----------
    rate : callable or None
        ``rate(s, v) -> ndarray[..., J]``, payment rate in each state at time
        ``s`` and duration ``v``.
    lump : callable or None
        ``lump(s, v) -> ndarray[..., J, J]``, lump sum on a ``j -> k`` jump from
        duration ``v``; the diagonal is ignored.
    discrete : list of DiscretePayment
    duration_independent : bool
        Declares that neither ``rate`` nor ``lump`` depends on ``v``; audited.
    b0 : float
        Payment at time 0 before the contract starts (only used when solving
        for a fair premium).
    """

    J: int
    horizon: float
    rate: Callable | None = None
    lump: Callable | None = None
    discrete: list = field(default_factory=list)
    duration_independent: bool = False
    b0: float = 0.0
    rate_duration_independent: bool | None = None
    lump_duration_independent: bool | None = None

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("payment horizon must be positive")
        for d in self.discrete:
            if not 0 <= d.state < self.J:
                raise ValueError(f"discrete payment state {d.state} outside 0..{self.J - 1}")
            if d.time > self.horizon:
                raise ValueError(f"discrete payment at {d.time:g} after horizon {self.horizon:g}")
        if self.rate_duration_independent is None:
            self.rate_duration_independent = self.duration_independent or self.rate is None
        if self.lump_duration_independent is None:
            self.lump_duration_independent = self.duration_independent or self.lump is None
        self.audit()

    # evaluation ------------------------------------------------------------

    def rates(self, s, v) -> np.ndarray:
        s, v = np.broadcast_arrays(np.asarray(s, float), np.asarray(v, float))
        if self.rate is None:
            return np.zeros(s.shape + (self.J,))
        out = np.broadcast_to(np.asarray(self.rate(s, v), float), s.shape + (self.J,))
        if not np.all(np.isfinite(out)):
            raise ValueError("payment rate is not finite at some evaluation point")
        return out

    def lumps(self, s, v) -> np.ndarray:
        s, v = np.broadcast_arrays(np.asarray(s, float), np.asarray(v, float))
        if self.lump is None:
            return np.zeros(s.shape + (self.J, self.J))
        out = np.array(np.broadcast_to(np.asarray(self.lump(s, v), float), s.shape + (self.J, self.J)))
        d = np.arange(self.J)
        out[..., d, d] = 0.0
        if not np.all(np.isfinite(out)):
            raise ValueError("lump payment is not finite at some evaluation point")
        return out

    @property
    def is_zero(self) -> bool:
        return self.rate is None and self.lump is None and not self.discrete

    def audit(self, n: int = 41):
        """Check finiteness on ``[0, T]^2`` and the declared duration independence."""
        ts = np.linspace(0.0, self.horizon, n)
        s, v = np.meshgrid(ts, ts, indexing="ij")
        self.rates(s, v)
        self.lumps(s, v)
        if self.rate is not None and self.rate_duration_independent:
            if not np.array_equal(self.rates(s, v), self.rates(s, v[:, ::-1])):
                raise ValueError("payment rate declared duration independent but depends on v")
        if self.lump is not None and self.lump_duration_independent:
            if not np.array_equal(self.lumps(s, v), self.lumps(s, v[:, ::-1])):
                raise ValueError("lump payment declared duration independent but depends on v")

    # algebra ---------------------------------------------------------------

    def scaled(self, c: float) -> "PaymentSpec":
        c = float(c)
        rate = None if self.rate is None else (lambda s, v, f=self.rate: c * np.asarray(f(s, v), float))
        lump = None if self.lump is None else (lambda s, v, f=self.lump: c * np.asarray(f(s, v), float))
        disc = [DiscretePayment(d.time, d.state, c * d.amount, d.v_min, d.v_max) for d in self.discrete]
        return PaymentSpec(self.J, self.horizon, rate, lump, disc, self.duration_independent, c * self.b0,
                           self.rate_duration_independent, self.lump_duration_independent)

    def __add__(self, other: "PaymentSpec") -> "PaymentSpec":
        if self.J != other.J or self.horizon != other.horizon:
            raise ValueError("payment specs differ in state count or horizon")

        def join(f, g):
            if f is None or g is None:
                return f or g
            return lambda s, v: np.asarray(f(s, v), float) + np.asarray(g(s, v), float)

        return PaymentSpec(
            self.J, self.horizon, join(self.rate, other.rate), join(self.lump, other.lump),
            list(self.discrete) + list(other.discrete),
            self.duration_independent and other.duration_independent, self.b0 + other.b0,
            self.rate_duration_independent and other.rate_duration_independent,
            self.lump_duration_independent and other.lump_duration_independent,
        )

    # construction ----------------------------------------------------------

    @classmethod
    def zero(cls, J: int, horizon: float) -> "PaymentSpec":
        return cls(J, horizon, duration_independent=True)

    @classmethod
    def from_expressions(cls, J: int, horizon: float, rate: str | None = None, lump: str | None = None,
                         discrete=(), b0: float = 0.0) -> "PaymentSpec":
        """Payments from restricted expressions.

        ``rate`` may use ``j, s, v``; ``lump`` may use ``j, k, s, v``; states are
        1-based.  Duration independence is inferred from whether ``v`` occurs.
        ``discrete`` holds dicts with keys ``time, state`` (1-based), ``amount``
        and optional ``v_min, v_max``.
        """
        rate_fn = lump_fn = None
        rate_di = lump_di = True
        js = np.arange(1, J + 1, dtype=float)
        if rate not in (None, "", 0, "0"):
            er = compile_expression(rate, allowed={"j", "s", "v"})
            rate_di = "v" not in er.names

            def rate_fn(s, v):
                s = np.asarray(s)[..., None]
                v = np.asarray(v)[..., None]
                return np.broadcast_to(er(j=js, s=s, v=v), np.broadcast_shapes(s.shape, v.shape)[:-1] + (J,))

        if lump not in (None, "", 0, "0"):
            el = compile_expression(lump, allowed={"j", "k", "s", "v"})
            lump_di = "v" not in el.names
            jj = js[:, None]
            kk = js[None, :]

            def lump_fn(s, v):
                s = np.asarray(s)[..., None, None]
                v = np.asarray(v)[..., None, None]
                shape = np.broadcast_shapes(s.shape, v.shape)[:-2] + (J, J)
                return np.broadcast_to(el(j=jj, k=kk, s=s, v=v), shape)

        disc = []
        for d in discrete:
            d = dict(d)
            state = int(d.pop("state")) - 1
            disc.append(DiscretePayment(float(d.pop("time")), state, float(d.pop("amount")),
                                        float(d.pop("v_min", 0.0)), float(d.pop("v_max", np.inf))))
            if d:
                raise ValueError(f"unknown discrete payment keys {sorted(d)}")
        return cls(J, horizon, rate_fn, lump_fn, disc, rate_di and lump_di, b0, rate_di, lump_di)


@dataclass(frozen=True)
class DiscountCurve:
    """Piecewise-constant short rate: ``r(t) = rates[n]`` on ``[breaks[n], breaks[n+1])``.

    ``breaks[0] == 0``; the last rate extends to infinity.
    """

    breaks: tuple = (0.0,)
    rates: tuple = (0.0,)

    def __post_init__(self):
        b = np.asarray(self.breaks, float)
        r = np.asarray(self.rates, float)
        if len(b) != len(r) or len(b) == 0:
            raise ValueError("discount curve needs one rate per breakpoint")
        if b[0] != 0 or np.any(np.diff(b) <= 0):
            raise ValueError("discount breakpoints must start at 0 and increase")
        if np.any(r < 0) or not np.all(np.isfinite(r)):
            raise ValueError("discount rates must be finite and nonnegative")

    @classmethod
    def constant(cls, r: float) -> "DiscountCurve":
        return cls((0.0,), (float(r),))

    def rate(self, t):
        idx = np.searchsorted(np.asarray(self.breaks), np.asarray(t, float), side="right") - 1
        return np.asarray(self.rates)[np.maximum(idx, 0)]

    def integral(self, s):
        """``int_0^s r``, exact."""
        b = np.asarray(self.breaks, float)
        r = np.asarray(self.rates, float)
        s = np.asarray(s, float)
        cum = np.concatenate([[0.0], np.cumsum(r[:-1] * np.diff(b))])
        idx = np.maximum(np.searchsorted(b, s, side="right") - 1, 0)
        return cum[idx] + r[idx] * (s - b[idx])

    def factor(self, s):
        return np.exp(-self.integral(s))

    def shifted(self, t: float) -> "DiscountCurve":
        """Curve seen from time ``t``: ``r(t + .)``."""
        b = np.asarray(self.breaks, float)
        r = np.asarray(self.rates, float)
        keep = b > t
        new_b = np.concatenate([[0.0], b[keep] - t])
        new_r = np.concatenate([[float(self.rate(t))], r[keep]])
        return DiscountCurve(tuple(new_b), tuple(new_r))


@dataclass
class CashflowCurve:
    """``values[n, i]`` = cashflow density at ``s[n]`` for start state ``i``.

    ``point_mass[n, i]`` holds discrete payments falling on ``s[n]``.
    """

    s: np.ndarray
    values: np.ndarray
    point_mass: np.ndarray
    gamma: float
    mode: str
    seed: int | None = None
    labels: tuple = ()

    def __post_init__(self):
        if len(self.s) > 1 and np.any(np.diff(self.s) <= 0):
            raise ValueError("cashflow grid must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("cashflow has non-finite values")

    def of(self, i: int) -> np.ndarray:
        return self.values[:, i]


def _cashflow_at(kernel, payments: PaymentSpec, s: float, n_v: int) -> np.ndarray:
    J = payments.J
    need_rate_density = payments.rate is not None and not payments.rate_duration_independent
    need_lump_density = payments.lump is not None and not payments.lump_duration_independent
    v = np.linspace(0.0, s, n_v + 1)
    tm, jm = kernel.measures(s, v, density=need_rate_density and s > 0, jumps=payments.lump is not None,
                             jump_density=need_lump_density and s > 0)
    out = np.zeros(J)
    if payments.rate is not None:
        if payments.rate_duration_independent:
            out += tm.marginal @ payments.rates(s, 0.0)
        else:
            out += tm.atom @ payments.rates(s, s)
            if s > 0:
                b = payments.rates(s, v)  # (n_v+1, J)
                out += trapezoid(np.einsum("aij,aj->ai", tm.density, b), v, axis=0)
    if payments.lump is not None:
        if payments.lump_duration_independent:
            out += np.einsum("ijk,jk->i", jm.marginal, payments.lumps(s, 0.0))
        else:
            out += np.einsum("ijk,jk->i", jm.atom, payments.lumps(s, s))
            if s > 0:
                b = payments.lumps(s, v)
                out += trapezoid(np.einsum("aijk,ajk->ai", jm.density, b), v, axis=0)
    return out


def _duration_probability(kernel, s: float, state: int, v_min: float, v_max: float, n_v: int) -> np.ndarray:
    """``P(Z(s) = state, U(s) in [v_min, v_max])`` for every start state."""
    covers = v_min <= 0 and v_max >= s
    hi = min(v_max, s)
    lo = max(v_min, 0.0)
    if covers or hi <= lo:
        tm = kernel.transition(s, density=False)
        p = tm.atom[:, state] * (v_min <= s <= v_max)
        return p + tm.density_mass[:, state] if covers else p
    v = np.linspace(lo, hi, n_v + 1)
    tm = kernel.transition(s, v)
    return tm.atom[:, state] * (v_min <= s <= v_max) + trapezoid(tm.density[:, :, state], v, axis=0)


def _check_grid(kernel, payments, s_grid):
    s_grid = np.asarray(s_grid, float)
    if s_grid.ndim != 1 or len(s_grid) == 0:
        raise ValueError("s_grid must be a non-empty 1-d array")
    if np.any(s_grid < 0) or s_grid.max() > payments.horizon * (1 + 1e-12):
        raise ValueError(f"s_grid must lie in [0, T] = [0, {payments.horizon:g}]")
    if s_grid.max() > kernel.horizon * (1 + 1e-12):
        raise ValueError(f"s beyond the kernel horizon {kernel.horizon:g}")
    if payments.J != kernel.J:
        raise ValueError(f"payments have {payments.J} states, kernel has {kernel.J}")
    return s_grid


def cashflow(kernel: UniformizationKernel, payments: PaymentSpec, s_grid=None, n_v: int = DEFAULT_NV,
             workers: int | None = None) -> CashflowCurve:
    """Cashflow densities for every start state on ``s_grid`` (default ``N_s = 200`` uniform on [0, T]).

    Duration-dependent payments are integrated over ``v`` by the trapezoid rule
    on ``n_v + 1`` points; duration-independent ones use exact masses.
    """
    if s_grid is None:
        s_grid = np.linspace(0.0, payments.horizon, DEFAULT_NS + 1)
    s_grid = _check_grid(kernel, payments, s_grid)
    vals = np.array(pmap(lambda s: _cashflow_at(kernel, payments, float(s), n_v), s_grid, workers))
    point = np.zeros_like(vals)
    for d in payments.discrete:
        hit = np.nonzero(np.isclose(s_grid, d.time, rtol=0, atol=1e-12))[0]
        for n in hit:
            point[n] += d.amount * _duration_probability(kernel, float(s_grid[n]), d.state, d.v_min, d.v_max, n_v)
    return CashflowCurve(s_grid, vals, point, kernel.gamma, kernel.mode, getattr(kernel, "seed", None),
                         kernel.family.state_labels)


def reserve(kernel: UniformizationKernel, payments: PaymentSpec, discount: DiscountCurve | None = None,
            i: int | None = None, n_s: int = DEFAULT_NS, n_v: int = DEFAULT_NV, curve: CashflowCurve | None = None,
            workers: int | None = None):
    """Prospective reserve at time 0.

    Composite Simpson of the discounted cashflow over ``n_s`` uniform steps
    on ``[0, T]``, plus discounted discrete payments.  Returns a vector over
    start states, or a float when ``i`` is given.
    """
    discount = discount or DiscountCurve.constant(0.0)
    if curve is None:
        curve = cashflow(kernel, payments, np.linspace(0.0, payments.horizon, n_s + 1), n_v, workers)
    disc = discount.factor(curve.s)
    V = simpson(disc[:, None] * curve.values, x=curve.s, axis=0) if len(curve.s) > 1 else np.zeros(payments.J)
    for d in payments.discrete:
        V = V + d.amount * discount.factor(d.time) * _duration_probability(
            kernel, d.time, d.state, d.v_min, d.v_max, n_v)
    return V if i is None else float(V[i])


def augment_payments(payments: PaymentSpec, t0: float, u0: float) -> PaymentSpec:
    """Payments on the doubled state space of :func:`smj.intensity.augment`.

    Upper-block states see duration ``u0 + v``, lower-block states ``v``; time
    is ``t0 + s`` throughout.
    """
    J = payments.J
    rate = lump = None
    if payments.rate is not None:
        def rate(s, v):
            s = np.asarray(s, float)
            return np.concatenate([payments.rates(t0 + s, u0 + v), payments.rates(t0 + s, v)], axis=-1)

    if payments.lump is not None:
        def lump(s, v):
            s, v = np.broadcast_arrays(np.asarray(s, float), np.asarray(v, float))
            out = np.zeros(s.shape + (2 * J, 2 * J))
            out[..., :J, J:] = payments.lumps(t0 + s, u0 + v)
            out[..., J:, J:] = payments.lumps(t0 + s, v)
            return out

    disc = []
    for d in payments.discrete:
        if d.time < t0:
            continue
        s = d.time - t0
        # upper block: true duration u0 + v, i.e. v in [v_min - u0, v_max - u0]
        disc.append(DiscretePayment(s, d.state, d.amount, d.v_min - u0, d.v_max - u0))
        disc.append(DiscretePayment(s, J + d.state, d.amount, d.v_min, d.v_max))
    return PaymentSpec(2 * J, payments.horizon - t0, rate, lump, disc, payments.duration_independent,
                       payments.b0, payments.rate_duration_independent, payments.lump_duration_independent)


def reserve_at(family: IntensityFamily, payments: PaymentSpec, discount: DiscountCurve | None, t: float, i: int,
               u: float, gamma: float, mode: str = "unconditional", seed: int | None = 0,
               tail_prob: float = 1e-10, n_s: int = DEFAULT_NS, n_v: int = DEFAULT_NV, backend=None) -> float:
    """Reserve ``V(t; i, u)`` via the doubled state space started in upper-block state ``i``.

    ``u`` may exceed ``t`` (the duration clock may predate time 0).
    """
    T = payments.horizon
    if t < 0 or t >= T:
        raise ValueError(f"need 0 <= t < T = {T:g}, got t = {t:g}")
    if u < 0:
        raise ValueError(f"duration u must be >= 0, got {u:g}")
    discount = discount or DiscountCurve.constant(0.0)
    fam = augment(family, t, u)
    pay = augment_payments(payments, t, u)
    kernel = UniformizationKernel(fam, gamma, T - t, mode, seed, tail_prob=tail_prob, backend=backend)
    return reserve(kernel, pay, discount.shifted(t), i, n_s, n_v)


def actuarial_premium_solve(kernel: UniformizationKernel, payments: Callable[[float], PaymentSpec],
                            discount: DiscountCurve | None = None, i: int = 0, **kw) -> float:
    """Coefficient ``c*`` with ``V_i(0-) = b0(c) + V_i(c) = 0``.

    ``payments(c)`` must be affine in ``c``; two evaluations fix the line and
    a third at ``c = 2`` audits affinity (``ValueError`` if it is off the line
    by more than ``affine_tol`` relative).
    """
    affine_tol = kw.pop("affine_tol", 1e-8)

    def value(c):
        spec = payments(c)
        return spec.b0 + reserve(kernel, spec, discount, i, **kw)

    v0 = value(0.0)
    v1 = value(1.0)
    slope = v1 - v0
    if slope == 0 or not np.isfinite(slope):
        raise ValueError("reserve does not depend on the free coefficient (zero sensitivity)")
    v2 = value(2.0)
    if abs(v2 - (2 * v1 - v0)) > affine_tol * max(1.0, abs(v0), abs(v1), abs(v2)):
        raise ValueError("payments are not affine in the free coefficient")
    return -v0 / slope
