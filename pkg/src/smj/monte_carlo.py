"""
Monte Carlo oracle: exact path simulation of a semi-Markov process by
uniformization with the dominating rate, then plain averages of payments.

At each arrival ``T_{l+1}`` of a rate-``g`` Poisson clock the next state is drawn
from ``P(k) = delta_{z,k} + Lambda_{z,k}(T_{l+1}, u_l + T_{l+1} - T_l) / g``.
Self-transitions are collapsed; only real jumps are recorded.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .grid import make_rng
from .intensity import IntensityFamily
from .valuation import DiscountCurve, PaymentSpec

__all__ = ["PathRecord", "PathBatch", "simulate_paths", "simulate_path", "mc_cashflow", "mc_reserve", "MCCurve",
           "MCResult"]

CHUNK = 20_000


@dataclass
class PathRecord:
    """One path: real jump times, states visited (``states[0]`` is the start), durations at each jump."""

    times: np.ndarray
    states: np.ndarray
    durations: np.ndarray
    u0: float
    horizon: float

    def state_at(self, s: float) -> int:
        return int(self.states[np.searchsorted(self.times, s, side="right")])

    def duration_at(self, s: float) -> float:
        n = np.searchsorted(self.times, s, side="right")
        return s - self.times[n - 1] if n else s + self.u0


@dataclass
class PathBatch:
    """Many paths in padded arrays.

    ``times[p, n]`` is the n-th real jump of path ``p`` (``inf`` past the last),
    ``states[p, n]`` the state entered, ``before[p, n]`` the state left and
    ``durations[p, n]`` the duration just before the jump.  ``log_weight`` is
    the likelihood ratio when importance sampling is on (zeros otherwise).
    """

    times: np.ndarray
    states: np.ndarray
    before: np.ndarray
    durations: np.ndarray
    i0: int
    u0: float
    horizon: float
    log_weight: np.ndarray

    @property
    def n(self) -> int:
        return self.times.shape[0]

    def path(self, p: int) -> PathRecord:
        m = np.isfinite(self.times[p])
        return PathRecord(self.times[p][m], np.concatenate([[self.i0], self.states[p][m]]), self.durations[p][m],
                          self.u0, self.horizon)

    def state_duration(self, s: float):
        """``(state, duration)`` arrays of all paths at time ``s``."""
        cnt = (self.times <= s).sum(axis=1)
        rows = np.arange(self.n)
        last = np.maximum(cnt - 1, 0)
        z = np.where(cnt > 0, self.states[rows, last], self.i0)
        u = np.where(cnt > 0, s - self.times[rows, last], s + self.u0)
        return z, u


def simulate_paths(family: IntensityFamily, gamma0_rate: float, T: float, i0: int, u0: float, n_paths: int,
                   seed, tilt: float = 0.0, tilt_target: int | None = None) -> PathBatch:
    """Simulate ``n_paths`` independent paths on ``[0, T]`` from ``(i0, u0)``.

    ``tilt > 0`` multiplies the probability of jumping to ``tilt_target`` by
    ``exp(tilt)`` (renormalised) until the first real jump and records the
    log likelihood ratio.
    """
    g = float(gamma0_rate)
    if not g >= family.gamma0:
        raise ValueError(f"uniformization rate too small: {g:g} < gamma0 = {family.gamma0:g}")
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    J = family.states
    if not 0 <= i0 < J:
        raise ValueError(f"start state {i0} outside 0..{J - 1}")
    if u0 < 0:
        raise ValueError("initial duration must be >= 0")
    if tilt and tilt_target is None:
        raise ValueError("tilt needs a target state")
    rng = make_rng(seed)
    t = np.zeros(n_paths)
    z = np.full(n_paths, i0)
    last = np.full(n_paths, -u0)  # time of last real jump; duration = t - last
    jumped = np.zeros(n_paths, bool)
    logw = np.zeros(n_paths)
    alive = np.ones(n_paths, bool)
    ev_t, ev_z, ev_b, ev_d, ev_p = [], [], [], [], []
    eye = np.eye(J)
    while alive.any():
        idx = np.nonzero(alive)[0]
        t_new = t[idx] + rng.standard_exponential(len(idx)) / g
        y = rng.uniform(size=len(idx))
        inside = t_new <= T
        alive[idx[~inside]] = False
        idx, t_new, y = idx[inside], t_new[inside], y[inside]
        if len(idx) == 0:
            break
        zc = z[idx]
        dur = t_new - last[idx]
        lam = family(t_new, dur)
        P = eye[zc] + lam[np.arange(len(idx)), zc] / g
        if np.any(P < -1e-12):
            raise ValueError(f"uniformization rate too small: negative step probability at rate {g:g}")
        P = np.clip(P, 0.0, None)
        if tilt:
            pre = ~jumped[idx]
            Pt = P.copy()
            Pt[pre, tilt_target] *= np.exp(tilt)
            Pt[pre] /= Pt[pre].sum(axis=1, keepdims=True)
        else:
            Pt = P
        cum = np.cumsum(Pt, axis=1)
        cum[:, -1] = np.inf
        nxt = (y[:, None] >= cum).sum(axis=1)
        if tilt:
            rows = np.arange(len(idx))
            logw[idx] += np.where(pre, np.log(P[rows, nxt]) - np.log(Pt[rows, nxt]), 0.0)
        real = nxt != zc
        ridx = idx[real]
        ev_p.append(ridx)
        ev_t.append(t_new[real])
        ev_z.append(nxt[real])
        ev_b.append(zc[real])
        ev_d.append(dur[real])
        z[ridx] = nxt[real]
        last[ridx] = t_new[real]
        jumped[ridx] = True
        t[idx] = t_new
    p = np.concatenate(ev_p) if ev_p else np.zeros(0, int)
    counts = np.bincount(p, minlength=n_paths)
    width = max(1, int(counts.max()) if len(p) else 1)
    times = np.full((n_paths, width), np.inf)
    states = np.full((n_paths, width), -1)
    before = np.full((n_paths, width), -1)
    durs = np.full((n_paths, width), np.nan)
    if len(p):
        # events were appended in time order per path; a stable sort keeps it
        order = np.argsort(p, kind="stable")
        ps = p[order]
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        slot = np.arange(len(ps)) - starts[ps]
        times[ps, slot] = np.concatenate(ev_t)[order]
        states[ps, slot] = np.concatenate(ev_z)[order]
        before[ps, slot] = np.concatenate(ev_b)[order]
        durs[ps, slot] = np.concatenate(ev_d)[order]
    return PathBatch(times, states, before, durs, i0, float(u0), float(T), logw)


def simulate_path(family: IntensityFamily, gamma0_rate: float, T: float, i0: int, u0: float, seed) -> PathRecord:
    return simulate_paths(family, gamma0_rate, T, i0, u0, 1, seed).path(0)


@dataclass
class MCCurve:
    s: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    n_paths: int
    seed: int
    i0: int


@dataclass
class MCResult:
    mean: float
    se: float
    n_paths: int
    seed: int


def _chunks(n_paths, seed):
    n_chunks = -(-n_paths // CHUNK)
    seqs = np.random.SeedSequence(int(seed)).spawn(n_chunks)
    for c, ss in enumerate(seqs):
        yield min(CHUNK, n_paths - c * CHUNK), ss


def _bin_edges(s_grid, T):
    """Cells centred on the grid points, cut to ``[0, T]``."""
    if len(s_grid) < 2:
        raise ValueError("lump-sum binning needs at least two grid points")
    mids = (s_grid[1:] + s_grid[:-1]) / 2
    lo = max(0.0, s_grid[0] - (mids[0] - s_grid[0]))
    hi = min(T, s_grid[-1] + (s_grid[-1] - mids[-1]))
    return np.concatenate([[lo], mids, [hi]])


def _path_cashflow(batch: PathBatch, payments: PaymentSpec, s_grid, edges, t0):
    n = batch.n
    vals = np.zeros((n, len(s_grid)))
    rows = np.arange(n)
    for a, s in enumerate(s_grid):
        z, u = batch.state_duration(s)
        if payments.rate is not None:
            vals[:, a] += payments.rates(t0 + s, u)[rows, z]
        for d in payments.discrete:
            if abs(d.time - (t0 + s)) <= 1e-12:
                vals[:, a] += d.amount * ((z == d.state) & (u >= d.v_min) & (u <= d.v_max))
    if payments.lump is not None:
        m = np.isfinite(batch.times)
        p, slot = np.nonzero(m)
        tj = batch.times[p, slot]
        amt = payments.lumps(t0 + tj, batch.durations[p, slot])
        amt = amt[np.arange(len(p)), batch.before[p, slot], batch.states[p, slot]]
        b = np.searchsorted(edges, tj, side="right") - 1
        ok = (b >= 0) & (b < len(s_grid)) | (tj == edges[-1])
        b = np.minimum(b, len(s_grid) - 1)
        width = np.diff(edges)
        np.add.at(vals, (p[ok], b[ok]), amt[ok] / width[b[ok]])
    return vals


def mc_cashflow(family: IntensityFamily, payments: PaymentSpec, i0: int, u0: float, n_paths: int, s_grid, seed,
                gamma0_rate: float | None = None, t0: float = 0.0, tilt: float = 0.0,
                tilt_target: int | None = None) -> MCCurve:
    """Monte Carlo cashflow density with pointwise standard errors.

    Rate payments are evaluated exactly at each ``s``; lump sums are binned into
    cells centred on the grid points (bias of order of the grid step).  The
    process is started at time ``t0`` in ``(i0, u0)``; ``s_grid`` counts from
    ``t0`` while the family and the payment functions see ``t0 + s``.
    """
    s_grid = np.asarray(s_grid, float)
    T = float(s_grid.max())
    edges = _bin_edges(s_grid, T) if payments.lump is not None else None
    g = family.gamma0 if gamma0_rate is None else gamma0_rate
    fam = family if t0 == 0 else _shifted(family, t0)
    total = np.zeros(len(s_grid))
    total2 = np.zeros(len(s_grid))
    for n, ss in _chunks(n_paths, seed):
        batch = simulate_paths(fam, g, T, i0, u0, n, ss, tilt, tilt_target)
        vals = _path_cashflow(batch, payments, s_grid, edges, t0)
        if tilt:
            vals = vals * np.exp(batch.log_weight)[:, None]
        total += vals.sum(axis=0)
        total2 += (vals ** 2).sum(axis=0)
    mean = total / n_paths
    var = np.maximum(total2 / n_paths - mean ** 2, 0.0) * n_paths / max(n_paths - 1, 1)
    return MCCurve(s_grid, mean, np.sqrt(var / n_paths), n_paths, int(seed), i0)


def _shifted(family, t0):
    from .intensity import shift

    return shift(family, t0)


def mc_reserve(family: IntensityFamily, payments: PaymentSpec, discount: DiscountCurve | None, i0: int, u0: float,
               n_paths: int, seed, t0: float = 0.0, gamma0_rate: float | None = None, n_s: int = 400) -> MCResult:
    """Monte Carlo reserve ``V(t0; i0, u0)`` with its standard error.

    Lump sums and discrete payments are discounted exactly at their times;
    the rate part is integrated along each path by Simpson's rule on ``n_s``
    steps.  Payment functions and the discount curve use absolute time.
    """
    discount = discount or DiscountCurve.constant(0.0)
    T = payments.horizon - t0
    if T <= 0:
        raise ValueError("t0 must be before the payment horizon")
    g = family.gamma0 if gamma0_rate is None else gamma0_rate
    fam = family if t0 == 0 else _shifted(family, t0)
    s = np.linspace(0.0, T, n_s + 1)
    R0 = discount.integral(t0)
    df = np.exp(-(discount.integral(t0 + s) - R0))
    total = total2 = 0.0
    for n, ss in _chunks(n_paths, seed):
        batch = simulate_paths(fam, g, T, i0, u0, n, ss)
        rows = np.arange(n)
        val = np.zeros(n)
        if payments.rate is not None:
            integrand = np.empty((n, len(s)))
            for a, sa in enumerate(s):
                z, u = batch.state_duration(sa)
                integrand[:, a] = payments.rates(t0 + sa, u)[rows, z] * df[a]
            val += simpson(integrand, x=s, axis=1)
        if payments.lump is not None:
            p, slot = np.nonzero(np.isfinite(batch.times))
            tj = batch.times[p, slot]
            amt = payments.lumps(t0 + tj, batch.durations[p, slot])[np.arange(len(p)), batch.before[p, slot],
                                                                     batch.states[p, slot]]
            np.add.at(val, p, amt * np.exp(-(discount.integral(t0 + tj) - R0)))
        for d in payments.discrete:
            if d.time < t0:
                continue
            z, u = batch.state_duration(d.time - t0)
            hit = (z == d.state) & (u >= d.v_min) & (u <= d.v_max)
            val += d.amount * np.exp(-(discount.integral(d.time) - R0)) * hit
        total += val.sum()
        total2 += (val ** 2).sum()
    mean = total / n_paths
    var = max(total2 / n_paths - mean ** 2, 0.0) * n_paths / max(n_paths - 1, 1)
    return MCResult(float(mean), float(np.sqrt(var / n_paths)), n_paths, int(seed))
