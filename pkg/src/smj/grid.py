"""
Poissonian uniformization grids and the Poisson/Erlang special functions.

Random numbers come from numpy's Philox4x64 counter-based generator seeded
through ``SeedSequence``, so a (gamma, seed) pair reproduces a grid exactly on
every platform numpy supports.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import gammaln, xlogy

__all__ = [
    "PoissonGrid",
    "make_rng",
    "sample_grid",
    "deterministic_grid",
    "poisson_pmf",
    "poisson_logpmf",
    "erlang_pdf",
    "poisson_tail",
    "poisson_tail_index",
    "poisson_window",
    "grid_deviation",
    "grid_deviation_bound",
]

_CHUNK = 256


def make_rng(seed):
    """Philox generator for ``seed`` (int or ``SeedSequence``)."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class PoissonGrid:
    """Arrival times ``chi[0] = 0 < chi[1] < ...`` of a rate-``gamma`` Poisson process.

    ``increments`` are the recorded exponential draws, so
    ``chi == concatenate([[0], cumsum(increments)])``.
    """

    gamma: float
    arrivals: np.ndarray
    increments: np.ndarray
    seed: int | None = None
    horizon: float | None = None

    def __post_init__(self):
        self.arrivals.setflags(write=False)
        self.increments.setflags(write=False)

    @property
    def L(self) -> int:
        """Index of the last retained arrival."""
        return len(self.arrivals) - 1

    def __len__(self):
        return len(self.arrivals)

    def __getitem__(self, idx):
        return self.arrivals[idx]

    def count_before(self, t: float) -> int:
        """Number of arrivals in ``(0, t]``, i.e. Gamma(t)."""
        return int(np.searchsorted(self.arrivals, t, side="right")) - 1


def sample_grid(gamma: float, horizon: float, tail_prob: float = 1e-10, seed: int = 0) -> PoissonGrid:
    """Sample a Poisson grid long enough for a Pi table on ``[0, horizon]``.

    The retained length ``L`` is one past the smallest index ``n`` with
    ``P(Poisson(gamma * horizon) > n) < tail_prob`` (the extra arrival feeds the
    one-step matrices of the last table level), and is extended further if needed
    until ``chi[L] > horizon``.
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if not 0 < tail_prob < 1:
        raise ValueError(f"tail_prob must lie in (0, 1), got {tail_prob}")
    n_needed = poisson_tail_index(gamma * horizon, tail_prob) + 1
    rng = make_rng(seed)
    draws = []
    total = 0
    # Draw in fixed-size chunks so that a longer grid extends a shorter one.
    while True:
        chunk = rng.standard_exponential(_CHUNK) / gamma
        draws.append(chunk)
        total += _CHUNK
        if total >= n_needed:
            inc = np.concatenate(draws)
            chi = np.concatenate([[0.0], np.cumsum(inc)])
            above = np.nonzero(chi > horizon)[0]
            if len(above) and above[0] <= total:
                n = max(n_needed, int(above[0]))
                return PoissonGrid(float(gamma), chi[: n + 1].copy(), inc[:n].copy(), int(seed), float(horizon))


def deterministic_grid(gamma: float, L: int) -> PoissonGrid:
    """Grid with arrivals exactly at ``l / gamma``."""
    chi = np.arange(L + 1, dtype=float) / gamma
    return PoissonGrid(float(gamma), chi, np.diff(chi))


def poisson_logpmf(lam, k):
    lam = np.asarray(lam, dtype=float)
    k = np.asarray(k)
    return xlogy(k, lam) - lam - gammaln(k + 1.0)


def poisson_pmf(lam, k):
    """``exp(-lam) lam**k / k!`` evaluated in log space.

    Broadcasts over ``lam`` and ``k``; ``poisson_pmf(0, 0) == 1``.
    """
    lam_a = np.asarray(lam, dtype=float)
    k_a = np.asarray(k)
    if np.any(lam_a < 0):
        raise ValueError("Poisson mean must be non-negative")
    if np.any(k_a < 0) or not np.all(np.equal(np.mod(k_a, 1), 0)):
        raise ValueError("Poisson count must be a non-negative integer")
    out = np.exp(poisson_logpmf(lam_a, k_a))
    return out if out.ndim else float(out)


def erlang_pdf(k, gamma, x):
    """Erlang(k, gamma) density ``gamma (gamma x)**(k-1) exp(-gamma x) / (k-1)!``.

    ``k = 0`` is rejected: the atomic case belongs to the caller.
    """
    k_a = np.asarray(k)
    x_a = np.asarray(x, dtype=float)
    if np.any(k_a < 1):
        raise ValueError("Erlang shape must be >= 1")
    if not gamma > 0:
        raise ValueError("Erlang rate must be positive")
    if np.any(x_a < 0):
        raise ValueError("Erlang argument must be non-negative")
    gx = gamma * x_a
    out = np.exp(math.log(gamma) + xlogy(k_a - 1.0, gx) - gx - gammaln(k_a))
    return out if out.ndim else float(out)


def poisson_tail(lam: float, n: int) -> float:
    """``P(Poisson(lam) > n)``."""
    if lam == 0:
        return 0.0
    return float(stats.poisson.sf(n, lam))


def poisson_tail_index(lam: float, tail_prob: float) -> int:
    """Smallest ``n >= 1`` with ``P(Poisson(lam) > n) < tail_prob``."""
    if lam <= 0:
        return 1
    n = max(1, int(stats.poisson.isf(tail_prob, lam)))
    while poisson_tail(lam, n) >= tail_prob:
        n += 1
    while n > 1 and poisson_tail(lam, n - 1) < tail_prob:
        n -= 1
    return n


def poisson_window(lam: float) -> tuple[int, int]:
    """Index range outside which Poisson(lam) carries negligible (< 1e-20) mass."""
    sd = math.sqrt(lam)
    lo = max(0, int(math.floor(lam - 10.0 * sd - 5.0)))
    hi = int(math.ceil(lam + 10.0 * sd + 20.0))
    return lo, hi


def grid_deviation(grid: PoissonGrid, epsilon: float) -> float:
    """``max |chi_l - l/gamma|`` over ``l <= min(L, floor(gamma**(1+epsilon)))``."""
    n = min(grid.L, int(math.floor(grid.gamma ** (1.0 + epsilon))))
    idx = np.arange(n + 1)
    return float(np.max(np.abs(grid.arrivals[: n + 1] - idx / grid.gamma)))


def grid_deviation_bound(gamma: float, epsilon: float, q: float = 2.0) -> float:
    """High-probability envelope ``2 e^{1/2+eps/2+2q} log(gamma) gamma^{-1/2+eps/2}``."""
    alpha = 2.0 * math.exp(0.5 + epsilon / 2.0 + 2.0 * q)
    return alpha * math.log(gamma) * gamma ** (-0.5 + epsilon / 2.0)
