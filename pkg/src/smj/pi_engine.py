"""
One-step matrices Q(l, w) and the level recursion for Pi(k, w).

Two modes share one code path:

* ``conditional``: ``Q(l, w) = I + Lambda(chi[l+1], chi[l+1] - chi[l-w]) / gamma``
  on a sampled Poisson grid ``chi``;
* ``unconditional``: ``Q(l, w) = I + Lambda((l+1)/gamma, (w+1)/gamma) / gamma``.

``Pi[k, w, i, j]`` is the probability that after ``k`` Poisson steps started in
``(i, 0)`` the chain sits in ``j`` with duration counter ``w``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _backend
from .grid import PoissonGrid
from .intensity import IntensityFamily

__all__ = [
    "UniformizationRateError",
    "StepMatrices",
    "PiTable",
    "build_step_matrices",
    "build_pi_table",
    "iter_pi_levels",
    "tv_distance",
    "c_sequence",
    "tv_accumulation_bound",
    "dump_pi_csv",
]

MODES = ("conditional", "unconditional")
STOCHASTIC_TOL = 1e-12


class UniformizationRateError(ValueError):
    """gamma below the intensity bound gamma0."""


def _check_rate(family: IntensityFamily, gamma: float):
    if not gamma >= family.gamma0:
        raise UniformizationRateError(
            f"uniformization rate too small: gamma = {gamma:g} < gamma0 = {family.gamma0:g} "
            f"(bound on |Lambda_ii| of family {family.name!r})"
        )


@dataclass
class StepMatrices:
    """Lazily tabulated one-step matrices for ``0 <= w <= l < n_levels``."""

    family: IntensityFamily
    gamma: float
    mode: str
    grid: PoissonGrid | None = None
    _table: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "conditional":
            if self.grid is None:
                raise ValueError("conditional mode needs a Poisson grid")
            if abs(self.grid.gamma - self.gamma) > 1e-12 * self.gamma:
                raise ValueError(f"grid rate {self.grid.gamma:g} differs from gamma {self.gamma:g}")
        _check_rate(self.family, self.gamma)

    @property
    def J(self) -> int:
        return self.family.states

    @property
    def max_levels(self) -> int | None:
        """Largest usable ``n_levels`` (conditional mode needs ``chi[l+1]``)."""
        return self.grid.L if self.mode == "conditional" else None

    def arguments(self, l, w):
        """``(s, v)`` at which Lambda is evaluated for the step ``(l, w)``."""
        l = np.asarray(l)
        w = np.asarray(w)
        if np.any(w < 0) or np.any(w > l):
            raise IndexError("step matrices are defined for 0 <= w <= l")
        if self.mode == "conditional":
            if np.any(l + 1 > self.grid.L):
                raise IndexError(f"grid has arrivals up to index {self.grid.L}; need l + 1 <= L")
            chi = self.grid.arrivals
            return chi[l + 1], chi[l + 1] - chi[l - w]
        return (l + 1.0) / self.gamma, (w + 1.0) / self.gamma

    def _from_lambda(self, lam):
        Q = lam / self.gamma
        idx = np.arange(self.J)
        Q[..., idx, idx] += 1.0
        neg = Q < -STOCHASTIC_TOL
        if np.any(neg):
            worst = float(Q.min())
            raise UniformizationRateError(
                f"uniformization rate too small: one-step matrix entry {worst:.3g} < 0 at gamma = {self.gamma:g}; "
                f"family {self.family.name!r} exceeds its declared gamma0 = {self.family.gamma0:g}"
            )
        return Q

    def Q(self, l: int, w: int) -> np.ndarray:
        s, v = self.arguments(l, w)
        return self._from_lambda(np.array(self.family(s, v)))

    def Q_diag(self, l: int, w: int) -> np.ndarray:
        return np.diag(np.diag(self.Q(l, w)))

    def Q_offdiag(self, l: int, w: int) -> np.ndarray:
        q = self.Q(l, w)
        np.fill_diagonal(q, 0.0)
        return q

    def table(self, n_levels: int) -> np.ndarray:
        """``Q[l, w]`` for ``0 <= w <= l < n_levels``; zeros above the diagonal in (l, w)."""
        if self._table is not None and self._table.shape[0] >= n_levels:
            return self._table[:n_levels, :n_levels]
        if self.max_levels is not None and n_levels > self.max_levels:
            raise IndexError(f"grid supports {self.max_levels} levels, {n_levels} requested")
        l, w = np.tril_indices(n_levels)
        s, v = self.arguments(l, w)
        lam = np.array(self.family(s, v))
        Q = np.zeros((n_levels, n_levels, self.J, self.J))
        Q[l, w] = self._from_lambda(lam)
        self._table = Q
        return Q


def build_step_matrices(family: IntensityFamily, gamma: float, mode: str = "unconditional",
                        grid: PoissonGrid | None = None) -> StepMatrices:
    """Step matrices for ``family`` at rate ``gamma``; ``grid`` is required in conditional mode."""
    return StepMatrices(family, float(gamma), mode, grid)


@dataclass
class PiTable:
    """Pi(k, w) for ``0 <= w <= k <= L_max``, stored densely as ``pi[k, w, i, j]``.

    Entries with ``w > k`` are zero.
    """

    pi: np.ndarray
    steps: StepMatrices
    horizon: float | None = None
    tail_prob: float | None = None

    def __post_init__(self):
        self.pi.setflags(write=False)

    @property
    def L_max(self) -> int:
        return self.pi.shape[0] - 1

    @property
    def J(self) -> int:
        return self.pi.shape[-1]

    @property
    def mode(self) -> str:
        return self.steps.mode

    @property
    def gamma(self) -> float:
        return self.steps.gamma

    def __getitem__(self, kw):
        k, w = kw
        if w > k:
            return np.zeros((self.J, self.J))
        return self.pi[k, w]

    def q_table(self) -> np.ndarray:
        """One-step matrices for levels ``0..L_max``; needs one grid arrival past the table."""
        return self.steps.table(self.L_max + 1)

    @cached_property
    def pi_duration_major(self) -> np.ndarray:
        """``out[w, l] = Pi(l, w)``, C-contiguous."""
        return np.ascontiguousarray(self.pi.transpose(1, 0, 2, 3))

    @cached_property
    def q_duration_major(self) -> np.ndarray:
        return np.ascontiguousarray(self.q_table().transpose(1, 0, 2, 3))

    @cached_property
    def level_masses(self) -> np.ndarray:
        """``(L_max+1, J, J)``: ``sum_{w<l} Pi(l, w)``."""
        idx = np.arange(self.L_max + 1)
        return self.pi.sum(axis=1) - self.pi[idx, idx]

    @cached_property
    def level_jumps(self):
        """``(diag, off)`` of shape ``(L_max+1, J, J, J)``.

        ``diag[l, i, j, k] = Pi_ij(l, l) Qn_jk(l, l)`` and
        ``off[l] = sum_{w<l} Pi_ij(l, w) Qn_jk(l, w)``.
        """
        Q = self.q_table()
        L = self.L_max
        d = np.arange(self.J)
        diag = np.zeros((L + 1, self.J, self.J, self.J))
        off = np.zeros_like(diag)
        for l in range(L + 1):
            qn = Q[l, : l + 1].copy()
            qn[:, d, d] = 0.0
            prod = np.einsum("wij,wjk->wijk", self.pi[l, : l + 1], qn)
            diag[l] = prod[l]
            off[l] = prod[:l].sum(axis=0)
        return diag, off

    def row_totals(self) -> np.ndarray:
        """``(L_max+1, J)`` array of ``sum_{w, j} Pi_ij(k, w)``."""
        return self.pi.sum(axis=(1, 3))

    def check(self, tol: float = 1e-10):
        """Raise ``AssertionError`` if a table invariant fails."""
        p = self.pi
        if not np.array_equal(p[0, 0], np.eye(self.J)):
            raise AssertionError("Pi(0,0) != I")
        if p.min() < -tol or p.max() > 1 + tol:
            raise AssertionError("Pi entries outside [0, 1]")
        dev = np.abs(self.row_totals() - 1.0).max()
        if dev > tol:
            raise AssertionError(f"Pi rows do not sum to 1 (max deviation {dev:.3g})")
        l, w = np.triu_indices(self.L_max + 1, 1)
        if np.any(p[l, w] != 0):
            raise AssertionError("Pi(k, w) nonzero for w > k")


def build_pi_table(steps: StepMatrices, L_max: int, horizon: float | None = None,
                   tail_prob: float | None = None, backend: str | None = None) -> PiTable:
    """Run the level recursion up to ``L_max``.

    Pi(0,0) = I, Pi(k,0) = sum_{w<k} Pi(k-1,w) Qn(k-1,w) (ascending w) and
    Pi(k,v) = Pi(k-1,v-1) Qd(k-1,v-1).
    """
    L_max = int(L_max)
    if L_max < 0:
        raise ValueError("L_max must be >= 0")
    # L_max levels only need Q up to level L_max - 1
    Q = np.ascontiguousarray(steps.table(max(L_max, 1)))
    pi = _backend.get(backend).pi_recursion(Q, L_max)
    return PiTable(pi, steps, horizon, tail_prob)


def iter_pi_levels(steps: StepMatrices, L_max: int):
    """Yield ``(k, level)`` with ``level[w] = Pi(k, w)`` for ``w <= k``, keeping only one level in memory."""
    J = steps.J
    idx = np.arange(J)
    level = np.eye(J)[None]
    yield 0, level
    for k in range(1, int(L_max) + 1):
        l = np.full(k, k - 1)
        w = np.arange(k)
        s, v = steps.arguments(l, w)
        Q = steps._from_lambda(np.array(steps.family(s, v)))
        diag = Q[:, idx, idx]
        Qn = Q.copy()
        Qn[:, idx, idx] = 0.0
        new = np.empty((k + 1, J, J))
        new[1:] = level * diag[:, None, :]
        new[0] = np.einsum("wim,wmj->ij", level, Qn)
        level = new
        yield k, level


def tv_distance(a: PiTable, b: PiTable, k: int, subset=None) -> np.ndarray:
    """Per initial state ``i``: ``sum_{w in subset} sum_j |a_ij(k, w) - b_ij(k, w)|``.

    ``subset`` defaults to all ``w <= k``; indices above ``k`` contribute zero.
    """
    if a.J != b.J:
        raise ValueError(f"state dimensions differ: {a.J} vs {b.J}")
    if k > min(a.L_max, b.L_max) or k < 0:
        raise ValueError(f"level {k} outside both tables (L_max {a.L_max}, {b.L_max})")
    ws = np.arange(k + 1) if subset is None else np.asarray(sorted(set(int(x) for x in subset)), dtype=int)
    ws = ws[ws <= k]
    if len(ws) == 0:
        return np.zeros(a.J)
    if np.any(ws < 0):
        raise ValueError("duration indices must be >= 0")
    return np.abs(a.pi[k, ws] - b.pi[k, ws]).sum(axis=(0, 2))


def c_sequence(qa: np.ndarray, qb: np.ndarray) -> np.ndarray:
    """``C[k] = max_{0 <= w <= l <= k-1} max_i sum_j |qa_ij(l, w) - qb_ij(l, w)|``; ``C[0] = 0``.

    ``qa``, ``qb`` are step tables of equal shape ``(n, n, J, J)``.
    """
    if qa.shape != qb.shape:
        raise ValueError(f"step tables differ in shape: {qa.shape} vs {qb.shape}")
    n = qa.shape[0]
    row_tv = np.abs(qa - qb).sum(axis=-1).max(axis=-1)
    row_tv[np.triu_indices(n, 1)] = 0.0
    per_level = row_tv.max(axis=1)
    return np.concatenate([[0.0], np.maximum.accumulate(per_level)])


def tv_accumulation_bound(a: PiTable, b: PiTable, k: int, subset=None, C=None):
    """``(lhs, rhs)`` with ``lhs = tv_distance(a, b, k, subset)`` and ``rhs = k * C_k``."""
    if C is None:
        n = max(k, 1)
        C = c_sequence(a.steps.table(n), b.steps.table(n))
    return tv_distance(a, b, k, subset), k * C[k]


def dump_pi_csv(table: PiTable, path, seed=None):
    """Write ``k, w, i, j, value, mode, gamma, seed`` rows (1-based states)."""
    L = table.L_max
    J = table.J
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["k", "w", "i", "j", "value", "mode", "gamma", "seed"])
        for k in range(L + 1):
            for w in range(k + 1):
                for i in range(J):
                    for j in range(J):
                        out.writerow([k, w, i + 1, j + 1, repr(float(table.pi[k, w, i, j])), table.mode,
                                      repr(table.gamma), "" if seed is None else seed])
