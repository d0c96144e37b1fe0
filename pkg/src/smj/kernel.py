"""
Transition and jump measures assembled from a Pi table.

For start state ``i`` at time 0 the law of (state, duration) at time ``s`` splits
into an atom at ``v = s`` (no real jump yet) and a density over ``v < s``::

    atom_ij(s)       = sum_l Poi_{gs}(l) Pi_ij(l, l)
    density_ij(s, v) = sum_{l > w} Erl_{l-w, g}(s - v) Poi_{gv}(w) Pi_ij(l, w)

Jump measures replace ``Pi_ij(l, w)`` by ``Pi_ij(l, w) * g * Qn_jk(l, w)``.
With ``Erl_m(x) = g * Poi_{gx}(m - 1)`` both sums reduce to products of
Poisson weights, evaluated inside windows where the weights are non-negligible.
Total density mass uses ``int_0^s Erl_{l-w}(s-v) Poi_{gv}(w) dv = Poi_{gs}(l)``
and needs no quadrature.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from . import _backend
from .grid import poisson_pmf, poisson_tail, poisson_tail_index, poisson_window, sample_grid
from .intensity import IntensityFamily
from .pi_engine import PiTable, build_pi_table, build_step_matrices

__all__ = [
    "TransitionMeasure",
    "JumpMeasure",
    "transition_measure",
    "jump_measure",
    "normalization_report",
    "UniformizationKernel",
    "default_v_grid",
]

DEFAULT_NV = 200


def default_v_grid(s: float, n_v: int = DEFAULT_NV) -> np.ndarray:
    """Uniform grid on ``[0, s)`` with step ``s / n_v``."""
    return s * np.arange(n_v) / n_v


@dataclass
class TransitionMeasure:
    """``p_ij(s, dv) = atom_ij(s) delta_s(dv) + density_ij(s, v) dv``.

    ``density[a]`` is the J x J density at ``v_grid[a]``; a grid point equal to
    ``s`` carries the left limit.  ``density_mass`` is the exact integral over
    ``[0, s)``.
    """

    s: float
    atom: np.ndarray
    v_grid: np.ndarray
    density: np.ndarray | None
    density_mass: np.ndarray
    truncation_mass: float
    levels: int
    mode: str
    gamma: float

    @property
    def marginal(self) -> np.ndarray:
        """``P(Z(s) = j | Z(0) = i)`` up to truncation."""
        return self.atom + self.density_mass

    def density_integral(self) -> np.ndarray:
        """Trapezoid integral of the tabulated density over ``v_grid``."""
        if self.density is None or len(self.v_grid) < 2:
            return np.zeros_like(self.atom)
        return trapezoid(self.density, self.v_grid, axis=0)


@dataclass
class JumpMeasure:
    """``p_{i;jk}(s, dv)``: intensity of a real ``j -> k`` jump at ``s`` from duration ``v``.

    Arrays are indexed ``[..., i, j, k]`` and vanish for ``j == k``.
    """

    s: float
    atom: np.ndarray
    v_grid: np.ndarray
    density: np.ndarray | None
    density_mass: np.ndarray
    truncation_mass: float
    levels: int
    mode: str
    gamma: float

    @property
    def marginal(self) -> np.ndarray:
        return self.atom + self.density_mass


class _Weights:
    """Poisson/Erlang weights shared by the transition and jump measures at one ``s``."""

    def __init__(self, table: PiTable, s: float, v_grid):
        self.s = s = float(s)
        if s < 0:
            raise ValueError(f"s must be >= 0, got {s}")
        if table.horizon is not None and s > table.horizon * (1 + 1e-12):
            raise ValueError(f"s = {s:g} beyond the horizon {table.horizon:g} the Pi table was sized for")
        g = table.gamma
        tail = table.tail_prob or 1e-10
        self.L = min(poisson_tail_index(g * s, tail), table.L_max) if s > 0 else 0
        self.truncation = poisson_tail(g * s, self.L)
        ls = np.arange(self.L + 1)
        self.poi_s = poisson_pmf(g * s, ls)
        v = np.asarray(default_v_grid(s) if v_grid is None else v_grid, dtype=float)
        if v.ndim != 1:
            raise ValueError("v_grid must be one-dimensional")
        if np.any(v < 0) or np.any(v > s * (1 + 1e-12)):
            raise ValueError(f"v_grid must lie in [0, s] = [0, {s:g}]")
        self.v = np.minimum(v, s)
        n_v = len(self.v)
        if s == 0 or n_v == 0:
            self.wins = None
            return
        self.poi_w = np.ascontiguousarray(poisson_pmf(g * self.v[:, None], ls[None, :]))
        erl = np.zeros((n_v, self.L + 1))
        erl[:, 1:] = g * poisson_pmf(g * (s - self.v)[:, None], ls[None, :-1])
        self.erl_m = erl
        wins = np.empty((n_v, 4), dtype=np.int64)
        for a, va in enumerate(self.v):
            w_lo, w_hi = poisson_window(g * va)
            m_lo, m_hi = poisson_window(g * (s - va))
            wins[a] = (w_lo, min(w_hi, self.L), m_lo + 1, min(m_hi + 1, self.L))
        self.wins = wins


def transition_measure(table: PiTable, s: float, v_grid=None, density: bool = True,
                       backend: str | None = None, _w: _Weights | None = None) -> TransitionMeasure:
    """Transition measure at time ``s`` from a Pi table.

    Parameters
    ----------
    table : PiTable
        Table sized for a horizon ``>= s``.
    v_grid : array_like, optional
        Durations in ``[0, s]`` where the density is tabulated; defaults to
        ``default_v_grid(s)``.
    density : bool
        Skip tabulation when False (atom and exact mass only).
    """
    w = _w or _Weights(table, s, v_grid)
    L = w.L
    idx = np.arange(L + 1)
    atom = np.tensordot(w.poi_s, table.pi[idx, idx], axes=(0, 0))
    mass = np.tensordot(w.poi_s, table.level_masses[: L + 1], axes=(0, 0))
    dens = None
    if density:
        if w.wins is None:
            dens = np.zeros((len(w.v), table.J, table.J))
        else:
            k = _backend.get(backend)
            dens = k.density_sum(table.pi_duration_major, w.poi_w, w.erl_m, w.wins, L)
    return TransitionMeasure(w.s, atom, w.v, dens, mass, w.truncation, L, table.mode, table.gamma)


def jump_measure(table: PiTable, s: float, v_grid=None, density: bool = True,
                 backend: str | None = None, _w: _Weights | None = None) -> JumpMeasure:
    """Jump measure at time ``s``; same conventions as :func:`transition_measure`."""
    w = _w or _Weights(table, s, v_grid)
    L = w.L
    J = table.J
    g = table.gamma
    diag, off = table.level_jumps
    atom = g * np.tensordot(w.poi_s, diag[: L + 1], axes=(0, 0))
    mass = g * np.tensordot(w.poi_s, off[: L + 1], axes=(0, 0))
    dens = None
    if density:
        if w.wins is None:
            dens = np.zeros((len(w.v), J, J, J))
        else:
            k = _backend.get(backend)
            dens = k.jump_density_sum(table.pi_duration_major, table.q_duration_major, g, w.poi_w, w.erl_m,
                                      w.wins, L)
    return JumpMeasure(w.s, atom, w.v, dens, mass, w.truncation, L, table.mode, g)


def normalization_report(m: TransitionMeasure, method: str = "exact") -> np.ndarray:
    """Per-state defect ``|1 - sum_j (atom_ij + int density_ij)|``.

    ``method="exact"`` integrates the density through the Poisson identity,
    ``"trapezoid"`` through the tabulated grid (which must cover ``[0, s]``).
    """
    if method == "exact":
        mass = m.density_mass
    elif method == "trapezoid":
        mass = m.density_integral()
    else:
        raise ValueError(f"unknown method {method!r}")
    return np.abs(1.0 - (m.atom + mass).sum(axis=1))


class UniformizationKernel:
    """Grid, step matrices and Pi table for one ``(family, gamma, mode, seed)`` cell.

    Provides transition and jump measures at any ``s <= horizon``.
    """

    def __init__(self, family: IntensityFamily, gamma: float, horizon: float, mode: str = "unconditional",
                 seed: int | None = 0, grid=None, tail_prob: float = 1e-10, backend: str | None = None):
        self.family = family
        self.gamma = float(gamma)
        self.horizon = float(horizon)
        self.mode = mode
        self.tail_prob = tail_prob
        self.backend = backend
        L_max = poisson_tail_index(self.gamma * self.horizon, tail_prob)
        if mode == "conditional":
            if grid is None:
                grid = sample_grid(self.gamma, self.horizon, tail_prob, seed=0 if seed is None else seed)
            self.seed = grid.seed
        else:
            grid = None
            self.seed = None
        self.grid = grid
        self.steps = build_step_matrices(family, self.gamma, mode, grid)
        self.table = build_pi_table(self.steps, L_max, self.horizon, tail_prob, backend)

    @property
    def J(self) -> int:
        return self.family.states

    def transition(self, s, v_grid=None, density=True) -> TransitionMeasure:
        return transition_measure(self.table, s, v_grid, density, self.backend)

    def jump(self, s, v_grid=None, density=True) -> JumpMeasure:
        return jump_measure(self.table, s, v_grid, density, self.backend)

    def measures(self, s, v_grid=None, density=True, jumps=True, jump_density=None):
        """``(TransitionMeasure, JumpMeasure or None)`` sharing one set of weights."""
        w = _Weights(self.table, s, v_grid)
        tm = transition_measure(self.table, s, density=density, backend=self.backend, _w=w)
        jm = None
        if jumps:
            jd = density if jump_density is None else jump_density
            jm = jump_measure(self.table, s, density=jd, backend=self.backend, _w=w)
        return tm, jm
