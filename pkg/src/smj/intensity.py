"""
Intensity families Lambda(s, v) driving a semi-Markov jump process.

A family is a vectorised callable: ``family(s, v)`` broadcasts its two arguments
and returns an array of shape ``broadcast(s, v).shape + (J, J)``.  ``s`` is
calendar time, ``v`` the duration since the last state change.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "IntensityFamily",
    "ValidationReport",
    "Violation",
    "generator_from_offdiag",
    "constant_family",
    "expression_family",
    "validate",
    "augment",
    "shift",
    "lipschitz_audit",
]

ROW_SUM_TOL = 1e-12


def generator_from_offdiag(off):
    """Fill the diagonal of ``off[..., J, J]`` with minus the off-diagonal row sums."""
    off = np.array(off, dtype=float, copy=True)
    J = off.shape[-1]
    idx = np.arange(J)
    off[..., idx, idx] = 0.0
    off[..., idx, idx] = -off.sum(axis=-1)
    return off


@dataclass(frozen=True)
class IntensityFamily:
    """Family of J x J intensity matrices ``Lambda(s, v)``.

    Attributes
    ----------
    states : int
        Number of states J.
    func : callable
        ``func(s, v) -> ndarray[..., J, J]``, vectorised over ``s`` and ``v``.
    gamma0 : float
        Uniform bound on ``|Lambda_ii(s, v)|``.
    lipschitz_K : float or None
        Constant K with ``max_i sum_j |Lambda_ij(s1,v1) - Lambda_ij(s2,v2)|
        <= K (|s1 - s2| + |v1 - v2|)``, when known.
    """

    states: int
    func: Callable
    gamma0: float
    lipschitz_K: float | None = None
    name: str = "family"
    labels: tuple = field(default=())
    duration_independent: bool = False

    def __call__(self, s, v):
        s = np.asarray(s, dtype=float)
        v = np.asarray(v, dtype=float)
        s, v = np.broadcast_arrays(s, v)
        out = np.asarray(self.func(s, v), dtype=float)
        expected = s.shape + (self.states, self.states)
        if out.shape != expected:
            out = np.broadcast_to(out, expected)
        return out

    eval = __call__

    @property
    def state_labels(self) -> tuple:
        return self.labels or tuple(str(i + 1) for i in range(self.states))


@dataclass
class Violation:
    kind: str  # "sign", "row_sum", "bound", "nonfinite"
    s: float
    v: float
    row: int
    col: int | None
    value: float

    def __str__(self):
        where = f"row {self.row + 1}" if self.col is None else f"entry ({self.row + 1},{self.col + 1})"
        return f"{self.kind} violation at (s={self.s:g}, v={self.v:g}), {where}: {self.value:.6g}"


@dataclass
class ValidationReport:
    violations: list
    max_rate: float
    gamma0: float
    n_points: int

    @property
    def valid(self) -> bool:
        return not self.violations

    def __str__(self):
        head = (
            f"{'valid' if self.valid else 'INVALID'}: {self.n_points} points, "
            f"max |Lambda_ii| = {self.max_rate:.6g} (gamma0 = {self.gamma0:.6g})"
        )
        return "\n".join([head] + [f"  {v}" for v in self.violations])


def validate(family: IntensityFamily, sample_grid: Iterable[tuple[float, float]]) -> ValidationReport:
    """Check sign, conservativity and the gamma0 bound at every sampled ``(s, v)``."""
    pts = np.asarray(list(sample_grid), dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("sample_grid must be non-empty")
    lam = family(pts[:, 0], pts[:, 1])
    J = family.states
    violations = []
    bad = ~np.isfinite(lam)
    for p, i, j in zip(*np.nonzero(bad)):
        violations.append(Violation("nonfinite", pts[p, 0], pts[p, 1], int(i), int(j), float(lam[p, i, j])))
    lam = np.where(bad, 0.0, lam)
    off = lam.copy()
    off[:, np.arange(J), np.arange(J)] = 0.0
    for p, i, j in zip(*np.nonzero(off < 0)):
        violations.append(Violation("sign", pts[p, 0], pts[p, 1], int(i), int(j), float(lam[p, i, j])))
    rows = lam.sum(axis=-1)
    scale = np.maximum(1.0, np.abs(lam).max(axis=-1))
    for p, i in zip(*np.nonzero(np.abs(rows) > ROW_SUM_TOL * scale)):
        violations.append(Violation("row_sum", pts[p, 0], pts[p, 1], int(i), None, float(rows[p, i])))
    diag = np.abs(lam[:, np.arange(J), np.arange(J)])
    for p, i in zip(*np.nonzero(diag > family.gamma0 * (1 + 1e-12))):
        violations.append(Violation("bound", pts[p, 0], pts[p, 1], int(i), int(i), float(diag[p, i])))
    return ValidationReport(violations, float(diag.max()), float(family.gamma0), len(pts))


def constant_family(matrix, gamma0: float | None = None, name: str = "constant") -> IntensityFamily:
    """Time- and duration-independent family; K = 0."""
    m = np.array(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("constant intensity must be a square matrix")
    m.setflags(write=False)
    J = m.shape[0]
    bound = float(np.max(np.abs(np.diag(m)))) if gamma0 is None else float(gamma0)

    def func(s, v):
        return np.broadcast_to(m, np.shape(s) + (J, J))

    return IntensityFamily(J, func, bound, 0.0, name, duration_independent=True)


def expression_family(
    entries: Sequence[Sequence[str | float | None]],
    gamma0: float,
    lipschitz_K: float | None = None,
    name: str = "expression",
) -> IntensityFamily:
    """Family whose off-diagonal entries are restricted expressions in ``s`` and ``v``.

    Diagonal entries of ``entries`` are ignored and set to minus the row sum.
    """
    from .expressions import compile_expression

    J = len(entries)
    compiled = {}
    uses_v = False
    for i, row in enumerate(entries):
        if len(row) != J:
            raise ValueError("intensity expression matrix must be square")
        for j, e in enumerate(row):
            if i == j or e in (None, 0, "0", ""):
                continue
            expr = compile_expression(str(e), allowed={"s", "v"})
            uses_v |= "v" in expr.names
            compiled[i, j] = expr

    def func(s, v):
        out = np.zeros(np.shape(s) + (J, J))
        for (i, j), expr in compiled.items():
            out[..., i, j] = expr(s=s, v=v)
        return generator_from_offdiag(out)

    return IntensityFamily(J, func, float(gamma0), lipschitz_K, name, duration_independent=not uses_v)


def augment(family: IntensityFamily, t0: float, u0: float) -> IntensityFamily:
    """Doubled-state family encoding a start at time ``t0`` with duration ``u0``.

    States ``0..J-1`` mean "no reset since the start" (true duration ``u0 + v``),
    states ``J..2J-1`` mean "reset occurred" (true duration ``v``)::

        [[D(t0+s, u0+v),  Lam(t0+s, u0+v) - D(t0+s, u0+v)],
         [0,              Lam(t0+s, v)                  ]]

    where ``D`` is the diagonal part of ``Lam``.
    """
    if t0 < 0 or u0 < 0:
        raise ValueError("augmentation needs t0 >= 0 and u0 >= 0")
    J = family.states

    def func(s, v):
        upper = family(t0 + s, u0 + v)
        lower = family(t0 + s, v)
        out = np.zeros(np.shape(s) + (2 * J, 2 * J))
        idx = np.arange(J)
        diag = upper[..., idx, idx]
        out[..., idx, idx] = diag
        off = upper.copy()
        off[..., idx, idx] = 0.0
        out[..., :J, J:] = off
        out[..., J:, J:] = lower
        return out

    labels = tuple(f"0:{x}" for x in family.state_labels) + tuple(f"1:{x}" for x in family.state_labels)
    return IntensityFamily(
        2 * J, func, family.gamma0, family.lipschitz_K, f"augment({family.name}, t0={t0:g}, u0={u0:g})",
        labels, family.duration_independent,
    )


def shift(family: IntensityFamily, t0: float) -> IntensityFamily:
    """Same family seen from calendar time ``t0``: ``Lambda(t0 + s, v)``."""
    if t0 == 0:
        return family

    def func(s, v):
        return family(t0 + s, v)

    return IntensityFamily(
        family.states, func, family.gamma0, family.lipschitz_K, f"shift({family.name}, {t0:g})",
        family.labels, family.duration_independent,
    )


def lipschitz_audit(family: IntensityFamily, window, n_pairs: int = 2000, seed: int = 0):
    """Largest observed ratio ``TV-row-distance / (|ds| + |dv|)`` over random pairs.

    ``window`` is ``((s_lo, s_hi), (v_lo, v_hi))``.  Returns ``(ratio, K)``;
    the audit passes when ``ratio <= K``.
    """
    from .grid import make_rng

    rng = make_rng(seed)
    (s_lo, s_hi), (v_lo, v_hi) = window
    s1, s2 = rng.uniform(s_lo, s_hi, (2, n_pairs))
    v1, v2 = rng.uniform(v_lo, v_hi, (2, n_pairs))
    # half the pairs close together to probe local slopes
    half = n_pairs // 2
    s2[:half] = np.clip(s1[:half] + rng.normal(0, 1e-3, half), s_lo, s_hi)
    v2[:half] = np.clip(v1[:half] + rng.normal(0, 1e-3, half), v_lo, v_hi)
    diff = np.abs(family(s1, v1) - family(s2, v2)).sum(axis=-1).max(axis=-1)
    dist = np.abs(s1 - s2) + np.abs(v1 - v2)
    ok = dist > 0
    ratio = float(np.max(diff[ok] / dist[ok])) if ok.any() else 0.0
    return ratio, family.lipschitz_K
