"""
Restricted arithmetic expressions for payment functions and intensities in
run configs.

Only numbers, a fixed set of variable names, arithmetic, comparisons,
``and``/``or``/``not`` and the functions in ``FUNCTIONS`` are accepted; anything
else is rejected at compile time.  Evaluation is vectorised with numpy.
Comparisons yield 0/1 so indicators can be written as ``(s >= 1) * (s <= 4)``.
"""
from __future__ import annotations

import ast
import math
import operator

import numpy as np

__all__ = ["Expression", "ExpressionError", "compile_expression", "FUNCTIONS"]


class ExpressionError(ValueError):
    pass


def _clip(x, lo, hi):
    return np.clip(x, lo, hi)


def _ind(c):
    return np.asarray(c, dtype=float) != 0


FUNCTIONS = {
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "min": np.minimum,
    "max": np.maximum,
    "clip": _clip,
    "ind": _ind,
    "where": lambda c, a, b: np.where(np.asarray(c) != 0, a, b),
}

CONSTANTS = {"pi": math.pi, "e": math.e}

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
    ast.Mod: np.mod,
}

_CMPOPS = {
    ast.Lt: operator.lt,
    ast.LtE: operator.le,
    ast.Gt: operator.gt,
    ast.GtE: operator.ge,
    ast.Eq: operator.eq,
    ast.NotEq: operator.ne,
}


class Expression:
    """A compiled expression; call with keyword arrays, e.g. ``expr(s=s, v=v)``."""

    def __init__(self, source: str, fn, names: frozenset):
        self.source = source
        self._fn = fn
        self.names = names

    def __call__(self, **env):
        missing = self.names - env.keys()
        if missing:
            raise ExpressionError(f"missing variables {sorted(missing)} for {self.source!r}")
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            out = self._fn(env)
        return np.asarray(out, dtype=float)

    def __repr__(self):
        return f"Expression({self.source!r})"


def _as_float(x):
    return np.asarray(x, dtype=float) if isinstance(x, (np.ndarray, np.bool_, bool)) else x


def _compile(node, allowed, used):
    if isinstance(node, ast.Expression):
        return _compile(node.body, allowed, used)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionError(f"unsupported constant {node.value!r}")
        val = float(node.value)
        return lambda env: val
    if isinstance(node, ast.Name):
        if node.id in allowed:
            used.add(node.id)
            name = node.id
            return lambda env: env[name]
        if node.id in CONSTANTS:
            val = CONSTANTS[node.id]
            return lambda env: val
        raise ExpressionError(f"unknown name {node.id!r}; allowed: {sorted(allowed)}")
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        op = _BINOPS[type(node.op)]
        a, b = _compile(node.left, allowed, used), _compile(node.right, allowed, used)
        return lambda env: op(_as_float(a(env)), _as_float(b(env)))
    if isinstance(node, ast.UnaryOp):
        a = _compile(node.operand, allowed, used)
        if isinstance(node.op, ast.USub):
            return lambda env: -_as_float(a(env))
        if isinstance(node.op, ast.UAdd):
            return a
        if isinstance(node.op, ast.Not):
            return lambda env: (np.asarray(a(env)) == 0).astype(float)
    if isinstance(node, ast.Compare):
        parts = [_compile(node.left, allowed, used)] + [_compile(c, allowed, used) for c in node.comparators]
        ops = []
        for o in node.ops:
            if type(o) not in _CMPOPS:
                raise ExpressionError(f"unsupported comparison {type(o).__name__}")
            ops.append(_CMPOPS[type(o)])

        def cmp(env):
            vals = [p(env) for p in parts]
            res = True
            for op, x, y in zip(ops, vals, vals[1:]):
                res = np.logical_and(res, op(x, y))
            return np.asarray(res, dtype=float)

        return cmp
    if isinstance(node, ast.BoolOp):
        parts = [_compile(v, allowed, used) for v in node.values]
        combine = np.logical_and if isinstance(node.op, ast.And) else np.logical_or

        def boolop(env):
            res = np.asarray(parts[0](env)) != 0
            for p in parts[1:]:
                res = combine(res, np.asarray(p(env)) != 0)
            return res.astype(float)

        return boolop
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS or node.keywords:
            raise ExpressionError(f"unsupported call in expression; allowed functions: {sorted(FUNCTIONS)}")
        fn = FUNCTIONS[node.func.id]
        args = [_compile(a, allowed, used) for a in node.args]
        return lambda env: _as_float(fn(*[_as_float(a(env)) for a in args]))
    raise ExpressionError(f"unsupported syntax: {ast.dump(node)[:60]}")


def compile_expression(source: str | float | int, allowed=("s", "v")) -> Expression:
    """Parse ``source`` into an :class:`Expression` over the names in ``allowed``."""
    text = str(source).strip()
    if not text:
        raise ExpressionError("empty expression")
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
    used: set = set()
    fn = _compile(tree, frozenset(allowed), used)
    return Expression(text, fn, frozenset(used))
