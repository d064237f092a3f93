"""Predictor expressions: a tiny differentiable language for h(x).

An expression is built from coordinates ``x1 .. xd``, real constants, ``+``,
``-``, ``*`` and non-negative integer powers (``**`` or ``^``). Partial
derivatives are taken symbolically, so the gradient of any predictor is exact.

Expressions compile to plain Python lambdas operating on a sequence of
coordinates; every coordinate may be a float or a numpy array, which lets the
same code evaluate a single point or a whole grid.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ExpressionError


class Expr:
    """Base node. Subclasses are immutable value objects."""

    def diff(self, i: int) -> "Expr":
        raise NotImplementedError

    def source(self) -> str:
        raise NotImplementedError

    def variables(self) -> frozenset[int]:
        raise NotImplementedError

    def is_zero(self) -> bool:
        return isinstance(self, Const) and self.value == 0.0


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def diff(self, i):
        return ZERO

    def source(self):
        return repr(float(self.value))

    def variables(self):
        return frozenset()


@dataclass(frozen=True)
class Var(Expr):
    index: int  # zero-based coordinate index

    def diff(self, i):
        return ONE if i == self.index else ZERO

    def source(self):
        return f"x[{self.index}]"

    def variables(self):
        return frozenset({self.index})


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr

    def diff(self, i):
        return add(self.left.diff(i), self.right.diff(i))

    def source(self):
        return f"({self.left.source()} + {self.right.source()})"

    def variables(self):
        return self.left.variables() | self.right.variables()


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr

    def diff(self, i):
        return add(mul(self.left.diff(i), self.right), mul(self.left, self.right.diff(i)))

    def source(self):
        return f"({self.left.source()} * {self.right.source()})"

    def variables(self):
        return self.left.variables() | self.right.variables()


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int

    def diff(self, i):
        if self.exponent == 0:
            return ZERO
        return mul(mul(Const(float(self.exponent)), power(self.base, self.exponent - 1)),
                   self.base.diff(i))

    def source(self):
        return f"({self.base.source()} ** {self.exponent})"

    def variables(self):
        return self.base.variables()


ZERO = Const(0.0)
ONE = Const(1.0)


def add(a: Expr, b: Expr) -> Expr:
    if a.is_zero():
        return b
    if b.is_zero():
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return Add(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if a.is_zero() or b.is_zero():
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return Mul(a, b)


def power(base: Expr, n: int) -> Expr:
    if n == 0:
        return ONE
    if n == 1:
        return base
    if isinstance(base, Const):
        return Const(base.value ** n)
    return Pow(base, n)


def _convert(node: ast.AST, n_vars: int | None, text: str) -> Expr:
    if isinstance(node, ast.Expression):
        return _convert(node.body, n_vars, text)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool):
        return Const(float(node.value))
    if isinstance(node, ast.Name):
        name = node.id
        if name.startswith("x") and name[1:].isdigit() and int(name[1:]) >= 1:
            idx = int(name[1:]) - 1
            if n_vars is not None and idx >= n_vars:
                raise ExpressionError(f"{text!r}: coordinate {name} exceeds d={n_vars}")
            return Var(idx)
        raise ExpressionError(f"{text!r}: unknown name {name!r} (use x1, x2, ...)")
    if isinstance(node, ast.UnaryOp):
        operand = _convert(node.operand, n_vars, text)
        if isinstance(node.op, ast.USub):
            return mul(Const(-1.0), operand)
        if isinstance(node.op, ast.UAdd):
            return operand
    if isinstance(node, ast.BinOp):
        left = _convert(node.left, n_vars, text)
        if isinstance(node.op, ast.Pow):
            exp = _convert(node.right, n_vars, text)
            if not isinstance(exp, Const) or exp.value != int(exp.value) or exp.value < 0:
                raise ExpressionError(f"{text!r}: exponents must be non-negative integers")
            return power(left, int(exp.value))
        right = _convert(node.right, n_vars, text)
        if isinstance(node.op, ast.Add):
            return add(left, right)
        if isinstance(node.op, ast.Sub):
            return add(left, mul(Const(-1.0), right))
        if isinstance(node.op, ast.Mult):
            return mul(left, right)
    raise ExpressionError(f"{text!r}: unsupported syntax {ast.dump(node)[:40]}")


def parse(text: str, n_vars: int | None = None) -> Expr:
    """Parse one predictor, e.g. ``"x1^2"`` or ``"x4*x5"``."""
    src = text.strip().replace("^", "**")
    if not src:
        raise ExpressionError("empty predictor expression")
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"{text!r}: {exc.msg}") from None
    return _convert(tree, n_vars, text)


def _compile(exprs: Sequence[Expr]) -> Callable:
    body = ", ".join(e.source() for e in exprs)
    return eval(f"lambda x: ({body},)", {"__builtins__": {}})  # noqa: S307 - generated from our own AST


class Predictors:
    """An ordered vector of predictor functions h(x) with exact Jacobian.

    ``values(x)`` returns shape ``(p,)`` for a point, or ``(n, p)`` for an
    ``(n, d)`` batch. ``jacobian(x, k)`` returns the partial derivatives with
    respect to the first ``k`` coordinates, shape ``(p, k)`` or ``(n, p, k)``.
    """

    def __init__(self, exprs: Sequence[Expr | str], n_vars: int | None = None):
        self.exprs = tuple(parse(e, n_vars) if isinstance(e, str) else e for e in exprs)
        self.p = len(self.exprs)
        self._f = _compile(self.exprs) if self.exprs else None
        self._d: dict[int, Callable] = {}

    def __len__(self):
        return self.p

    def __repr__(self):
        return f"Predictors({[e.source() for e in self.exprs]})"

    def variables(self) -> frozenset[int]:
        out: frozenset[int] = frozenset()
        for e in self.exprs:
            out |= e.variables()
        return out

    def _eval(self, f, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return np.array(f(x), dtype=float)
        cols = f(x.T)
        return np.column_stack([np.broadcast_to(c, (x.shape[0],)) for c in cols])

    def values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.p == 0:
            return np.zeros((0,) if x.ndim == 1 else (x.shape[0], 0))
        return self._eval(self._f, x)

    def derivative(self, x, i: int) -> np.ndarray:
        """dh/dx_i, same shape as ``values``."""
        x = np.asarray(x, dtype=float)
        if self.p == 0:
            return np.zeros((0,) if x.ndim == 1 else (x.shape[0], 0))
        if i not in self._d:
            self._d[i] = _compile([e.diff(i) for e in self.exprs])
        return self._eval(self._d[i], x)

    def jacobian(self, x, k: int) -> np.ndarray:
        return np.stack([self.derivative(x, i) for i in range(k)], axis=-1)
