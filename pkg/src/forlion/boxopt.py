"""Multi-start projected limited-memory quasi-Newton ascent on a box.

The objective may return ``-inf`` (for example outside the feasible region
of a cumulative logit model); such trial points are simply rejected by the
line search, and starts with ``-inf`` value are discarded.
"""

from __future__ import annotations

import math
from collections import deque
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import AllStartsInvalid

Objective = Callable[[np.ndarray], "tuple[float, np.ndarray]"]

MEMORY = 5
ARMIJO = 1e-4
BACKTRACK = 0.5
MAX_BACKTRACKS = 60


@dataclass
class BoxProblem:
    lower: np.ndarray
    upper: np.ndarray
    objective: Objective
    starts: Sequence[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if self.lower.shape != self.upper.shape or not np.all(self.lower < self.upper):
            raise ValueError("box needs lower < upper componentwise")
        starts = [np.atleast_1d(np.asarray(s, dtype=float)) for s in self.starts]
        for s in starts:
            if s.shape != self.lower.shape or np.any(s < self.lower) or np.any(s > self.upper):
                raise ValueError(f"start {s.tolist()} lies outside the box")
        self.starts = starts

    @property
    def dim(self) -> int:
        return self.lower.size


@dataclass(frozen=True)
class StartResult:
    x: np.ndarray
    value: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class MaximizeResult:
    x: np.ndarray
    value: float
    runs: tuple[StartResult, ...]

    def __iter__(self):  # allows ``x, value = maximize(...)``
        return iter((self.x, self.value))


def default_starts(lower, upper, n_random: int, rng: np.random.Generator) -> list[np.ndarray]:
    """``n_random`` uniform draws followed by the box center."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    starts = [rng.uniform(lower, upper) for _ in range(n_random)]
    starts.append((lower + upper) / 2.0)
    return starts


def _projected_gradient(x, g, lo, hi):
    pg = g.copy()
    pg[(x <= lo) & (g < 0)] = 0.0
    pg[(x >= hi) & (g > 0)] = 0.0
    return pg


def _two_loop(q, pairs):
    """Apply the inverse-Hessian approximation of the (negated) objective."""
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q = q - a * y
    s, y, _ = pairs[-1]
    q = q * ((s @ y) / (y @ y))
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q = q + (a - b) * s
    return q


def ascend(objective: Objective, x0, lower, upper, tol: float = 1e-8,
           max_iter: int = 200) -> StartResult:
    """Single-start projected L-BFGS ascent."""
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    f, g = objective(x)
    if f == -math.inf or not np.isfinite(f):
        return StartResult(x, -math.inf, 0, False)
    g = np.asarray(g, dtype=float)
    pairs: deque = deque(maxlen=MEMORY)
    width = float(np.max(hi - lo))
    for it in range(max_iter):
        pg = _projected_gradient(x, g, lo, hi)
        if np.max(np.abs(pg)) < tol:
            return StartResult(x, f, it, True)
        free = pg != 0.0
        if pairs:
            d = np.zeros_like(x)
            sub = [(s[free], y[free], 1.0 / (s[free] @ y[free])) for s, y, _ in pairs
                   if s[free] @ y[free] > 1e-300]
            d[free] = _two_loop(pg[free], sub) if sub else pg[free]
            if d @ pg <= 0.0:
                pairs.clear()
                d = pg
        else:
            d = pg
        # first (steepest) step limited to a quarter of the box
        step = 1.0 if pairs else min(1.0, 0.25 * width / np.max(np.abs(d)))
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            x_new = np.clip(x + step * d, lo, hi)
            f_new, g_new = objective(x_new)
            if np.isfinite(f_new) and f_new >= f + ARMIJO * (g @ (x_new - x)):
                accepted = True
                break
            step *= BACKTRACK
        if not accepted or np.array_equal(x_new, x):
            return StartResult(x, f, it, False)
        g_new = np.asarray(g_new, dtype=float)
        s_vec, y_vec = x_new - x, -(g_new - g)
        if s_vec @ y_vec > 1e-12 * (s_vec @ s_vec) ** 0.5 * (y_vec @ y_vec) ** 0.5:
            pairs.append((s_vec, y_vec, 0.0))
        x, f, g = x_new, f_new, g_new
    return StartResult(x, f, max_iter, False)


def maximize(problem: BoxProblem, tol: float = 1e-8, max_iter: int = 200,
             executor: Executor | None = None) -> MaximizeResult:
    """Best terminal point over all starts (ties go to the lowest start index)."""
    if not problem.starts:
        raise ValueError("BoxProblem has no starting points")

    def run(x0):
        return ascend(problem.objective, x0, problem.lower, problem.upper, tol, max_iter)

    if executor is None:
        runs = [run(s) for s in problem.starts]
    else:
        runs = list(executor.map(run, problem.starts))
    best = None
    for r in runs:
        if r.value > -math.inf and (best is None or r.value > best.value):
            best = r
    if best is None:
        raise AllStartsInvalid("objective is -inf at every start")
    return MaximizeResult(best.x.copy(), best.value, tuple(runs))
