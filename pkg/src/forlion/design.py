"""Factor spaces, approximate designs, distances and information-matrix helpers."""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, Protocol, Sequence

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, InvalidDesign, SingularReference

log = logging.getLogger(__name__)

WEIGHT_SUM_TOL = 1e-12
RENORMALIZE_TOL = 1e-14


class Model(Protocol):
    """What the design machinery needs from a GLM or MLM specification."""

    p: int

    def fisher_batch(self, points: np.ndarray) -> np.ndarray: ...

    def sensitivity_batch(self, points: np.ndarray, F_inv: np.ndarray) -> np.ndarray: ...

    def sensitivity_gradient(self, x: np.ndarray, F_inv: np.ndarray, k: int) -> np.ndarray: ...

    def feasible_batch(self, points: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class FactorSpace:
    """Continuous intervals first, then finite level sets.

    >>> FactorSpace(continuous=[(0, 1)], discrete=[(-1, 1)]).d
    2
    """

    continuous: tuple[tuple[float, float], ...] = ()
    discrete: tuple[tuple[float, ...], ...] = ()

    def __post_init__(self):
        cont = tuple((float(a), float(b)) for a, b in self.continuous)
        disc = tuple(tuple(sorted(float(v) for v in levels)) for levels in self.discrete)
        for a, b in cont:
            if not (math.isfinite(a) and math.isfinite(b)) or not a < b:
                raise InvalidDesign(f"continuous factor needs finite lower < upper, got [{a}, {b}]")
        for levels in disc:
            if len(set(levels)) != len(levels) or len(levels) < 2:
                raise InvalidDesign(f"discrete factor needs >= 2 distinct levels, got {levels}")
        if not cont and not disc:
            raise InvalidDesign("factor space needs at least one factor")
        object.__setattr__(self, "continuous", cont)
        object.__setattr__(self, "discrete", disc)

    @property
    def k(self) -> int:
        return len(self.continuous)

    @property
    def d(self) -> int:
        return len(self.continuous) + len(self.discrete)

    @property
    def lower(self) -> np.ndarray:
        return np.array([a for a, _ in self.continuous] + [lv[0] for lv in self.discrete])

    @property
    def upper(self) -> np.ndarray:
        return np.array([b for _, b in self.continuous] + [lv[-1] for lv in self.discrete])

    @property
    def ranges(self) -> np.ndarray:
        return self.upper - self.lower

    def n_combos(self) -> int:
        return math.prod(len(lv) for lv in self.discrete)

    def combos(self) -> Iterator[tuple[float, ...]]:
        """All discrete level combinations, in lexicographic order."""
        return itertools.product(*self.discrete)

    def vertices(self) -> np.ndarray:
        return np.array(list(itertools.product(*zip(self.lower, self.upper))), dtype=float)

    def contains(self, x, atol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            return False
        k = self.k
        for j, (a, b) in enumerate(self.continuous):
            if not (a - atol <= x[j] <= b + atol):
                return False
        return all(x[k + j] in levels for j, levels in enumerate(self.discrete))

    def snap(self, x) -> np.ndarray:
        """Clip continuous coordinates into their box and snap discrete ones to
        the nearest declared level (ties go to the lower level)."""
        x = np.array(x, dtype=float)
        k = self.k
        for j, (a, b) in enumerate(self.continuous):
            x[j] = min(max(x[j], a), b)
        for j, levels in enumerate(self.discrete):
            lv = np.asarray(levels)
            x[k + j] = lv[int(np.argmin(np.abs(lv - x[k + j])))]  # argmin keeps the first, i.e. lower, on ties
        return x

    def sample(self, rng: np.random.Generator, vertices_only: bool = False) -> np.ndarray:
        k = self.k
        x = np.empty(self.d)
        for j, (a, b) in enumerate(self.continuous):
            x[j] = rng.choice([a, b]) if vertices_only else rng.uniform(a, b)
        for j, levels in enumerate(self.discrete):
            x[k + j] = rng.choice([levels[0], levels[-1]]) if vertices_only else rng.choice(levels)
        return x


class DistanceMetric(str, Enum):
    EUCLIDEAN = "euclidean"
    NORMALIZED = "normalized"
    DISCRETE_BLOCKING = "discrete-blocking"


def distance(a, b, metric: DistanceMetric | str, space: FactorSpace) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    metric = DistanceMetric(metric)
    diff = a - b
    if metric is DistanceMetric.EUCLIDEAN:
        return float(np.sqrt(diff @ diff))
    if metric is DistanceMetric.NORMALIZED:
        z = diff / space.ranges
        return float(np.sqrt(z @ z))
    k = space.k
    if np.any(diff[k:] != 0):
        return math.inf
    return float(np.sqrt(diff[:k] @ diff[:k]))


@dataclass(frozen=True)
class Design:
    """Approximate design: ``m`` points (rows) with non-negative weights summing to 1."""

    points: np.ndarray
    weights: np.ndarray
    _checked: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.array(self.weights, dtype=float).reshape(-1)
        if pts.ndim != 2 or pts.shape[0] != w.shape[0]:
            raise DimensionMismatch(f"{pts.shape[0]} points but {w.shape[0]} weights")
        if pts.shape[0] == 0:
            raise InvalidDesign("design has no points")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidDesign("weights must be finite and non-negative")
        total = w.sum()
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise InvalidDesign(f"weights sum to {total!r}, not 1")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_unnormalized(cls, points, weights) -> "Design":
        w = np.asarray(weights, dtype=float)
        return cls(points, w / w.sum())

    @classmethod
    def uniform(cls, points) -> "Design":
        pts = np.asarray(points, dtype=float)
        m = pts.shape[0]
        return cls(pts, np.full(m, 1.0 / m))

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def canonical(self) -> "Design":
        """Rows ordered by descending weight, ties broken by lexicographic coordinates."""
        keys = [tuple([-w] + list(x)) for x, w in zip(self.points, self.weights)]
        order = sorted(range(self.m), key=keys.__getitem__)
        return Design(self.points[order], self.weights[order])

    def sorted_by_coords(self) -> "Design":
        order = np.lexsort(self.points.T[::-1])
        return Design(self.points[order], self.weights[order])

    def drop_zero_weights(self) -> "Design":
        keep = self.weights > 0
        return Design(self.points[keep], renormalize(self.weights[keep]))


def renormalize(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    s = w.sum()
    if abs(s - 1.0) > RENORMALIZE_TOL:
        w = w / s
    return w


def merge_close_points(design: Design, metric: DistanceMetric | str, delta: float,
                       space: FactorSpace) -> Design:
    """Fuse pairs closer than ``delta`` into their midpoint carrying the summed
    weight, scanning pairs in ascending (i, j) order and rescanning after each
    merge. Discrete midpoint coordinates are snapped back to declared levels."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    pts = [np.array(x) for x in design.points]
    ws = [float(w) for w in design.weights]
    merged = True
    while merged:
        merged = False
        for i, j in itertools.combinations(range(len(pts)), 2):
            if distance(pts[i], pts[j], metric, space) < delta:
                mid = (pts[i] + pts[j]) / 2.0
                if space.discrete:
                    k = space.k
                    mid[k:] = space.snap(mid)[k:]
                pts[i] = mid
                ws[i] = ws[i] + ws[j]
                del pts[j], ws[j]
                merged = True
                break
    if len(pts) == design.m:
        return design
    return Design(np.array(pts), renormalize(np.array(ws)))


def log_det(F: np.ndarray) -> float:
    """log|F| for a symmetric PSD matrix; ``-inf`` when singular to working precision.

    The matrix is first equilibrated by its diagonal so the pivot test is
    insensitive to the scaling of individual parameters.
    """
    F = np.asarray(F, dtype=float)
    diag = np.diag(F)
    if F.size == 0:
        return 0.0
    if not np.all(diag > 0) or not np.all(np.isfinite(F)):
        return -math.inf
    s = 1.0 / np.sqrt(diag)
    S = F * s[:, None] * s[None, :]
    tol = 1e-14 * np.trace(S)
    shift = -2.0 * float(np.sum(np.log(s)))
    try:
        L = np.linalg.cholesky(S)
        piv = np.diag(L) ** 2
        if piv.min() >= tol:
            return float(np.sum(np.log(piv))) + shift
    except np.linalg.LinAlgError:
        pass
    # Cholesky broke down or produced a tiny pivot: decide on the eigenvalues,
    # whose rounding error is bounded by eps * ||S|| (unlike LU pivots).
    lam = np.linalg.eigvalsh(S)
    if lam.min() < tol:
        return -math.inf
    return float(np.sum(np.log(lam))) + shift


def inv_psd(F: np.ndarray) -> np.ndarray:
    """Inverse of a nonsingular symmetric PSD matrix (equilibrated Cholesky)."""
    F = np.asarray(F, dtype=float)
    s = 1.0 / np.sqrt(np.diag(F))
    S = F * s[:, None] * s[None, :]
    c = scipy.linalg.cho_factor(S, lower=True)
    Sinv = scipy.linalg.cho_solve(c, np.eye(F.shape[0]))
    Finv = Sinv * s[:, None] * s[None, :]
    return (Finv + Finv.T) / 2.0


def information_matrix(design: Design, model: Model) -> np.ndarray:
    """F(xi) = sum_i w_i F_{x_i}."""
    if design.d != getattr(model, "d", design.d):
        raise DimensionMismatch(f"design has d={design.d}, model expects d={model.d}")
    Fs = model.fisher_batch(design.points)
    F = np.tensordot(design.weights, Fs, axes=1)
    return (F + F.T) / 2.0


def design_log_det(design: Design, model: Model) -> float:
    return log_det(information_matrix(design, model))


def relative_efficiency(design_a: Design, design_b: Design, model: Model) -> float:
    """(|F(a)| / |F(b)|)^(1/p), computed in log space."""
    lb = design_log_det(design_b, model)
    if lb == -math.inf:
        raise SingularReference("reference design has singular information matrix")
    la = design_log_det(design_a, model)
    if la == -math.inf:
        return 0.0
    return math.exp((la - lb) / model.p)


def sensitivities(design: Design, model: Model, points: np.ndarray | None = None) -> np.ndarray:
    """d(x, xi) at ``points`` (default: the design's own support)."""
    F = information_matrix(design, model)
    F_inv = inv_psd(F)
    pts = design.points if points is None else np.atleast_2d(np.asarray(points, dtype=float))
    return model.sensitivity_batch(pts, F_inv)


def _fmt(v: float) -> str:
    return f"{v:.15g}"


def write_design_csv(design: Design, path: str | Path) -> None:
    """Header ``x1..xd,weight``; rows by descending weight, ties by coordinates."""
    design = design.canonical()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i + 1}" for i in range(design.d)] + ["weight"])
        for x, w in zip(design.points, design.weights):
            writer.writerow([_fmt(v) for v in x] + [_fmt(w)])


def read_design_csv(path: str | Path, normalize: bool = True) -> Design:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidDesign(f"{path}: empty design file")
    header = [h.strip() for h in rows[0]]
    if not header or header[-1] != "weight":
        raise InvalidDesign(f"{path}: last column must be 'weight'")
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise InvalidDesign(f"{path}:{lineno}: expected {len(header)} columns")
        try:
            data.append([float(c) for c in row])
        except ValueError:
            raise InvalidDesign(f"{path}:{lineno}: non-numeric entry") from None
    if not data:
        raise InvalidDesign(f"{path}: no design rows")
    arr = np.array(data)
    w = arr[:, -1]
    if normalize:
        return Design.from_unnormalized(arr[:, :-1], w)
    return Design(arr[:, :-1], w)


def as_points(rows: Sequence[Sequence[float]] | np.ndarray) -> np.ndarray:
    arr = np.asarray(rows, dtype=float)
    return arr[:, None] if arr.ndim == 1 else arr
