"""Lift-one weight optimization on a fixed support.

Every coordinate update moves along a segment of the simplex: weight ``z`` on
point ``i`` and the remaining mass ``1 - z`` spread over the other points in
their current proportions (or uniformly when point ``i`` currently holds all
the weight). Along such a segment the information matrix is
``(1 - z) * A + z * F_i`` so log f is concave in ``z``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .design import log_det
from .errors import SingularStart

log = logging.getLogger(__name__)

ZERO_SNAP = 1e-12
GOLDEN_TOL = 1e-10
GOLDEN_MAX_ITER = 200
MAX_SWEEPS = 100_000
NOISE = 1e-13
STATIONARY_ROUNDS = 20
NEWTON_EVERY = 10
NEWTON_MAX_ITER = 100
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class WeightProfile:
    """f(z) = a z (1-z)^(p-1) + b (1-z)^p, up to a positive common factor."""

    a: float
    b: float
    p: int

    @classmethod
    def from_log_values(cls, log_f0: float, log_f_half: float, p: int) -> "WeightProfile":
        """Fit from log f(0) and log f(1/2), scaled so f(1/2) = 1.

        Since f(1/2) >= b / 2^p the scaled b never exceeds 2^p.
        """
        b = 0.0 if log_f0 == -math.inf else math.exp(log_f0 - log_f_half)
        return cls(a=2.0 ** p - b, b=b, p=p)

    def value(self, z):
        z = np.asarray(z, dtype=float)
        return self.a * z * (1 - z) ** (self.p - 1) + self.b * (1 - z) ** self.p

    def argmax(self) -> float:
        a, b, p = self.a, self.b, self.p
        if a > p * b:
            return (a - p * b) / (p * (a - b))
        return 0.0


def alpha_new_point(d_t: float, b_t: float, p: int) -> float:
    """Weight for a new point: maximizer over alpha of f((1-alpha) xi_t + alpha x*)."""
    num = 2.0 ** p * d_t - (p + 1) * b_t
    if num <= 0:
        return 0.0
    return num / (p * (2.0 ** p * d_t - 2.0 * b_t))


def alpha_new_point_log(log_d_t: float, log_b_t: float, p: int) -> float:
    """``alpha_new_point`` from log determinants, safe for extreme magnitudes."""
    if log_d_t == -math.inf:
        return 0.0
    return alpha_new_point(math.exp(log_d_t - log_b_t), 1.0, p)


def log_objective(Fs: np.ndarray, w: np.ndarray) -> float:
    F = np.tensordot(w, Fs, axes=1)
    return log_det((F + F.T) / 2.0)


def golden_section_max(g, lo: float = 0.0, hi: float = 1.0, tol: float = GOLDEN_TOL,
                       max_iter: int = GOLDEN_MAX_ITER) -> tuple[float, float]:
    """Maximize a unimodal function on [lo, hi]; returns (argmax, value)."""
    c = hi - _INVPHI * (hi - lo)
    d = lo + _INVPHI * (hi - lo)
    gc, gd = g(c), g(d)
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        if gc >= gd:
            hi, d, gd = d, c, gc
            c = hi - _INVPHI * (hi - lo)
            gc = g(c)
        else:
            lo, c, gc = c, d, gd
            d = lo + _INVPHI * (hi - lo)
            gd = g(d)
    return (c, gc) if gc >= gd else (d, gd)


def _rest_matrix(Fs: np.ndarray, w: np.ndarray, i: int) -> np.ndarray:
    """Information of the other points with weights renormalized to 1."""
    m = len(w)
    v = np.array(w, dtype=float)
    v[i] = 0.0
    s = v.sum()
    if s <= 0.0:  # w_i == 1: blend path with the others uniform
        v = np.full(m, 1.0 / (m - 1))
        v[i] = 0.0
    else:
        v /= s
    return np.tensordot(v, Fs, axes=1), v


def _apply(v: np.ndarray, i: int, z: float) -> np.ndarray:
    w = (1.0 - z) * v
    w[i] = z
    w = np.maximum(w, 0.0)
    return w / w.sum() if abs(w.sum() - 1.0) > 1e-15 else w


def _derivatives(A: np.ndarray, D: np.ndarray, z: float) -> tuple[float, float]:
    """First and second derivative of log|A + z D| (diagonally equilibrated)."""
    M = A + z * D
    diag = np.diag(M)
    if not np.all(diag > 0):
        return math.nan, math.nan
    sc = 1.0 / np.sqrt(diag)
    try:
        X = np.linalg.solve(M * sc[:, None] * sc, D * sc[:, None] * sc)
    except np.linalg.LinAlgError:
        return math.nan, math.nan
    return float(np.trace(X)), -float(np.sum(X * X.T))


def _argmax_general(A: np.ndarray, B: np.ndarray, p: int, z0: float = 0.5) -> float:
    """Maximize the concave g(z) = log|(1-z) A + z B| on [0, 1].

    Endpoint derivatives settle boundary optima; otherwise safeguarded Newton
    on g' (bisection whenever a step leaves the bracket) finds the interior
    root to machine precision. Golden section is the fallback if the
    derivative cannot be evaluated.
    """
    D = B - A
    if log_det(A) > -math.inf:
        d0 = _derivatives(A, D, 0.0)[0]
        if d0 <= 0.0:
            return 0.0
    if log_det(B) > -math.inf:
        d1 = _derivatives(A, D, 1.0)[0]
        if d1 >= 0.0:
            return 1.0
    lo, hi = 0.0, 1.0
    z = min(max(z0, 1e-3), 1.0 - 1e-3)
    for _ in range(NEWTON_MAX_ITER):
        g1, g2 = _derivatives(A, D, z)
        if math.isnan(g1):
            break
        if g1 > 0:
            lo = z
        else:
            hi = z
        step = -g1 / g2 if g2 < 0 else math.inf
        z_new = z + step
        if not lo < z_new < hi:
            z_new = 0.5 * (lo + hi)
        if abs(z_new - z) <= 4 * np.finfo(float).eps * max(z, 1e-300) or hi - lo <= 1e-16:
            return z_new
        z = z_new
    else:
        return z

    def g(t):
        M = (1.0 - t) * A + t * B
        return log_det((M + M.T) / 2.0)

    return golden_section_max(g)[0]


def _noise(value: float) -> float:
    """Rounding-level slack for comparing two log-determinants."""
    return NOISE * max(1.0, abs(value))


def _argmax_rank_one(A: np.ndarray, B: np.ndarray, p: int) -> float:
    l0 = log_det(A)
    M = (A + B) / 2.0
    lh = log_det((M + M.T) / 2.0)
    if lh == -math.inf:
        return math.nan  # profile identically zero; no information in this direction
    return WeightProfile.from_log_values(l0, lh, p).argmax()


def kkt_residual(Fs: np.ndarray, w: np.ndarray) -> float:
    """Largest violation of d_i = p on the support and d_i <= p off it."""
    F = np.tensordot(w, Fs, axes=1)
    d = np.einsum("ij,nji->n", np.linalg.inv((F + F.T) / 2.0), Fs)
    p = Fs.shape[1]
    viol = np.where(w > 0, np.abs(d - p), np.maximum(d - p, 0.0))
    return float(viol.max())


def support_newton(Fs: np.ndarray, w: np.ndarray, max_iter: int = 50,
                   tol: float = 1e-14) -> np.ndarray:
    """Newton ascent of log f over the weights of the current support.

    Only points with positive weight move; the step keeps sum(w) = 1 and is
    shortened so no weight turns negative (a weight reaching zero is dropped
    and later sweeps may lift it again). Each accepted step does not lower
    log f beyond rounding noise.
    """
    w = np.array(w, dtype=float)
    current = log_objective(Fs, w)
    for _ in range(max_iter):
        S = np.flatnonzero(w > 0)
        if S.size < 2:
            break
        F = np.tensordot(w, Fs, axes=1)
        A = np.linalg.inv((F + F.T) / 2.0)
        AF = np.einsum("ij,njk->nik", A, Fs[S])
        g = np.einsum("nii->n", AF)
        H = -np.einsum("aij,bji->ab", AF, AF)
        n = S.size
        K = np.zeros((n + 1, n + 1))
        K[:n, :n] = H
        K[:n, n] = K[n, :n] = 1.0
        rhs = np.concatenate([-g, [0.0]])
        step = np.linalg.lstsq(K, rhs, rcond=None)[0][:n]
        if not np.all(np.isfinite(step)) or np.max(np.abs(step)) <= tol:
            break
        neg = step < 0
        t = min(1.0, float(np.min(-w[S][neg] / step[neg]))) if neg.any() else 1.0
        accepted = False
        while t > 1e-12:
            cand = w.copy()
            cand[S] = np.maximum(w[S] + t * step, 0.0)
            cand[cand < ZERO_SNAP] = 0.0
            cand /= cand.sum()
            value = log_objective(Fs, cand)
            if value >= current - _noise(current):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        moved = np.max(np.abs(cand - w))
        w, current = cand, max(value, current)
        if moved <= tol:
            break
    return w


def _liftone(Fs: np.ndarray, w0, eps: float, analytic: bool, max_sweeps: int,
             kkt_tol: float | None) -> np.ndarray:
    w = np.array(w0, dtype=float)
    m, p = Fs.shape[0], Fs.shape[1]
    if not eps > 0:
        raise ValueError("eps must be positive")
    kkt_tol = eps if kkt_tol is None else kkt_tol
    current = log_objective(Fs, w)
    if current == -math.inf:
        raise SingularStart("initial weights give a singular information matrix")
    if m == 1:
        return w
    stalled = 0
    for sweep in range(max_sweeps):
        start, w_start = current, w.copy()
        for i in range(m):
            A, v = _rest_matrix(Fs, w, i)
            z = (_argmax_rank_one(A, Fs[i], p) if analytic
                 else _argmax_general(A, Fs[i], p, z0=w[i] if w[i] < 1 else 0.5))
            if math.isnan(z):
                continue
            if z < ZERO_SNAP:
                z = 0.0
            cand = _apply(v, i, z)
            value = log_objective(Fs, cand)
            if value >= current - _noise(current):
                w, current = cand, max(value, current)
        small = current - start < eps
        if small and kkt_residual(Fs, w) <= kkt_tol:
            break
        if small or sweep % NEWTON_EVERY == NEWTON_EVERY - 1:
            # A log f gain below eps only bounds d_i - p by about sqrt(eps), and
            # coordinate ascent crawls on clustered supports; finish with Newton.
            w = support_newton(Fs, w)
            current = max(current, log_objective(Fs, w))
            if small:
                stalled += 1
                if (kkt_residual(Fs, w) <= kkt_tol or stalled > STATIONARY_ROUNDS
                        or np.max(np.abs(w - w_start)) <= 1e-15):
                    break
    else:
        log.warning("lift-one stopped after %d sweeps without meeting eps=%g", max_sweeps, eps)
    log.debug("lift-one: m=%d sweeps=%d kkt=%.3g", m, sweep + 1, kkt_residual(Fs, w))
    return w


def liftone_general(points, w0, model, eps: float, max_sweeps: int = MAX_SWEEPS,
                   kkt_tol: float | None = None) -> np.ndarray:
    """Coordinate ascent with a numerical line maximization; works for any model."""
    Fs = model.fisher_batch(np.asarray(points, dtype=float))
    return _liftone(Fs, w0, eps, analytic=False, max_sweeps=max_sweeps, kkt_tol=kkt_tol)


def liftone_glm(points, w0, spec, eps: float, max_sweeps: int = MAX_SWEEPS,
                   kkt_tol: float | None = None) -> np.ndarray:
    """Lift-one with the closed-form coordinate update (rank-one F_x)."""
    Fs = spec.fisher_batch(np.asarray(points, dtype=float))
    return _liftone(Fs, w0, eps, analytic=True, max_sweeps=max_sweeps, kkt_tol=kkt_tol)


def liftone(points, w0, model, eps: float, max_sweeps: int = MAX_SWEEPS,
                   kkt_tol: float | None = None) -> np.ndarray:
    if getattr(model, "kind", None) == "glm":
        return liftone_glm(points, w0, model, eps, max_sweeps)
    return liftone_general(points, w0, model, eps, max_sweeps)
