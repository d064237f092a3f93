"""Multinomial logit models (baseline-category, cumulative, adjacent-categories,
continuation-ratio) with F_x = X_x^T U_x X_x.

Arrays follow one convention throughout: category index ``j`` runs over
``0 .. J-1`` and the last category is the reference (eta_J = 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, InfeasiblePoint
from .expr import Predictors

FAMILIES = ("baseline-category", "cumulative", "adjacent-categories", "continuation-ratio")
_ALIASES = {
    "baseline": "baseline-category",
    "adjacent": "adjacent-categories",
    "continuation": "continuation-ratio",
    "cumulative-logit": "cumulative",
}
ETA_CLIP = 700.0
PI_FLOOR = 1e-300
FEASIBILITY_MARGIN = 1e-12


def canonical_family(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in FAMILIES:
        raise ValueError(f"unknown logit family {name!r}; choose from {FAMILIES}")
    return name


@dataclass(frozen=True)
class CategoryProbabilities:
    pi: np.ndarray     # (J,)
    gamma: np.ndarray  # (J-1,) cumulative sums


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def probabilities_from_eta(family: str, eta: np.ndarray) -> np.ndarray:
    """Category probabilities from the J-1 linear predictors; shape (..., J).

    Cumulative predictors must already be strictly increasing.
    """
    eta = np.clip(np.asarray(eta, dtype=float), -ETA_CLIP, ETA_CLIP)
    zeros = np.zeros(eta.shape[:-1] + (1,))
    if family == "baseline-category":
        return _softmax(np.concatenate([eta, zeros], axis=-1))
    if family == "adjacent-categories":
        # log(pi_j / pi_{j+1}) = eta_j  =>  log pi_j = sum_{l >= j} eta_l + const
        tail = np.cumsum(eta[..., ::-1], axis=-1)[..., ::-1]
        return _softmax(np.concatenate([tail, zeros], axis=-1))
    if family == "continuation-ratio":
        log_stop = _log_sigmoid(eta)          # log P(Y = j | Y >= j)
        log_go = _log_sigmoid(-eta)           # log P(Y > j | Y >= j)
        reach = np.concatenate([zeros, np.cumsum(log_go, axis=-1)], axis=-1)
        logp = reach + np.concatenate([log_stop, zeros], axis=-1)
        return np.exp(logp)
    if family == "cumulative":
        g = np.exp(_log_sigmoid(eta))
        lower = np.concatenate([zeros, g], axis=-1)
        upper = np.concatenate([g, zeros + 1.0], axis=-1)
        # last category via the survival function keeps precision for large eta
        pi = upper - lower
        pi[..., -1] = np.exp(_log_sigmoid(-eta[..., -1]))
        return pi
    raise ValueError(family)


def _tails(pi):
    """1 - gamma_s for s = 1..J-1, computed as sum_{j > s} pi_j."""
    return np.cumsum(pi[..., ::-1], axis=-1)[..., ::-1][..., 1:]


def u_from_pi(family: str, pi: np.ndarray) -> np.ndarray:
    """U matrix (J x J) from category probabilities, batched over leading axes."""
    pi = np.asarray(pi, dtype=float)
    J = pi.shape[-1]
    shape = pi.shape[:-1]
    U = np.zeros(shape + (J, J))
    U[..., J - 1, J - 1] = 1.0
    gam = np.cumsum(pi, axis=-1)[..., :-1]     # gamma_1 .. gamma_{J-1}
    tail = _tails(pi)                          # 1 - gamma_s, s = 1..J-1
    idx = np.arange(J - 1)
    if family == "baseline-category":
        P = pi[..., :-1]
        U[..., :-1, :-1] = -P[..., :, None] * P[..., None, :]
        # written as pi_s * sum_{j != s} pi_j so that the pi-derivatives below match
        U[..., idx, idx] = P * (pi.sum(axis=-1, keepdims=True) - P)
    elif family == "adjacent-categories":
        Uc = gam[..., :, None] * tail[..., None, :]
        upper = np.triu(np.ones((J - 1, J - 1), dtype=bool))
        Uc = np.where(upper, Uc, np.swapaxes(Uc, -1, -2))
        U[..., :-1, :-1] = Uc
    elif family == "continuation-ratio":
        # 1 - gamma_{s-1} as sum_{j >= s} pi_j (the s = 1 term is sum(pi), not the constant 1)
        prev_tail = np.cumsum(pi[..., ::-1], axis=-1)[..., ::-1][..., :-1]
        U[..., idx, idx] = pi[..., :-1] * tail / prev_tail
    elif family == "cumulative":
        p = np.maximum(pi, PI_FLOOR)
        gg = (gam * tail) ** 2
        U[..., idx, idx] = gg * (1.0 / p[..., :-1] + 1.0 / p[..., 1:])
        if J > 2:
            s = idx[:-1]
            off = -(gam[..., :-1] * gam[..., 1:] * tail[..., :-1] * tail[..., 1:]) / p[..., 1:-1]
            U[..., s, s + 1] = off
            U[..., s + 1, s] = off
    else:
        raise ValueError(family)
    return U


def dpi_deta_from_pi(family: str, pi: np.ndarray) -> np.ndarray:
    """Jacobian d pi / d eta^T (J x J); the last column is pi itself."""
    pi = np.asarray(pi, dtype=float)
    J = pi.shape[-1]
    shape = pi.shape[:-1]
    G = np.zeros(shape + (J, J))
    gam = np.cumsum(pi, axis=-1)[..., :-1]
    jj = np.arange(J)[:, None]
    ll = np.arange(J - 1)[None, :]
    if family == "baseline-category":
        delta = (jj == ll).astype(float)
        G[..., :, :-1] = pi[..., :, None] * (delta - pi[..., None, :-1])
    elif family == "adjacent-categories":
        G[..., :, :-1] = pi[..., :, None] * ((ll >= jj).astype(float) - gam[..., None, :])
    elif family == "continuation-ratio":
        tail_from = np.cumsum(pi[..., ::-1], axis=-1)[..., ::-1]   # sum_{j >= l} pi_j
        sig = pi[..., :-1] / tail_from[..., :-1]                   # P(Y = l | Y >= l)
        coef = np.where(ll == jj, 1.0 - sig[..., None, :],
                        np.where(ll < jj, -sig[..., None, :], 0.0))
        G[..., :, :-1] = pi[..., :, None] * coef
    elif family == "cumulative":
        g = gam * _tails(pi)
        idx = np.arange(J - 1)
        G[..., idx, idx] = g
        G[..., idx + 1, idx] = -g
    else:
        raise ValueError(family)
    G[..., :, J - 1] = pi
    return G


def du_dpi_from_pi(family: str, pi: np.ndarray) -> np.ndarray:
    """Partial derivatives of each u_st with respect to pi: array D with
    ``D[s, t, r] = d u_st / d pi_r`` for a single point (J x J x J)."""
    pi = np.asarray(pi, dtype=float)
    J = pi.shape[0]
    D = np.zeros((J, J, J))
    gam = np.concatenate([[0.0], np.cumsum(pi)[:-1], [1.0]])     # gamma_0 .. gamma_J
    tail = np.concatenate([np.cumsum(pi[::-1])[::-1], [0.0]])    # tail[s] = 1 - gamma_{s-1} (one-based s)
    r = np.arange(J)
    for s in range(J - 1):
        # one-based index of row s is s+1; gamma_s^{1-based} = gam[s+1], 1 - gamma_s = tail[s+1]
        gs, ts = gam[s + 1], tail[s + 1]
        if family == "baseline-category":
            D[s, s] = pi[s]
            D[s, s, s] = 1.0 - pi[s]
            for t in range(s + 1, J - 1):
                D[s, t, s] = -pi[t]
                D[s, t, t] = -pi[s]
        elif family == "adjacent-categories":
            D[s, s] = np.where(r <= s, ts, gs)
            for t in range(s + 1, J - 1):
                tt = tail[t + 1]
                D[s, t] = np.where(r <= s, tt, np.where(r <= t, 0.0, gs))
        elif family == "continuation-ratio":
            prev = tail[s]  # 1 - gamma_{s-1}
            D[s, s] = np.where(r < s, 0.0, np.where(r == s, ts ** 2, pi[s] ** 2) / prev ** 2)
        elif family == "cumulative":
            ps, pn = max(pi[s], PI_FLOOR), max(pi[s + 1], PI_FLOOR)
            uss = (gs * ts) ** 2 * (1.0 / ps + 1.0 / pn)
            base = np.where(r <= s, 2.0 / gs, 2.0 / ts)
            base[s] -= pn / (ps * (ps + pn))
            base[s + 1] -= ps / (pn * (ps + pn))
            D[s, s] = uss * base
            t = s + 1
            if t < J - 1:
                gt, tt, pt = gam[t + 1], tail[t + 1], pn
                row = np.empty(J)
                row[: s + 1] = -ts * tt * (1.0 + 2.0 * gs / pt)
                row[t] = -gs * tt * (1.0 - gs * tt / pt ** 2)
                row[t + 1:] = -gs * gt * (1.0 + 2.0 * tt / pt)
                D[s, t] = row
        else:
            raise ValueError(family)
    for s in range(J):
        for t in range(s + 1, J):
            D[t, s] = D[s, t]
    return D


class MlmSpec:
    """Multinomial logit model with per-category predictors h_j and shared h_c.

    Parameters are ordered (beta_1, ..., beta_{J-1}, zeta). Proportional-odds
    models use h_j = 1 for every category plus shared h_c.
    """

    kind = "mlm"

    def __init__(self, J: int, family: str,
                 category_predictors: Sequence[Predictors | Sequence[str]],
                 shared_predictors: Predictors | Sequence[str] = (),
                 theta: Sequence[float] = (), d: int | None = None):
        if J < 2:
            raise DimensionMismatch("an MLM needs J >= 2 categories")
        self.J = int(J)
        self.family = canonical_family(family)
        if len(category_predictors) != J - 1:
            raise DimensionMismatch(f"need {J - 1} category predictor lists, got {len(category_predictors)}")
        self.h = [h if isinstance(h, Predictors) else Predictors(h, d) for h in category_predictors]
        self.hc = shared_predictors if isinstance(shared_predictors, Predictors) \
            else Predictors(shared_predictors, d)
        self.sizes = [h.p for h in self.h] + [self.hc.p]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)
        self.p = int(sum(self.sizes))
        if self.p < 1:
            raise DimensionMismatch("model has no parameters")
        self.theta = np.asarray(theta, dtype=float)
        if self.theta.shape != (self.p,):
            raise DimensionMismatch(f"theta has length {self.theta.size}, expected p={self.p}")
        used = self.hc.variables().union(*(h.variables() for h in self.h))
        self.d = d if d is not None else (max(used) + 1 if used else 1)
        if used and max(used) >= self.d:
            raise DimensionMismatch(f"predictors use x{max(used) + 1} but d={self.d}")

    def __repr__(self):
        return (f"MlmSpec(J={self.J}, family={self.family!r}, h={self.h!r}, hc={self.hc!r}, "
                f"theta={self.theta.tolist()})")

    # -- model matrix and probabilities ---------------------------------------
    def _assemble(self, blocks, hc, n):
        J, p = self.J, self.p
        X = np.zeros((n, J, p))
        pc = self.hc.p
        for j in range(J - 1):
            X[:, j, self.offsets[j]:self.offsets[j + 1]] = blocks[j]
            if pc:
                X[:, j, p - pc:] = hc
        return X

    def model_matrix_batch(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self._assemble([h.values(pts) for h in self.h], self.hc.values(pts), pts.shape[0])

    def model_matrix(self, x) -> np.ndarray:
        return self.model_matrix_batch(np.asarray(x, dtype=float)[None, :])[0]

    def model_matrix_derivative_batch(self, points, i: int) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self._assemble([h.derivative(pts, i) for h in self.h],
                              self.hc.derivative(pts, i), pts.shape[0])

    def eta_batch(self, points) -> np.ndarray:
        """Linear predictors eta_1..eta_{J-1}, shape (n, J-1)."""
        return (self.model_matrix_batch(points) @ self.theta)[:, :-1]

    def feasible_batch(self, points) -> np.ndarray:
        eta = self.eta_batch(points)
        if self.family != "cumulative" or self.J == 2:
            return np.all(np.isfinite(eta), axis=1)
        return np.all(np.diff(eta, axis=1) > FEASIBILITY_MARGIN, axis=1)

    def feasible(self, x) -> bool:
        return bool(self.feasible_batch(np.asarray(x, dtype=float)[None, :])[0])

    def probabilities(self, x) -> CategoryProbabilities:
        x = np.asarray(x, dtype=float)
        if not self.feasible(x):
            raise InfeasiblePoint(f"cumulative predictors not increasing at x={x.tolist()}")
        pi = probabilities_from_eta(self.family, self.eta_batch(x[None, :])[0])
        return CategoryProbabilities(pi=pi, gamma=np.cumsum(pi)[:-1])

    def u_matrix(self, probs: CategoryProbabilities) -> np.ndarray:
        return u_from_pi(self.family, probs.pi)

    def dpi_deta(self, probs: CategoryProbabilities) -> np.ndarray:
        return dpi_deta_from_pi(self.family, probs.pi)

    def du_dpi(self, probs: CategoryProbabilities) -> np.ndarray:
        return du_dpi_from_pi(self.family, probs.pi)

    # -- information ----------------------------------------------------------
    def _pieces(self, pts):
        X = self.model_matrix_batch(pts)
        eta = (X @ self.theta)[:, :-1]
        pi = probabilities_from_eta(self.family, eta)
        return X, eta, pi

    def fisher_batch(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        bad = ~self.feasible_batch(pts)
        if bad.any():
            raise InfeasiblePoint(f"infeasible point {pts[bad][0].tolist()} for cumulative model")
        X, _, pi = self._pieces(pts)
        U = u_from_pi(self.family, pi)
        F = np.einsum("nji,njk,nkl->nil", X, U, X)
        return (F + np.swapaxes(F, 1, 2)) / 2.0

    def fisher_at_point(self, x) -> np.ndarray:
        return self.fisher_batch(np.asarray(x, dtype=float)[None, :])[0]

    def sensitivity_batch(self, points, F_inv) -> np.ndarray:
        """tr(F^{-1} F_x) via the generic trace; infeasible points give -inf."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ok = self.feasible_batch(pts)
        out = np.full(pts.shape[0], -np.inf)
        if ok.any():
            X, _, pi = self._pieces(pts[ok])
            U = u_from_pi(self.family, pi)
            B = np.einsum("njp,pq,nkq->njk", X, F_inv, X)
            out[ok] = np.einsum("njk,njk->n", U, B)
        return out

    def sensitivity(self, x, F_inv) -> float:
        x = np.asarray(x, dtype=float)
        if not self.feasible(x):
            raise InfeasiblePoint(f"cumulative predictors not increasing at x={x.tolist()}")
        return float(self.sensitivity_batch(x[None, :], F_inv)[0])

    def sensitivity_blocks(self, x, F_inv) -> float:
        """The same quantity assembled from the block expansion of F^{-1}."""
        x = np.asarray(x, dtype=float)
        probs = self.probabilities(x)
        U = self.u_matrix(probs)
        J = self.J
        hs = [h.values(x) for h in self.h]
        hc = self.hc.values(x)
        o = self.offsets

        def C(i, j):
            return F_inv[o[i]:o[i + 1], o[j]:o[j + 1]]

        total = 0.0
        for j in range(J - 1):
            total += U[j, j] * hs[j] @ C(j, j) @ hs[j]
        if self.hc.p:
            total += U[:J - 1, :J - 1].sum() * hc @ C(J - 1, J - 1) @ hc
            for i in range(J - 1):
                total += 2.0 * U[i, :J - 1].sum() * hs[i] @ C(i, J - 1) @ hc
        for i in range(J - 2):
            for j in range(i + 1, J - 1):
                total += 2.0 * U[i, j] * hs[i] @ C(i, j) @ hs[j]
        return float(total)

    def sensitivity_and_gradient(self, x, F_inv, k: int) -> tuple[float, np.ndarray]:
        x = np.asarray(x, dtype=float)
        if not self.feasible(x):
            return -math.inf, np.zeros(k)
        X, _, pi = self._pieces(x[None, :])
        X, pi = X[0], pi[0]
        U = u_from_pi(self.family, pi)
        G = dpi_deta_from_pi(self.family, pi)
        D = du_dpi_from_pi(self.family, pi)
        XA = X @ F_inv
        B = XA @ X.T
        value = float(np.sum(U * B))
        grad = np.empty(k)
        for i in range(k):
            dX = self.model_matrix_derivative_batch(x[None, :], i)[0]
            deta = dX @ self.theta          # last entry is 0
            dpi = G @ deta
            dU = D @ dpi
            grad[i] = 2.0 * np.sum(U * (dX @ XA.T)) + np.sum(dU * B)
        return value, grad

    def sensitivity_gradient(self, x, F_inv, k: int) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.feasible(x):
            raise InfeasiblePoint(f"cumulative predictors not increasing at x={x.tolist()}")
        return self.sensitivity_and_gradient(x, F_inv, k)[1]
