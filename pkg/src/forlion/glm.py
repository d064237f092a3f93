"""Generalized linear models: information weights nu(eta), per-point Fisher
information nu * h h^T, the sensitivity function and its gradient."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .design import Design, FactorSpace
from .errors import DimensionMismatch, DomainError, RankDeficientSpace
from .expr import Predictors, Var

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _logistic_terms(eta):
    # nu = e^eta / (1 + e^eta)^2 evaluated in log space; stable for any |eta|.
    log_nu = eta - 2.0 * np.logaddexp(0.0, eta)
    nu = np.exp(log_nu)
    return nu, -nu * np.tanh(eta / 2.0)


def _cloglog_terms(eta):
    # nu = e^{2 eta} / (exp(e^eta) - 1)
    e = np.exp(np.minimum(eta, 700.0))
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        log_denom = np.where(e > 30.0, e + np.log1p(-np.exp(-e)), np.log(np.expm1(e)))
        nu = np.exp(2.0 * eta - log_denom)
        ratio = np.where(e > 0.0, e / -np.expm1(-e), 1.0)  # e^eta * E / (E - 1)
    nu = np.where(np.isfinite(nu), nu, 0.0)
    return nu, nu * (2.0 - ratio)


def _probit_terms(eta):
    log_phi = -0.5 * eta ** 2 - _LOG_SQRT_2PI
    log_cdf = special.log_ndtr(eta)
    log_sf = special.log_ndtr(-eta)
    nu = np.exp(2.0 * log_phi - log_cdf - log_sf)
    # d/deta of log nu: -2 eta - phi/Phi + phi/(1 - Phi)
    dlog = -2.0 * eta - np.exp(log_phi - log_cdf) + np.exp(log_phi - log_sf)
    return nu, nu * dlog


def _cauchit_terms(eta):
    a = np.arctan(eta)
    q = np.pi ** 2 - 4.0 * a ** 2
    nu = 4.0 / ((1.0 + eta ** 2) ** 2 * q)
    nu_p = 16.0 / (1.0 + eta ** 2) ** 3 * (-eta / q + 2.0 * a / q ** 2)
    return nu, nu_p


def _t_terms(df):
    log_c = special.gammaln((df + 1) / 2) - special.gammaln(df / 2) - 0.5 * math.log(df * math.pi)

    def terms(eta):
        log_f = log_c - (df + 1) / 2 * np.log1p(eta ** 2 / df)
        cdf = special.stdtr(df, eta)
        sf = special.stdtr(df, -eta)
        f = np.exp(log_f)
        nu = f ** 2 / (cdf * sf)
        # f'(eta) = -(df + 1) eta / (df + eta^2) * f(eta)
        dlog = -2.0 * (df + 1) * eta / (df + eta ** 2) - f / cdf + f / sf
        return nu, nu * dlog

    return terms


@dataclass(frozen=True)
class Link:
    """A GLM family/link pair characterised by nu(eta) and nu'(eta).

    ``param`` holds the family constant where one exists: t degrees of
    freedom, gamma shape kappa, normal variance sigma2 or inverse-Gaussian
    lambda.
    """

    name: str
    param: float | None = None

    def __post_init__(self):
        if self.name not in LINKS:
            raise ValueError(f"unknown link {self.name!r}; choose from {sorted(LINKS)}")
        needs = LINKS[self.name]
        if needs is not None:
            if self.param is None:
                object.__setattr__(self, "param", needs)
            if not self.param > 0:
                raise ValueError(f"{self.name} link parameter must be positive")

    @property
    def positive_domain(self) -> bool:
        return self.name in ("gamma-reciprocal", "inverse-gaussian")

    def _check(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self.positive_domain and np.any(eta <= 0):
            raise DomainError(f"{self.name} link requires eta > 0")
        if not np.all(np.isfinite(eta)):
            raise DomainError("eta must be finite")
        return eta

    def terms(self, eta):
        """(nu(eta), nu'(eta)) evaluated elementwise."""
        eta = self._check(eta)
        n = self.name
        if n == "logit":
            return _logistic_terms(eta)
        if n == "probit":
            return _probit_terms(eta)
        if n in ("cloglog", "loglog"):
            return _cloglog_terms(eta)
        if n == "loglog-increasing":
            nu, nu_p = _cloglog_terms(-eta)
            return nu, -nu_p
        if n == "cauchit":
            return _cauchit_terms(eta)
        if n == "t":
            return _t_terms(self.param)(eta)
        if n == "poisson-log":
            e = np.exp(eta)
            return e, e
        if n == "gamma-reciprocal":
            return self.param * eta ** -2, -2.0 * self.param * eta ** -3
        if n == "normal-identity":
            return np.full_like(eta, 1.0 / self.param), np.zeros_like(eta)
        if n == "inverse-gaussian":
            return self.param / 4.0 * eta ** -1.5, -3.0 / 8.0 * self.param * eta ** -2.5
        raise AssertionError(n)

    def nu(self, eta):
        v = self.terms(eta)[0]
        return float(v) if np.ndim(v) == 0 else v

    def nu_prime(self, eta):
        v = self.terms(eta)[1]
        return float(v) if np.ndim(v) == 0 else v


# name -> default family parameter (None when the link has no parameter)
LINKS: dict[str, float | None] = {
    "logit": None,
    "probit": None,
    "cloglog": None,
    "loglog": None,
    "loglog-increasing": None,
    "cauchit": None,
    "t": 1.0,
    "poisson-log": None,
    "gamma-reciprocal": 1.0,
    "normal-identity": 1.0,
    "inverse-gaussian": 1.0,
}


def nu(link: Link | str, eta):
    return (Link(link) if isinstance(link, str) else link).nu(eta)


def nu_prime(link: Link | str, eta):
    return (Link(link) if isinstance(link, str) else link).nu_prime(eta)


class GlmSpec:
    """GLM with predictors h, parameters beta and a link.

    ``main_effects_prefix = k'`` declares h_i(x) = x_i for i <= k' with the
    remaining predictors free of continuous coordinates; the sensitivity
    gradient then uses the simplified main-effects form.
    """

    kind = "glm"

    def __init__(self, predictors: Predictors | Sequence[str], beta: Sequence[float],
                 link: Link | str = "logit", d: int | None = None,
                 main_effects_prefix: int | None = None, k: int | None = None):
        self.h = predictors if isinstance(predictors, Predictors) else Predictors(predictors, d)
        self.beta = np.asarray(beta, dtype=float)
        self.link = Link(link) if isinstance(link, str) else link
        self.p = self.h.p
        if self.p < 1:
            raise DimensionMismatch("GLM needs at least one predictor")
        if self.beta.shape != (self.p,):
            raise DimensionMismatch(f"beta has length {self.beta.size}, expected p={self.p}")
        used = self.h.variables()
        self.d = d if d is not None else (max(used) + 1 if used else 1)
        if used and max(used) >= self.d:
            raise DimensionMismatch(f"predictors use x{max(used) + 1} but d={self.d}")
        self.main_effects_prefix = main_effects_prefix
        if main_effects_prefix is not None:
            self._validate_main_effects(main_effects_prefix, k)

    def _validate_main_effects(self, kp: int, k: int | None):
        if k is not None and kp > k:
            raise DimensionMismatch(f"main_effects_prefix {kp} exceeds k={k}")
        for i in range(kp):
            if self.h.exprs[i] != Var(i):
                raise DimensionMismatch(f"main-effects prefix requires h{i + 1}(x) = x{i + 1}")
        n_cont = k if k is not None else kp
        for e in self.h.exprs[kp:]:
            if any(v < n_cont for v in e.variables()):
                raise DimensionMismatch("predictors after the main-effects prefix must not "
                                        "involve continuous coordinates")

    def __repr__(self):
        return f"GlmSpec(h={self.h!r}, beta={self.beta.tolist()}, link={self.link.name!r})"

    # -- kernels ------------------------------------------------------------
    def eta(self, points) -> np.ndarray:
        return self.h.values(points) @ self.beta

    def nu_values(self, points) -> np.ndarray:
        return self.link.nu(self.eta(np.atleast_2d(points)))

    def feasible_batch(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if not self.link.positive_domain:
            return np.ones(pts.shape[0], dtype=bool)
        return self.eta(pts) > 0

    def feasible(self, x) -> bool:
        return bool(self.feasible_batch(np.asarray(x, dtype=float)[None, :])[0])

    def fisher_at_point(self, x) -> np.ndarray:
        hx = self.h.values(np.asarray(x, dtype=float))
        return self.link.nu(hx @ self.beta) * np.outer(hx, hx)

    def fisher_batch(self, points) -> np.ndarray:
        H = self.h.values(np.atleast_2d(points))
        v = self.link.nu(H @ self.beta)
        return v[:, None, None] * H[:, :, None] * H[:, None, :]

    def sensitivity(self, x, F_inv) -> float:
        hx = self.h.values(np.asarray(x, dtype=float))
        return float(self.link.nu(hx @ self.beta) * (hx @ F_inv @ hx))

    def sensitivity_batch(self, points, F_inv) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        H = self.h.values(pts)
        eta = H @ self.beta
        if not self.link.positive_domain:
            return self.link.nu(eta) * ((H @ F_inv) * H).sum(axis=1)
        out = np.full(pts.shape[0], -np.inf)
        ok = eta > 0
        if ok.any():
            Hk = H[ok]
            out[ok] = self.link.nu(eta[ok]) * ((Hk @ F_inv) * Hk).sum(axis=1)
        return out

    def sensitivity_gradient(self, x, F_inv, k: int) -> np.ndarray:
        """Gradient of d(x, xi) with respect to the first ``k`` coordinates."""
        return self.sensitivity_and_gradient(x, F_inv, k)[1]

    def sensitivity_and_gradient(self, x, F_inv, k: int) -> tuple[float, np.ndarray]:
        x = np.asarray(x, dtype=float)
        hx = self.h.values(x)
        eta = hx @ self.beta
        if self.link.positive_domain and eta <= 0:
            return -math.inf, np.zeros(k)
        nu_v, nu_p = self.link.terms(eta)
        Ah = F_inv @ hx
        quad = hx @ Ah
        kp = self.main_effects_prefix
        if kp is not None:
            g = np.zeros(k)
            m = min(kp, k)
            g[:m] = nu_p * quad * self.beta[:m] + 2.0 * nu_v * Ah[:m]
        else:
            Jh = self.h.jacobian(x, k)
            g = nu_p * quad * (Jh.T @ self.beta) + 2.0 * nu_v * (Jh.T @ Ah)
        return float(nu_v * quad), g


def minimally_supported_initial(spec: GlmSpec, space: FactorSpace, seed=0,
                                max_tries: int = 1000, vertex_cap: int = 4096) -> Design:
    """p distinct points with a full-rank model matrix, uniform weights 1/p.

    Candidates come from the vertex set prod{a_j, b_j} (sampled when there are
    more than ``vertex_cap`` vertices); if the vertex rows cannot reach rank p
    the candidates are drawn from the full space instead.
    """
    rng = np.random.default_rng(seed)
    p = spec.p
    d = space.d
    if 2 ** d <= vertex_cap:
        cands = space.vertices()
    else:
        cands = np.unique(np.array([space.sample(rng, vertices_only=True)
                                    for _ in range(vertex_cap)]), axis=0)
    ok = spec.feasible_batch(cands)
    cands = cands[ok]
    if cands.shape[0] < p or np.linalg.matrix_rank(spec.h.values(cands)) < p:
        cands = None
    for _ in range(max_tries):
        if cands is not None:
            pts = _greedy_full_rank(spec, cands[rng.permutation(cands.shape[0])], p)
        else:
            draws = np.array([space.sample(rng) for _ in range(4 * p)])
            draws = draws[spec.feasible_batch(draws)]
            pts = _greedy_full_rank(spec, draws, p)
        if pts is not None:
            return Design.uniform(pts)
    raise RankDeficientSpace(f"no full-rank set of p={p} points found in {max_tries} draws")


def _greedy_full_rank(spec: GlmSpec, cands: np.ndarray, p: int) -> np.ndarray | None:
    """Scan candidates in order, keeping each one that raises the rank."""
    chosen: list[np.ndarray] = []
    rows: list[np.ndarray] = []
    for x in cands:
        hx = spec.h.values(x)
        trial = np.array(rows + [hx])
        if np.linalg.matrix_rank(trial) == len(rows) + 1:
            chosen.append(x)
            rows.append(hx)
            if len(rows) == p:
                return np.array(chosen)
    return None


def is_full_rank(spec: GlmSpec, points) -> bool:
    return np.linalg.matrix_rank(spec.h.values(np.atleast_2d(points))) == spec.p

