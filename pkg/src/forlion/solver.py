"""The ForLion outer loop: merge, lift-one, delete, new-point search, stop.

``solve`` alternates weight optimization on the current support with a
search for the point of largest sensitivity over every discrete level
combination. It stops once that maximum is within ``eps`` of ``p``, which by
the equivalence theorem certifies D-optimality.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np
from scipy import ndimage

from . import boxopt
from .design import (Design, DistanceMetric, FactorSpace, distance, information_matrix, inv_psd,
                     log_det, merge_close_points, relative_efficiency, renormalize)
from .errors import (AllStartsInvalid, ComboExplosion, DimensionMismatch, InitFailure,
                     RankDeficientSpace, SingularDesign)
from .glm import minimally_supported_initial
from .liftone import alpha_new_point_log, liftone

log = logging.getLogger(__name__)

INIT_STRATEGIES = ("auto", "vertices", "full-space", "minimally-supported")


@dataclass
class SolverConfig:
    delta: float = 1e-6
    eps: float = 1e-12
    metric: DistanceMetric | str = DistanceMetric.EUCLIDEAN
    starts_per_combo: int = 3
    max_outer_iter: int = 500
    seed: int = 0
    glm_fast_path: bool = True
    init: Union[str, Design] = "auto"
    box_tol: float = 1e-8
    box_max_iter: int = 200
    support_starts: bool = True
    screen_points: int = 1024
    screen_starts: int = 8
    polish_support: bool = True
    stall_window: int = 8
    combo_cap: int = 100_000
    max_init_tries: int = 1000
    workers: int = 1
    cleanup: bool = False
    relax_discrete: bool = False

    def __post_init__(self):
        if not self.delta > 0 or not self.eps > 0:
            raise ValueError("delta and eps must be positive")
        self.metric = DistanceMetric(self.metric)
        if isinstance(self.init, str) and self.init not in INIT_STRATEGIES:
            raise ValueError(f"init must be one of {INIT_STRATEGIES} or a Design")
        if self.starts_per_combo < 0 or self.max_outer_iter < 1 or self.workers < 1:
            raise ValueError("starts_per_combo >= 0, max_outer_iter >= 1 and workers >= 1 required")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    m: int
    log_det: float
    max_sensitivity: float


@dataclass
class SolveReport:
    design: Design
    log_det: float
    max_sensitivity: float
    iterations: int
    converged: bool
    trace: list[IterationRecord] = field(default_factory=list)
    argmax: np.ndarray | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "log_det": self.log_det,
            "max_sensitivity": self.max_sensitivity,
            "iterations": self.iterations,
            "converged": self.converged,
            "support_size": self.design.m,
            "trace": [{"iteration": r.iteration, "m": r.m, "log_det": r.log_det,
                       "max_sensitivity": r.max_sensitivity} for r in self.trace],
        }


def _is_glm(model) -> bool:
    return getattr(model, "kind", None) == "glm"


def _check_dims(model, space: FactorSpace):
    if getattr(model, "d", space.d) != space.d:
        raise DimensionMismatch(f"model uses d={model.d} factors but the space has {space.d}")


# -- initialization ------------------------------------------------------------
def initial_design(model, space: FactorSpace, config: SolverConfig) -> Design:
    """Starting design with distinct points and nonsingular information."""
    _check_dims(model, space)
    if isinstance(config.init, Design):
        d0 = config.init
        if d0.d != space.d:
            raise DimensionMismatch("user-supplied initial design has the wrong dimension")
        if log_det(information_matrix(d0, model)) == -math.inf:
            raise InitFailure("user-supplied initial design is singular")
        return d0
    strategy = config.init
    if strategy == "minimally-supported" or (strategy == "auto" and _is_glm(model)
                                              and config.glm_fast_path):
        if not _is_glm(model):
            raise ValueError("minimally-supported initialization needs a GLM")
        try:
            return minimally_supported_initial(model, space, seed=config.seed,
                                               max_tries=config.max_init_tries)
        except RankDeficientSpace as exc:
            raise InitFailure(str(exc), best_rank=None) from exc
    return _sequential_init(model, space, config, vertices_first=strategy != "full-space")


def _sequential_init(model, space, config, vertices_first: bool) -> Design:
    """Draw points one at a time until the uniform design is nonsingular.

    Vertex draws switch to full-space draws once no new vertex can be added
    (for example a one-factor space has only two vertices).
    """
    rng = np.random.default_rng(config.seed)
    pts: list[np.ndarray] = []
    F = np.zeros((model.p, model.p))
    best_rank = 0
    vertices_only = vertices_first
    misses = 0
    for _ in range(config.max_init_tries):
        x = space.sample(rng, vertices_only=vertices_only)
        if not model.feasible_batch(x[None, :])[0] or \
                any(distance(x, y, config.metric, space) < config.delta for y in pts):
            misses += 1
            if vertices_only and misses >= 20:
                vertices_only = False
            continue
        misses = 0
        pts.append(x)
        F = F + model.fisher_batch(x[None, :])[0]
        best_rank = max(best_rank, int(np.linalg.matrix_rank(F)))
        if log_det(F / len(pts)) > -math.inf:
            return Design.uniform(np.array(pts))
    raise InitFailure(f"no nonsingular initial design after {config.max_init_tries} draws "
                      f"(best rank {best_rank} of {model.p})", best_rank=best_rank)


# -- new-point search ----------------------------------------------------------
def _combos(space: FactorSpace, cap: int) -> list[tuple[float, ...]]:
    n = space.n_combos()
    if n > cap:
        raise ComboExplosion(f"{n} discrete level combinations exceed the cap of {cap}")
    return list(space.combos())


def _search_combo(model, space, F_inv, config, combo, rng, support) -> tuple[np.ndarray, float]:
    k = space.k
    lo, hi = space.lower[:k], space.upper[:k]
    tail = np.asarray(combo, dtype=float)

    def objective(xc):
        return model.sensitivity_and_gradient(np.concatenate([xc, tail]), F_inv, k)

    starts = boxopt.default_starts(lo, hi, config.starts_per_combo, rng)
    own = np.empty((0, k))
    if support is not None and support.shape[0]:
        own = support[np.all(support[:, k:] == tail, axis=1)] if tail.size else support
        own = np.clip(own[:, :k], lo, hi)
    if config.support_starts:
        starts.extend(own)
    if config.screen_points and config.screen_starts:
        starts.extend(_screen(model, F_inv, lo, hi, tail, config, own))
    problem = boxopt.BoxProblem(lo, hi, objective, starts)
    try:
        res = boxopt.maximize(problem, tol=config.box_tol, max_iter=config.box_max_iter)
    except AllStartsInvalid:
        # the feasible part of this box may be small; retry with more draws
        extra = [rng.uniform(lo, hi) for _ in range(50)]
        pts = np.array([np.concatenate([e, tail]) for e in extra])
        ok = model.feasible_batch(pts)
        if not ok.any():
            return np.concatenate([(lo + hi) / 2, tail]), -math.inf
        problem = boxopt.BoxProblem(lo, hi, objective, [e for e, f in zip(extra, ok) if f])
        res = boxopt.maximize(problem, tol=config.box_tol, max_iter=config.box_max_iter)
    return np.concatenate([res.x, tail]), float(res.value)


def _screen(model, F_inv, lo, hi, tail, config, exclude) -> list[np.ndarray]:
    """Best local maxima of a coarse grid, used as extra starts.

    The sensitivity surface is often multimodal; a handful of random starts
    can miss the global maximum and stop the outer loop too early.
    """
    k = lo.size
    n = max(2, int(math.floor(config.screen_points ** (1.0 / k) + 1e-9)))
    axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
    pts = np.hstack([mesh, np.broadcast_to(tail, (mesh.shape[0], tail.size))])
    d = model.sensitivity_batch(pts, F_inv)
    grid = np.where(np.isfinite(d), d, -np.inf).reshape((n,) * k)
    peaks = np.flatnonzero((grid == ndimage.maximum_filter(grid, size=3, mode="nearest"))
                           & np.isfinite(grid))
    if exclude.shape[0]:
        # grid points sitting on the support already serve as starts
        scale = hi - lo
        gap = np.abs(mesh[peaks, None, :] - exclude[None, :, :]) / scale
        peaks = peaks[~np.any(np.all(gap < 1e-9, axis=2), axis=1)]
    order = peaks[np.argsort(-d[peaks], kind="stable")][:config.screen_starts]
    return [mesh[i] for i in order]


def new_point_search(model, space: FactorSpace, F_inv: np.ndarray, config: SolverConfig,
                     iteration: int = 0, support: np.ndarray | None = None
                     ) -> tuple[np.ndarray, float]:
    """Point of largest sensitivity over every discrete combination.

    Each combination gets its own generator seeded from (seed, iteration,
    combination index), so results do not depend on thread scheduling.
    """
    combos = _combos(space, config.combo_cap)
    if space.k == 0:
        pts = np.array(combos, dtype=float)
        d = model.sensitivity_batch(pts, F_inv)
        i = int(np.argmax(d))
        return pts[i], float(d[i])

    def task(ic):
        i, combo = ic
        rng = np.random.default_rng([config.seed, iteration, i])
        return _search_combo(model, space, F_inv, config, combo, rng, support)

    if config.workers > 1 and len(combos) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(task, enumerate(combos)))
    else:
        results = [task(ic) for ic in enumerate(combos)]
    best_x, best_d = results[0]
    for x, d in results[1:]:
        if d > best_d:
            best_x, best_d = x, d
    return best_x, best_d


# -- main loop -----------------------------------------------------------------
def _merge(design, config, space, model):
    merged = merge_close_points(design, config.metric, config.delta, space)
    if merged is not design and log_det(information_matrix(merged, model)) == -math.inf:
        log.warning("merging produced a singular design; keeping the unmerged support")
        return design
    return merged


def polish_support(design: Design, model, space: FactorSpace, eps: float = 1e-12,
                   tol: float = 1e-10, max_iter: int = 200) -> Design:
    """Jointly move the continuous coordinates of the support uphill in log f.

    Weights are re-optimized by lift-one at every trial support, so by the
    envelope theorem the gradient with respect to point i is
    ``w_i * grad_x d(x_i)``. Discrete coordinates stay fixed.
    """
    k, m = space.k, design.m
    if k == 0 or m == 0:
        return design
    tails = design.points[:, k:]
    lo = np.tile(space.lower[:k], m)
    hi = np.tile(space.upper[:k], m)
    state = {"w": design.weights.copy()}

    def objective(z):
        pts = np.hstack([z.reshape(m, k), tails])
        if not model.feasible_batch(pts).all():
            return -math.inf, np.zeros_like(z)
        try:
            w = liftone(pts, state["w"], model, eps)
        except SingularDesign:
            return -math.inf, np.zeros_like(z)
        F = information_matrix(Design(pts, renormalize(w)), model)
        value = log_det(F)
        if value == -math.inf:
            return -math.inf, np.zeros_like(z)
        state["w"] = renormalize(w)
        F_inv = inv_psd(F)
        grad = np.concatenate([wi * model.sensitivity_and_gradient(x, F_inv, k)[1]
                               for wi, x in zip(state["w"], pts)])
        return value, grad

    start = design.points[:, :k].ravel()
    res = boxopt.ascend(objective, start, lo, hi, tol=tol, max_iter=max_iter)
    if res.value == -math.inf:
        return design
    pts = np.hstack([res.x.reshape(m, k), tails])
    w = liftone(pts, design.weights, model, eps)
    return Design(pts, renormalize(w))


def _stalled(trace: list[IterationRecord], window: int, p: int) -> bool:
    """True when the excess max d - p has not halved over the last ``window`` iterations."""
    if window <= 0 or len(trace) <= window:
        return False
    old = min(r.max_sensitivity for r in trace[:-window]) - p
    new = min(r.max_sensitivity for r in trace[-window:]) - p
    return new > 0.5 * old


def solve(model, space: FactorSpace, config: SolverConfig | None = None) -> SolveReport:
    config = config or SolverConfig()
    _check_dims(model, space)
    if config.relax_discrete and space.discrete:
        return _solve_relaxed(model, space, config)
    design = initial_design(model, space, config)
    p = model.p
    fast = _is_glm(model) and config.glm_fast_path
    trace: list[IterationRecord] = []
    prev = None
    converged = False
    x_star, d_star, logf = None, math.inf, -math.inf
    last_polish = -math.inf
    for t in range(config.max_outer_iter):
        before = log_det(information_matrix(design, model))
        design = _merge(design, config, space, model)
        after = log_det(information_matrix(design, model))
        if after < before - 10 * config.delta * p * (1 + abs(before)):
            log.warning("iteration %d: merging lowered log f from %.12g to %.12g", t, before, after)
        w = liftone(design.points, design.weights, model, config.eps)
        design = Design(design.points, renormalize(w)).drop_zero_weights()
        if config.polish_support and space.k and t - last_polish > config.stall_window \
                and _stalled(trace, config.stall_window, p):
            # merging a zero-weight newcomer can cycle near an optimum, and near-duplicate
            # points split weight without improving much; settle the
            # support locations directly, then merge whatever coincides
            log.debug("iteration %d: progress stalled, polishing support locations", t)
            design = polish_support(design, model, space, config.eps)
            design = _merge(design, config, space, model)
            w = liftone(design.points, design.weights, model, config.eps)
            design = Design(design.points, renormalize(w)).drop_zero_weights()
            last_polish = t
        F = information_matrix(design, model)
        logf = log_det(F)
        if prev is not None and logf < prev - 1e-9 * max(1.0, abs(prev)) and after >= before:
            log.warning("iteration %d: log f decreased from %.12g to %.12g", t, prev, logf)
        F_inv = inv_psd(F)
        x_star, d_star = new_point_search(model, space, F_inv, config, t, design.points)
        trace.append(IterationRecord(t, design.m, logf, d_star))
        log.debug("iteration %d: m=%d log f=%.12g max d=%.12g", t, design.m, logf, d_star)
        if d_star <= p + config.eps:
            converged = True
            break
        prev = logf
        if fast:
            F_half = (F + model.fisher_batch(x_star[None, :])[0]) / 2.0
            alpha = alpha_new_point_log(log_det(F_half), logf, p)
            w = np.append((1.0 - alpha) * design.weights, alpha)
        else:
            w = np.append(design.weights, 0.0)
        design = Design(np.vstack([design.points, x_star]), renormalize(w))
    else:
        # the loop ran out with an appended point; optimize weights once more for the report
        w = liftone(design.points, design.weights, model, config.eps)
        design = Design(design.points, renormalize(w)).drop_zero_weights()
        F = information_matrix(design, model)
        logf = log_det(F)
        x_star, d_star = new_point_search(model, space, inv_psd(F), config,
                                          config.max_outer_iter, design.points)
    report = SolveReport(design, logf, d_star, len(trace), converged, trace, x_star)
    if config.cleanup:
        report = cleanup(report, model)
    return report


def cleanup(report: SolveReport, model, threshold: float = 0.005,
            min_efficiency: float = 0.9999) -> SolveReport:
    """Drop points with weight below ``threshold`` if efficiency stays high."""
    design = report.design
    keep = design.weights >= threshold
    if keep.all() or not keep.any():
        return report
    trimmed = Design.from_unnormalized(design.points[keep], design.weights[keep])
    F = information_matrix(trimmed, model)
    if log_det(F) == -math.inf or relative_efficiency(trimmed, design, model) < min_efficiency:
        return report
    return SolveReport(trimmed, log_det(F), report.max_sensitivity, report.iterations,
                       report.converged, report.trace, report.argmax)


def _solve_relaxed(model, space: FactorSpace, config: SolverConfig) -> SolveReport:
    """Treat discrete factors as intervals, then snap to levels and reweight once."""
    relaxed = FactorSpace(continuous=space.continuous + tuple((lv[0], lv[-1]) for lv in space.discrete))
    sub = SolverConfig(**{**config.__dict__, "relax_discrete": False, "cleanup": False,
                          "init": config.init if isinstance(config.init, Design) else "auto"})
    rep = solve(model, relaxed, sub)
    snapped: dict[tuple, float] = {}
    for x, w in zip(rep.design.points, rep.design.weights):
        key = tuple(space.snap(x))
        snapped[key] = snapped.get(key, 0.0) + float(w)
    pts = np.array(list(snapped))
    design = Design(pts, renormalize(np.array(list(snapped.values()))))
    if log_det(information_matrix(design, model)) == -math.inf:
        raise SingularDesign("rounding the relaxed design to levels made it singular")
    w = liftone(design.points, design.weights, model, config.eps)
    design = Design(design.points, renormalize(w)).drop_zero_weights()
    F = information_matrix(design, model)
    x_star, d_star = new_point_search(model, space, inv_psd(F), config, 0, design.points)
    report = SolveReport(design, log_det(F), d_star, rep.iterations, d_star <= model.p + config.eps,
                         rep.trace, x_star)
    return cleanup(report, model) if config.cleanup else report


# -- verification --------------------------------------------------------------
def scan_grid(space: FactorSpace, grid_density: int) -> list[np.ndarray]:
    """Per-dimension linspace for the continuous factors."""
    if grid_density < 2:
        raise ValueError("grid_density must be at least 2")
    return [np.linspace(a, b, grid_density) for a, b in space.continuous]


def _grid_chunks(axes, combo, chunk: int = 200_000):
    """Yield the tensor grid in blocks, each block fixing the leading coordinate(s)."""
    k = len(axes)
    tail = np.asarray(combo, dtype=float)
    sizes = [len(a) for a in axes]
    # fix as few leading axes as needed so that a block holds at most ~5 chunks
    lead = 0
    while lead < k - 1 and math.prod(sizes[lead:]) > 5 * chunk:
        lead += 1
    rest = np.stack(np.meshgrid(*axes[lead:], indexing="ij"), axis=-1).reshape(-1, k - lead)
    block = np.empty((rest.shape[0], k + tail.size))
    block[:, lead:k] = rest
    block[:, k:] = tail
    for idx in np.ndindex(*sizes[:lead]):
        for j, i in enumerate(idx):
            block[:, j] = axes[j][i]
        yield block.copy()


def sensitivity_scan(design: Design, model, space: FactorSpace, grid_density: int):
    """Yield (combo_index, points, d) blocks over the full grid."""
    F = information_matrix(design, model)
    if log_det(F) == -math.inf:
        raise SingularDesign("design has singular information matrix")
    F_inv = inv_psd(F)
    axes = scan_grid(space, grid_density) if space.k else []
    for ci, combo in enumerate(_combos(space, 10 ** 9)):
        if space.k == 0:
            pts = np.asarray(combo, dtype=float)[None, :]
            yield ci, pts, model.sensitivity_batch(pts, F_inv)
            continue
        for pts in _grid_chunks(axes, combo):
            yield ci, pts, model.sensitivity_batch(pts, F_inv)


def verify_optimality(design: Design, model, space: FactorSpace, grid_density: int = 100,
                      polish: bool = True, box_tol: float = 1e-10) -> tuple[float, np.ndarray]:
    """Largest sensitivity over a grid (plus the support), polished by local ascent."""
    _check_dims(model, space)
    F = information_matrix(design, model)
    if log_det(F) == -math.inf:
        raise SingularDesign("design has singular information matrix")
    F_inv = inv_psd(F)
    k = space.k
    best: dict[int, tuple[float, np.ndarray]] = {}
    for ci, pts, d in sensitivity_scan(design, model, space, grid_density):
        i = int(np.argmax(d))
        if ci not in best or d[i] > best[ci][0]:
            best[ci] = (float(d[i]), pts[i].copy())
    d_support = model.sensitivity_batch(design.points, F_inv)
    max_d, arg = -math.inf, None
    combos = _combos(space, 10 ** 9)
    for ci, (dv, x) in best.items():
        cands = [(dv, x)]
        tail = np.asarray(combos[ci], dtype=float)
        for xs, ds in zip(design.points, d_support):
            if np.array_equal(xs[k:], tail):
                cands.append((float(ds), xs.copy()))
        if polish and k:
            lo, hi = space.lower[:k], space.upper[:k]

            def objective(xc, tail=tail):
                return model.sensitivity_and_gradient(np.concatenate([xc, tail]), F_inv, k)

            starts = [c[1][:k] for c in cands if c[0] > -math.inf]
            if starts:
                res = boxopt.maximize(boxopt.BoxProblem(lo, hi, objective, starts), tol=box_tol)
                cands.append((float(res.value), np.concatenate([res.x, tail])))
        for dv, x in cands:
            if dv > max_d:
                max_d, arg = dv, x
    return max_d, arg
