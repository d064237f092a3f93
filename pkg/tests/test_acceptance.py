"""Acceptance criteria, one test each.

Every test records a single ``criterion N PASS|FAIL`` line (printed in the
"acceptance criteria" section of the pytest summary) and then asserts the
same checks. Tolerances are the ones the criteria state; nothing is relaxed.
"""

import math
import time

import numpy as np
import pytest

from forlion.design import Design, information_matrix, inv_psd, log_det, relative_efficiency, sensitivities
from forlion.glm import GlmSpec
from forlion.liftone import alpha_new_point_log, golden_section_max, liftone_glm, log_objective
from forlion.mlm import FAMILIES, MlmSpec
from forlion.problem import load_problem
from forlion.solver import sensitivity_scan, solve, verify_optimality

import conftest
from conftest import PROBLEMS, central_difference, fixture_design

SCAN_DENSITY = 1000


def record(number, title, checks):
    """checks: list of (label, ok, detail). Records one line and asserts all ok."""
    ok = all(c[1] for c in checks)
    parts = "; ".join(f"{label} {'ok' if good else 'FAILED'} ({detail})" for label, good, detail in checks)
    conftest.ACCEPTANCE.append(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {parts}")
    failed = [f"{label}: {detail}" for label, good, detail in checks if not good]
    assert ok, "; ".join(failed)


class Run:
    def __init__(self, name):
        self.problem = load_problem(PROBLEMS / f"{name}.ini")
        start = time.perf_counter()
        self.report = solve(self.problem.model, self.problem.space, self.problem.config)
        self.seconds = time.perf_counter() - start

    @property
    def design(self):
        return self.report.design.sorted_by_coords()


_RUNS: dict[str, Run] = {}


def run(name) -> Run:
    if name not in _RUNS:
        _RUNS[name] = Run(name)
    return _RUNS[name]


def _reference_match(run_, points, weights, pt_tol, w_tol, runtime_cap=None):
    d = run_.design
    checks = [("support size", d.m == len(points), f"{d.m} points, expected {len(points)}")]
    if d.m == len(points):
        dp = np.max(np.abs(d.points[:, 0] - points))
        dw = np.max(np.abs(d.weights - weights))
        checks.append(("points", dp <= pt_tol, f"{np.round(d.points[:, 0], 3).tolist()}, max error {dp:.3g}"))
        checks.append(("weights", dw <= w_tol, f"{np.round(d.weights, 4).tolist()}, max error {dw:.3g}"))
    if runtime_cap is not None:
        checks.append(("runtime", run_.seconds < runtime_cap, f"{run_.seconds:.1f} s"))
    return checks


def test_criterion_01_house_flies_narrow():
    r = run("house_flies")
    checks = _reference_match(r, [80.00, 122.78, 157.37], [0.316, 0.342, 0.342], 0.5, 0.005, 60)
    max_d, _ = verify_optimality(r.report.design, r.problem.model, r.problem.space, SCAN_DENSITY)
    checks.append(("verify", max_d <= 5 + 1e-4, f"max d = {max_d:.10g}"))
    checks.append(("converged", r.report.converged, f"{r.report.iterations} iterations"))
    record(1, "house flies on [80, 200]", checks)


def test_criterion_02_house_flies_wide():
    r = run("house_flies_wide")
    checks = _reference_match(r, [0.00, 103.56, 149.26], [0.203, 0.398, 0.399], 0.5, 0.005)
    checks.append(("converged", r.report.converged, f"{r.report.iterations} iterations"))
    record(2, "house flies on [0, 200]", checks)


def test_criterion_03_relative_efficiencies():
    narrow, wide = run("house_flies"), run("house_flies_wide")
    model = narrow.problem.model
    checks = []
    for label, fixture, ref, target in [("xi_u vs xi*", "hf_uniform.csv", narrow, 0.8279),
                                        ("xi_20 vs xi*", "hf_grid20.csv", narrow, 0.9968),
                                        ("xi_a vs xi*'", "hf_ai.csv", wide, 0.9981)]:
        e = relative_efficiency(fixture_design(fixture), ref.report.design, model)
        checks.append((label, abs(e - target) <= 1e-3, f"{e:.6f} vs {target}"))
    record(3, "relative efficiencies", checks)


def test_criterion_04_stufken():
    r = run("stufken")
    d = r.design
    ref = fixture_design("stufken_forlion.csv").sorted_by_coords()
    xi_o = fixture_design("stufken_xi_o.csv")
    checks = [("support size", d.m == 8, f"{d.m} points with weights {[float(f'{v:.3g}') for v in d.weights]}")]
    dw = np.max(np.abs(d.weights - 0.125))
    checks.append(("weights", dw <= 1e-3, f"max |w - 0.125| = {dw:.4g}"))
    if d.m == ref.m:
        dx = np.max(np.abs(d.points[:, 2] - ref.points[:, 2]))
        checks.append(("x3", dx <= 0.01, f"max error {dx:.4g}"))
    else:
        checks.append(("x3", False, f"cannot pair {d.m} solved rows with {ref.m} reference rows; "
                                    f"solved x3 = {np.round(d.points[:, 2], 4).tolist()}"))
    eff = relative_efficiency(r.report.design, xi_o, r.problem.model)
    checks.append(("efficiency vs xi_o", eff >= 0.99999, f"{eff:.10f}"))
    record(4, "logistic model with three continuous factors", checks)


def test_criterion_05_esd():
    r = run("esd")
    eff = relative_efficiency(r.report.design, fixture_design("esd_qpso.csv"), r.problem.model)
    m = r.report.design.m
    record(5, "ESD mixed-factor logistic model", [
        ("efficiency vs xi_o", eff >= 1.0005, f"{eff:.6f}"),
        ("support size", 13 <= m <= 15, f"{m} points"),
        ("runtime", r.seconds < 300, f"{r.seconds:.1f} s"),
        ("converged", r.report.converged, f"{r.report.iterations} iterations"),
    ])


@pytest.mark.parametrize("name", ["house_flies", "house_flies_wide", "stufken", "esd"])
def test_criterion_06_equivalence_scan(name):
    r = run(name)
    model, space, design = r.problem.model, r.problem.space, r.report.design
    p = model.p
    top, where, n = -math.inf, None, 0
    for _, pts, d in sensitivity_scan(design, model, space, SCAN_DENSITY):
        i = int(np.argmax(d))
        n += d.size
        if d[i] > top:
            top, where = float(d[i]), pts[i].copy()
    F_inv = inv_psd(information_matrix(design, model))
    heavy = design.weights > 0.01
    dev = np.max(np.abs(model.sensitivity_batch(design.points[heavy], F_inv) - p))
    checks = [("scan", r.report.converged and top <= p + 1e-3,
               f"{n} grid points, max d = {top:.8g} at {np.round(where, 4).tolist()}, p = {p}"),
              ("support", dev <= 1e-3, f"max |d - p| = {dev:.3g} over {int(heavy.sum())} points")]
    record(6, f"equivalence scan, {name}", checks)


def _random_glm(r):
    link = ["logit", "probit", "cloglog", "loglog", "cauchit", "t", "poisson-log",
            "normal-identity"][r.integers(8)]
    preds = ["1", "x1", "x2", "x3", "x1*x2", "x2^2", "x1*x3", "x3^3"]
    beta = r.normal(scale=0.4, size=len(preds))
    return GlmSpec(preds, beta, link, d=3)


def _random_mlm(r):
    family = FAMILIES[r.integers(4)]
    J = int(r.integers(3, 6))
    if family == "cumulative":
        theta = np.concatenate([np.sort(r.normal(size=J - 1)) + 1.5 * np.arange(J - 1),
                                r.normal(scale=0.4, size=3)])
        return MlmSpec(J, family, [["1"]] * (J - 1), ["x1", "x2*x3", "x3^2"], theta, d=3)
    cats = [["1", "x1", "x2"]] * (J - 1)
    theta = np.concatenate([r.normal(scale=0.5, size=3 * (J - 1)), r.normal(scale=0.3, size=2)])
    return MlmSpec(J, family, cats, ["x3", "x1*x3^2"], theta, d=3)


@pytest.mark.parametrize("kind", ["glm", "mlm"])
def test_criterion_07_gradients(kind):
    r = np.random.default_rng(7 if kind == "glm" else 77)
    instances = failures = 0
    worst = 0.0
    while instances < 50:
        model = _random_glm(r) if kind == "glm" else _random_mlm(r)
        pts = r.uniform(-1, 1, size=(model.p + 4, 3))
        pts = pts[model.feasible_batch(pts)]
        F = information_matrix(Design.uniform(pts), model)
        x = r.uniform(-0.95, 0.95, size=3)
        if log_det(F) == -math.inf or not model.feasible(x):
            continue
        F_inv = inv_psd(F)
        grad = model.sensitivity_gradient(x, F_inv, 3)
        instances += 1
        for i in range(3):
            fd = central_difference(lambda z: model.sensitivity(z, F_inv), x, i)
            err = abs(grad[i] - fd) / max(abs(fd), 1e-8 / 1e-5)
            worst = max(worst, err)
            if abs(grad[i] - fd) > max(1e-5 * abs(fd), 1e-8):
                failures += 1
    record(7, f"sensitivity gradients, {kind}", [
        ("finite differences", failures == 0,
         f"{instances} instances, {failures} failing coordinates, worst relative error {worst:.2g}")])


def test_criterion_08_trace_identity():
    r = np.random.default_rng(8)
    links = ["logit", "probit", "cloglog", "loglog", "cauchit", "t", "poisson-log",
             "gamma-reciprocal", "normal-identity", "inverse-gaussian"]
    worst, count = 0.0, 0
    for i in range(100):
        if i % 2 == 0:
            link = links[(i // 2) % len(links)]
            beta = r.normal(scale=0.4, size=4)
            if link in ("gamma-reciprocal", "inverse-gaussian"):
                beta[0] = 3.0  # keep eta positive on the unit cube
            model = GlmSpec(["1", "x1", "x2", "x1*x2"], beta, link, d=3)
        else:
            model = _random_mlm(r)
        pts = r.uniform(-1, 1, size=(model.p + int(r.integers(0, 6)), 3))
        pts = pts[model.feasible_batch(pts)]
        design = Design.from_unnormalized(pts, r.uniform(0.05, 1, size=pts.shape[0]))
        if log_det(information_matrix(design, model)) == -math.inf:
            continue
        count += 1
        total = float(design.weights @ sensitivities(design, model))
        worst = max(worst, abs(total - model.p))
    record(8, "trace identity", [("sum w d = p", worst <= 1e-8 and count == 100,
                                  f"{count} designs, worst deviation {worst:.2g}")])


def _golden_liftone(Fs, w, sweeps=400, tol=1e-14):
    """Plain coordinate ascent: each weight re-optimized by golden section."""
    w = w.copy()
    current = log_objective(Fs, w)
    for _ in range(sweeps):
        start = current
        for i in range(len(w)):
            rest = w.copy()
            rest[i] = 0.0
            rest /= rest.sum()

            def g(z, rest=rest, i=i):
                v = rest * (1 - z)
                v[i] = z
                return log_objective(Fs, v)

            z, value = golden_section_max(g, 0.0, 1.0 - 1e-12, tol=1e-12)
            if g(0.0) >= value:
                z, value = 0.0, g(0.0)
            if value > current:
                w = rest * (1 - z)
                w[i] = z
                current = value
        if current - start < tol:
            break
    return w, current


def test_criterion_09_liftone_oracles():
    gaps, alpha_slack = [], []
    for seed in range(20):
        r = np.random.default_rng(900 + seed)
        g = GlmSpec(["1", "x1", "x2", "x1*x2"], r.normal(scale=0.8, size=4),
                    ["logit", "probit", "cloglog", "poisson-log"][seed % 4], d=2)
        pts = r.uniform(-2, 2, size=(6, 2))
        w0 = r.dirichlet(np.ones(6))
        Fs = g.fisher_batch(pts)
        analytic = log_objective(Fs, liftone_glm(pts, w0, g, 1e-12))
        gaps.append(abs(analytic - _golden_liftone(Fs, w0)[1]))

        F_t = np.tensordot(w0, Fs, axes=1)
        F_x = g.fisher_at_point(r.uniform(-2, 2, size=2))

        def logf(a):
            return log_det((1 - a) * F_t + a * F_x)

        alpha = alpha_new_point_log(logf(0.5), logf(0.0), g.p)
        best_grid = max(logf(a) for a in np.arange(0.0, 1.0, 1e-3))
        alpha_slack.append(logf(alpha) - best_grid)
    record(9, "lift-one oracles", [
        ("analytic vs golden section", max(gaps) <= 1e-6, f"max |log f gap| = {max(gaps):.3g} on 20"),
        ("alpha vs 1e-3 grid", min(alpha_slack) >= -1e-10,
         f"min log f(alpha) - grid max = {min(alpha_slack):.3g} on 20"),
    ])


def test_criterion_10_mlm_identities():
    r = np.random.default_rng(10)
    worst, cases = 0.0, 0
    for family in ("baseline-category", "adjacent-categories", "continuation-ratio"):
        for J in (3, 4):
            for _ in range(5):
                theta = r.normal(scale=0.8, size=J - 1)
                m = MlmSpec(J, family, [["x1"]] * (J - 1), [], theta, d=1)
                for x in (-2.0, -1.0, -0.5, 0.5, 1.0, 2.0):
                    xv = np.array([x])
                    lhs = np.linalg.det(m.fisher_at_point(xv))
                    rhs = x ** (2 * (J - 1)) * np.prod(m.probabilities(xv).pi)
                    worst = max(worst, abs(lhs - rhs) / abs(rhs))
                    cases += 1
    exact, pairs = True, 0
    for family in FAMILIES:
        m = MlmSpec(3, family, [["1"], ["1"]], ["x1", "x2^2"], [-0.5, 0.8, 0.4, -0.3], d=2)
        for x1, x2 in r.uniform(-3, 3, size=(25, 2)):
            a, b = np.array([x1, x2]), np.array([x1, -x2])
            if m.feasible(a):
                exact &= bool(np.array_equal(m.fisher_at_point(a), m.fisher_at_point(b)))
                pairs += 1
    record(10, "multinomial kernel identities", [
        ("determinant identity", worst <= 1e-10, f"{cases} cases, worst relative error {worst:.2g}"),
        ("sign-flip coincidence", exact, f"{pairs} pairs, exact equality"),
    ])
