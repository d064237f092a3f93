from pathlib import Path

import numpy as np
import pytest

from forlion.design import Design, FactorSpace, read_design_csv
from forlion.glm import GlmSpec
from forlion.mlm import MlmSpec
from forlion.problem import load_problem
from forlion.solver import solve

PROBLEMS = Path(__file__).resolve().parent.parent / "problems"

HOUSE_FLIES_THETA = (-1.935, -0.02642, 0.0003174, -9.159, 0.06386)


def house_flies_model() -> MlmSpec:
    return MlmSpec(3, "continuation-ratio", [["1", "x1", "x1^2"], ["1", "x1"]], [],
                   HOUSE_FLIES_THETA, d=1)


def stufken_model() -> GlmSpec:
    return GlmSpec(["x1", "x2", "x3", "1"], [-0.5, 0.5, 1, 1], "logit", d=3,
                   main_effects_prefix=3, k=3)


def esd_model() -> GlmSpec:
    return GlmSpec(["1", "x2", "x3", "x4", "x5", "x1", "x4*x5"],
                   [-7.5, 1.50, -0.2, -0.15, 0.25, 0.35, 0.4], "logit", d=5)


def surface_model() -> MlmSpec:
    return MlmSpec(5, "cumulative", [["1"]] * 4, ["-x6", "-x1", "-x2", "-x3", "-x4", "-x5"],
                   [-1.113, 0.183, 1.518, 2.639, -0.970, 0.077, 0.008, -0.007, 0.007, 0.056], d=6)


SURFACE_SPACE = FactorSpace([(-25, 25), (-200, 200), (-150, 0), (-100, 0), (0, 16)], [(-1, 1)])
ESD_SPACE = FactorSpace([(25, 45)], [(-1, 1)] * 4)
STUFKEN_SPACE = FactorSpace([(-2, 2), (-1, 1), (-3, 3)])


def fixture_design(name: str) -> Design:
    return read_design_csv(PROBLEMS / name)


_SOLVED: dict = {}


def solved(name: str):
    """(problem, report) for ``problems/<name>.ini``, solved once per session."""
    if name not in _SOLVED:
        problem = load_problem(PROBLEMS / f"{name}.ini")
        _SOLVED[name] = (problem, solve(problem.model, problem.space, problem.config))
    return _SOLVED[name]


def central_difference(f, x, i, rel=1e-6):
    h = rel * (1.0 + abs(x[i]))
    xp, xm = x.copy(), x.copy()
    xp[i] += h
    xm[i] -= h
    return (f(xp) - f(xm)) / (2 * h)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def hf_model():
    return house_flies_model()


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
