"""Command-line front end: ``forlion solve|verify|compare|trace``.

Exit codes: 0 success, 1 input error, 2 solver did not converge,
3 design verified to be suboptimal.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .design import (Design, information_matrix, log_det, read_design_csv, relative_efficiency,
                     write_design_csv)
from .errors import ForLionError, InvalidDesign, SingularDesign
from .problem import Problem, load_problem
from .solver import sensitivity_scan, solve, verify_optimality

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED, EXIT_SUBOPTIMAL = 0, 1, 2, 3
VERIFY_TOL = 1e-4

log = logging.getLogger("forlion")


def _g(v: float) -> str:
    return f"{v:.6g}"


def _fmt_point(x) -> str:
    return "(" + ", ".join(_g(v) for v in np.atleast_1d(x)) + ")"


def default_grid(problem: Problem) -> int:
    return 1000 if problem.space.k <= 1 else 100


def _load(args) -> Problem:
    problem = load_problem(args.problem)
    seed = getattr(args, "seed_override", None)
    if seed is not None:
        problem.config.seed = seed
    return problem


def check_design(design: Design, problem: Problem) -> None:
    """Raise InvalidDesign naming the first row outside the space or infeasible."""
    space, model = problem.space, problem.model
    if design.d != space.d:
        raise InvalidDesign(f"design has {design.d} columns but the problem has {space.d} factors")
    feasible = model.feasible_batch(design.points)
    for i, x in enumerate(design.points):
        if not space.contains(x):
            raise InvalidDesign(f"row {i + 1} {_fmt_point(x)} lies outside the factor space")
        if not feasible[i]:
            raise InvalidDesign(f"row {i + 1} {_fmt_point(x)} is infeasible for the model")


def _read(path, problem: Problem) -> Design:
    design = read_design_csv(path)
    check_design(design, problem)
    return design


def cmd_solve(args) -> int:
    problem = _load(args)
    report = solve(problem.model, problem.space, problem.config)
    out = Path(args.out)
    write_design_csv(report.design, out)
    payload = report.to_dict()
    payload["p"] = problem.p
    if problem.reference is not None:
        try:
            payload["efficiency_vs_reference"] = relative_efficiency(report.design, problem.reference,
                                                                     problem.model)
        except ForLionError as exc:
            log.warning("reference design ignored: %s", exc)
    out.with_suffix(".json").write_text(json.dumps(payload, indent=2))
    status = "converged" if report.converged else "NOT converged"
    print(f"{status} after {report.iterations} iterations: {report.design.m} points, "
          f"log det {_g(report.log_det)}, max d {_g(report.max_sensitivity)} (p = {problem.p})")
    for x, w in zip(report.design.canonical().points, report.design.canonical().weights):
        print(f"  {_fmt_point(x)}  weight {_g(w)}")
    if "efficiency_vs_reference" in payload:
        print(f"efficiency vs reference: {_g(payload['efficiency_vs_reference'])}")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_verify(args) -> int:
    problem = _load(args)
    design = _read(args.design, problem)
    grid = args.grid or default_grid(problem)
    max_d, arg = verify_optimality(design, problem.model, problem.space, grid_density=grid)
    print(f"max d = {_g(max_d)} at {_fmt_point(arg)}; p = {problem.p}")
    if max_d <= problem.p + VERIFY_TOL:
        print("D-optimal within tolerance")
        return EXIT_OK
    print(f"not D-optimal: max d exceeds p + {VERIFY_TOL:g}")
    return EXIT_SUBOPTIMAL


def cmd_compare(args) -> int:
    problem = _load(args)
    a = _read(args.design, problem)
    b = _read(args.design_b, problem)
    if log_det(information_matrix(b, problem.model)) == -math.inf:
        raise SingularDesign("design B has a singular information matrix")
    print(f"{relative_efficiency(a, b, problem.model):.6f}")
    return EXIT_OK


def cmd_trace(args) -> int:
    problem = _load(args)
    design = _read(args.design, problem)
    space = problem.space
    if space.k < 1:
        raise InvalidDesign("trace needs at least one continuous factor")
    grid = args.grid or default_grid(problem)
    k = space.k
    n_rows = 0
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["combo"] + [f"x{i + 1}" for i in range(k)] + ["d", "flag"])
        for ci, pts, d in sensitivity_scan(design, problem.model, space, grid):
            for x, v in zip(pts, d):
                ok = math.isfinite(v)
                writer.writerow([ci] + [f"{c:.15g}" for c in x[:k]]
                                + [f"{v:.15g}" if ok else "-inf", "" if ok else "inf"])
                n_rows += 1
    print(f"wrote {n_rows} rows to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forlion",
                                     description="D-optimal approximate designs for GLMs and MLMs")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--problem", required=True, help="problem file")
        p.add_argument("--seed-override", type=int, default=None, help="replace the solver seed")
        return p

    p = common(sub.add_parser("solve", help="run the design algorithm"))
    p.add_argument("--out", required=True, help="design CSV; the JSON report goes next to it")
    p.set_defaults(func=cmd_solve)

    p = common(sub.add_parser("verify", help="check the optimality certificate of a design"))
    p.add_argument("--design", required=True)
    p.add_argument("--grid", type=int, default=None, help="grid points per continuous factor")
    p.set_defaults(func=cmd_verify)

    p = common(sub.add_parser("compare", help="relative efficiency of design A to design B"))
    p.add_argument("--design", required=True)
    p.add_argument("--design-b", required=True)
    p.set_defaults(func=cmd_compare)

    p = common(sub.add_parser("trace", help="write d(x, design) over a grid"))
    p.add_argument("--design", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=int, default=None)
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else (logging.INFO if args.verbose == 1 else logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ForLionError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
