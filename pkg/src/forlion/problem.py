"""Problem files: a sectioned key-value text format read with configparser.

Example::

    [model]
    type = mlm
    family = continuation-ratio
    categories = 3
    predictors.1 = 1, x1, x1^2
    predictors.2 = 1, x1
    parameters = -1.935, -0.02642, 0.0003174, -9.159, 0.06386

    [factors]
    x1 = continuous 80 200

    [solver]
    delta = 0.1
    eps = 1e-10

    [reference]
    design = reference.csv

GLMs use ``type = glm`` with ``link``, an optional ``link_param``, a single
``predictors`` line and optionally ``main_effects = k'``. Factor lines are
``continuous <lower> <upper>`` or ``discrete <level> <level> ...``, listed as
x1, x2, ... with all continuous factors first. Relative paths are resolved
against the directory of the problem file.
"""

from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass
from pathlib import Path

from .design import Design, FactorSpace, read_design_csv
from .errors import DimensionMismatch, ExpressionError, InvalidDesign, ProblemFileError
from .glm import GlmSpec, Link
from .mlm import MlmSpec
from .solver import SolverConfig

_BOOL_FIELDS = {f.name for f in dataclasses.fields(SolverConfig) if f.type in ("bool", bool)}
_INT_FIELDS = {f.name for f in dataclasses.fields(SolverConfig) if f.type in ("int", int)}
_FLOAT_FIELDS = {"delta", "eps", "box_tol"}
_STR_FIELDS = {"metric", "init"}
_SOLVER_KEYS = _BOOL_FIELDS | _INT_FIELDS | _FLOAT_FIELDS | _STR_FIELDS | {"init_design"}


@dataclass
class Problem:
    model: object
    space: FactorSpace
    config: SolverConfig
    reference: Design | None = None
    path: Path | None = None

    @property
    def p(self) -> int:
        return self.model.p


class _Source:
    """Raw lines of the file, used only to attach line numbers to errors."""

    def __init__(self, text: str):
        self.lines = text.splitlines()

    def line_of(self, section: str, key: str | None = None) -> int | None:
        current = None
        for no, raw in enumerate(self.lines, start=1):
            s = raw.strip()
            m = re.fullmatch(r"\[(.+)\]", s)
            if m:
                current = m.group(1).strip().lower()
                if key is None and current == section:
                    return no
                continue
            if current == section and key is not None:
                k = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
                if k == key.lower():
                    return no
        return None

    def error(self, message: str, section: str, key: str | None = None) -> ProblemFileError:
        return ProblemFileError(message, section=section, line=self.line_of(section, key))


def split_list(text: str) -> list[str]:
    """Split on commas that are not inside parentheses."""
    items, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            items.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    tail = "".join(cur).strip()
    if tail or items:
        items.append(tail)
    return [i for i in items if i]


def _floats(src: _Source, section: str, key: str, text: str) -> list[float]:
    try:
        return [float(v) for v in split_list(text.replace("\n", ","))]
    except ValueError:
        raise src.error(f"{key}: expected a comma-separated list of numbers", section, key) from None


def _parse_factors(src: _Source, cp: configparser.ConfigParser) -> FactorSpace:
    if not cp.has_section("factors"):
        raise ProblemFileError("missing [factors] section", section="factors")
    continuous, discrete = [], []
    keys = list(cp["factors"].keys())
    if not keys:
        raise src.error("no factors declared", "factors")
    for i, key in enumerate(keys):
        if key != f"x{i + 1}":
            raise src.error(f"factors must be named x1, x2, ... in order; found {key!r} "
                            f"where x{i + 1} was expected", "factors", key)
        parts = cp["factors"][key].split()
        kind = parts[0].lower() if parts else ""
        try:
            values = [float(v) for v in parts[1:]]
        except ValueError:
            raise src.error(f"{key}: non-numeric bound or level", "factors", key) from None
        if kind == "continuous":
            if discrete:
                raise src.error("continuous factors must precede discrete ones", "factors", key)
            if len(values) != 2:
                raise src.error(f"{key}: continuous factor needs lower and upper", "factors", key)
            continuous.append(tuple(values))
        elif kind == "discrete":
            if len(values) < 2:
                raise src.error(f"{key}: discrete factor needs at least two levels", "factors", key)
            discrete.append(tuple(values))
        else:
            raise src.error(f"{key}: kind must be 'continuous' or 'discrete'", "factors", key)
    try:
        return FactorSpace(continuous=continuous, discrete=discrete)
    except InvalidDesign as exc:
        raise src.error(str(exc), "factors") from None


def _parse_model(src: _Source, cp: configparser.ConfigParser, space: FactorSpace):
    if not cp.has_section("model"):
        raise ProblemFileError("missing [model] section", section="model")
    sec = cp["model"]
    kind = sec.get("type", "").strip().lower()
    if "parameters" not in sec:
        raise src.error("missing 'parameters'", "model")
    params = _floats(src, "model", "parameters", sec["parameters"])
    try:
        if kind == "glm":
            if "predictors" not in sec:
                raise src.error("missing 'predictors'", "model")
            link_param = float(sec["link_param"]) if "link_param" in sec else None
            link = Link(sec.get("link", "logit").strip(), link_param)
            main = int(sec["main_effects"]) if "main_effects" in sec else None
            preds = split_list(sec["predictors"])
            if len(params) != len(preds):
                raise src.error(f"{len(preds)} predictors but {len(params)} parameters",
                                "model", "parameters")
            return GlmSpec(preds, params, link, d=space.d, main_effects_prefix=main, k=space.k)
        if kind == "mlm":
            if "categories" not in sec:
                raise src.error("missing 'categories'", "model")
            J = int(sec["categories"])
            cats = []
            for j in range(1, J):
                key = f"predictors.{j}"
                if key not in sec:
                    raise src.error(f"missing '{key}' (one line per category 1..{J - 1})", "model")
                cats.append(split_list(sec[key]))
            shared = split_list(sec.get("shared", ""))
            n = sum(len(c) for c in cats) + len(shared)
            if len(params) != n:
                raise src.error(f"{n} predictors but {len(params)} parameters", "model", "parameters")
            return MlmSpec(J, sec.get("family", "cumulative").strip(), cats, shared, params, d=space.d)
    except ProblemFileError:
        raise
    except (ExpressionError, DimensionMismatch, ValueError) as exc:
        raise src.error(str(exc), "model") from None
    raise src.error(f"type must be 'glm' or 'mlm', got {kind!r}", "model", "type")


def _parse_solver(src: _Source, cp: configparser.ConfigParser, base: Path) -> SolverConfig:
    kwargs: dict = {}
    if cp.has_section("solver"):
        sec = cp["solver"]
        for key in sec:
            if key not in _SOLVER_KEYS:
                raise src.error(f"unknown solver option {key!r}", "solver", key)
            try:
                if key in _BOOL_FIELDS:
                    kwargs[key] = sec.getboolean(key)
                elif key in _INT_FIELDS:
                    kwargs[key] = int(sec[key])
                elif key in _FLOAT_FIELDS:
                    kwargs[key] = float(sec[key])
                elif key == "init_design":
                    kwargs["init"] = read_design_csv(base / sec[key].strip())
                else:
                    kwargs[key] = sec[key].strip()
            except (ValueError, OSError) as exc:
                raise src.error(f"{key}: {exc}", "solver", key) from None
    try:
        return SolverConfig(**kwargs)
    except ValueError as exc:
        raise src.error(str(exc), "solver") from None


def parse_problem(text: str, base: Path | str = ".") -> Problem:
    base = Path(base)
    src = _Source(text)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.ParsingError as exc:
        line, content = exc.errors[0]
        raise ProblemFileError(f"cannot parse {content}", line=line) from None
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ProblemFileError(str(exc).splitlines()[0], line=line) from None
    for name in cp.sections():
        if name not in ("model", "factors", "solver", "reference"):
            raise src.error(f"unknown section [{name}]", name)
    space = _parse_factors(src, cp)
    model = _parse_model(src, cp, space)
    config = _parse_solver(src, cp, base)
    reference = None
    if cp.has_section("reference") and "design" in cp["reference"]:
        try:
            reference = read_design_csv(base / cp["reference"]["design"].strip())
        except (OSError, InvalidDesign) as exc:
            raise src.error(str(exc), "reference", "design") from None
    return Problem(model, space, config, reference)


def load_problem(path: str | Path) -> Problem:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ProblemFileError(f"cannot read {path}: {exc.strerror}") from None
    problem = parse_problem(text, path.parent)
    problem.path = path
    return problem
