"""Exception hierarchy shared by all modules."""


class ForLionError(Exception):
    """Base class for all errors raised by this package."""


class ExpressionError(ForLionError, ValueError):
    pass


class DimensionMismatch(ForLionError, ValueError):
    pass


class InvalidDesign(ForLionError, ValueError):
    pass


class InfeasiblePoint(ForLionError, ValueError):
    """A cumulative-logit point whose linear predictors are not increasing."""


class DomainError(ForLionError, ValueError):
    """eta outside the domain of a GLM link (gamma / inverse-Gaussian)."""


class SingularReference(ForLionError, ValueError):
    pass


class SingularStart(ForLionError, ValueError):
    pass


class SingularDesign(ForLionError, ValueError):
    pass


class RankDeficientSpace(ForLionError, RuntimeError):
    pass


class InitFailure(ForLionError, RuntimeError):
    def __init__(self, message: str, best_rank: int | None = None):
        super().__init__(message)
        self.best_rank = best_rank


class AllStartsInvalid(ForLionError, RuntimeError):
    pass


class ComboExplosion(ForLionError, RuntimeError):
    pass


class ProblemFileError(ForLionError, ValueError):
    """Malformed problem file; ``section`` names where the problem was found."""

    def __init__(self, message: str, section: str | None = None, line: int | None = None):
        where = []
        if section:
            where.append(f"[{section}]")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{' '.join(where)}: {message}" if where else message)
        self.section = section
        self.line = line
