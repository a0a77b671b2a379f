"""Exception hierarchy for bioconvect."""

from __future__ import annotations

from typing import Any


class BioconvectError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(BioconvectError, ValueError):
    """An input parameter is outside its admissible range."""

    def __init__(self, field_name: str, value: Any, reason: str = "must be > 0"):
        self.field_name = field_name
        self.value = value
        super().__init__(f"{field_name}={value!r}: {reason}")


class HypothesisViolation(BioconvectError):
    """A certificate denominator is non-positive."""

    def __init__(self, check: str, lhs: float, rhs: float, message: str = ""):
        self.check = check
        self.lhs = lhs
        self.rhs = rhs
        self.slack = rhs - lhs
        text = message or f"hypothesis {check} violated"
        super().__init__(
            f"{text} (lhs={lhs:.6g}, rhs={rhs:.6g}, slack={self.slack:.6g})"
        )


class PrecisionDefect(BioconvectError):
    """Working and extended precision disagree beyond tolerance."""

    def __init__(self, quantity: str, working: float, extended: float):
        self.quantity = quantity
        self.working = working
        self.extended = extended
        super().__init__(
            f"{quantity}: working={working!r} extended={extended!r} disagree"
        )


class GridMismatchError(BioconvectError, ValueError):
    """Fields from different grids were combined."""


class BoundaryTagError(BioconvectError, ValueError):
    """Unknown boundary tag."""


class ConvergenceError(BioconvectError):
    """An iterative method did not reach its tolerance."""

    def __init__(self, message: str, stats: Any = None):
        self.stats = stats
        super().__init__(message)


class SingularSystemError(BioconvectError):
    """A linear system is numerically singular."""

    def __init__(self, message: str, smallest_pivot: float | None = None):
        self.smallest_pivot = smallest_pivot
        if smallest_pivot is not None:
            message = f"{message} (smallest pivot {smallest_pivot:.3e})"
        super().__init__(message)


class SolverDivergence(BioconvectError):
    """The Picard iteration grew instead of contracting."""

    def __init__(self, message: str, history: Any = None):
        self.history = history
        super().__init__(message)


class ConfigError(BioconvectError, ValueError):
    """Configuration text could not be parsed or validated."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        self.line = line
        self.key = key
        prefix = ""
        if line is not None:
            prefix = f"line {line}: "
        elif key is not None:
            prefix = f"{key}: "
        super().__init__(prefix + message)


class FieldFormatError(BioconvectError, ValueError):
    """A field file has a malformed or mismatched header."""


class ConservationError(BioconvectError):
    """A prescribed field mean drifted during the iteration."""

    def __init__(self, field_name: str, drift: float):
        self.field_name = field_name
        self.drift = drift
        super().__init__(f"mean of {field_name} drifted by {drift:.3e}")
