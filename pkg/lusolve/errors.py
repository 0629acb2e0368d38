"""Exception hierarchy shared by every lusolve module."""

from typing import Optional, Sequence


class LusolveError(Exception):
    """Base class for all errors raised by lusolve."""


# ---------------------------------------------------------------------------
# Expressions and problem data
# ---------------------------------------------------------------------------


class ExpressionError(LusolveError):
    def __init__(self, message: str, position: Optional[int] = 0, source: str = "") -> None:
        super().__init__(message if position is None else f"{message} at offset {position}")
        self.message = message
        self.position = position
        self.source = source


class ExpressionSyntaxError(ExpressionError):
    pass


class UnknownIdentifierError(ExpressionError):
    pass


class EmptyExpressionError(ExpressionError):
    pass


class ExpressionDomainError(ExpressionError):
    """An argument left the domain of ln or sqrt during evaluation; carries no offset."""

    def __init__(self, message: str, source: str = "") -> None:
        super().__init__(f"{message} in {source!r}" if source else message, None, source)


class InvalidNagumoSpec(LusolveError):
    pass


class ProblemFileError(LusolveError):
    def __init__(self, message: str, path: str = "<problem>", line: Optional[int] = None) -> None:
        where = f"{path}:{line}" if line is not None else path
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


# ---------------------------------------------------------------------------
# Curves and bands
# ---------------------------------------------------------------------------


class PeriodMismatchError(LusolveError):
    pass


class InconsistentCurveError(LusolveError):
    pass


class BandOrderError(LusolveError):
    pass


# ---------------------------------------------------------------------------
# Integration and solvers
# ---------------------------------------------------------------------------


class IntegrationError(LusolveError):
    pass


class BlowUpError(IntegrationError):
    pass


class NonFiniteFieldError(IntegrationError):
    pass


class NoSolutionFound(LusolveError):
    """Raised when a scan finds no in-band solution. Not a proof of nonexistence."""


class PreconditionError(LusolveError):
    pass


class InternalConsistencyError(LusolveError):
    pass


class NotConvergedError(LusolveError):
    def __init__(self, message: str, profile: Sequence[float] = ()) -> None:
        super().__init__(message)
        self.profile = list(profile)


class LiftError(LusolveError):
    pass


class NonNeighboringError(LusolveError):
    pass
