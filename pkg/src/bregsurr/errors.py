"""Exception types shared across the package."""


class BregsurrError(Exception):
    """Base class for all package errors."""


class DomainError(BregsurrError, ValueError):
    """An argument lies outside the domain of the requested operation."""


class NonFiniteEvaluation(BregsurrError, ArithmeticError):
    """An oracle returned NaN or an infinity."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class InverseBracketError(BregsurrError, RuntimeError):
    """Bisection for a threshold inverse could not bracket the root."""


class TieError(BregsurrError, ValueError):
    """Quantile thresholding hit a tie at the cut-off rank."""

    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = tuple(int(i) for i in indices)


class DegenerateScale(BregsurrError, ValueError):
    """A robust scale estimate is zero because all residuals coincide."""


class Unsupported(BregsurrError, NotImplementedError):
    """The requested combination of options has no implementation."""


class FactorizationError(BregsurrError, ArithmeticError):
    """A matrix that must be positive definite could not be factored."""


class ConfigError(BregsurrError, ValueError):
    """Invalid experiment or solver configuration."""


class InnerSolverError(BregsurrError, RuntimeError):
    """An inner iterative solver ran out of iterations.

    ``residual`` is the last optimality residual reached.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class PivotLimitError(BregsurrError, RuntimeError):
    """The simplex method exceeded its pivot budget."""


class LpFailure(BregsurrError, RuntimeError):
    """An LP subproblem came back infeasible or unbounded."""

    def __init__(self, message, status=None, iteration=None):
        super().__init__(message)
        self.status = status
        self.iteration = iteration


class InsufficientData(BregsurrError, ValueError):
    """Too few usable points for a fit."""


class SolverError(BregsurrError, RuntimeError):
    """A solver step failed; the trace up to the failure is attached."""

    def __init__(self, message, trace=None, cause=None):
        super().__init__(message)
        self.trace = trace
        self.cause = cause


class BoundViolation(BregsurrError, AssertionError):
    """A recorded trace broke the averaged error-term inequality."""

    def __init__(self, message, run_id=None, gap=float("nan")):
        super().__init__(message)
        self.run_id = run_id
        self.gap = gap
