"""Exception hierarchy shared by all dflow modules."""

from __future__ import annotations


class DflowError(Exception):
    """Base class for every error raised by dflow."""


class SpaceMismatchError(DflowError, ValueError):
    """Two operands live on different finite spaces."""


class ValidationError(DflowError, ValueError):
    """An object violates one of its construction invariants."""


class NotConvexError(DflowError, ValueError):
    """A proximal map was requested for a functional that is not convex."""


class NotDifferentiableError(DflowError, ValueError):
    """A gradient was requested at a point where none exists."""


class ProxConvergenceError(DflowError, RuntimeError):
    """The resolvent solver exhausted its iteration budget.

    Attributes
    ----------
    gap : float
        Certified objective-gap bound at the last iterate.
    iterations : int
        Number of iterations performed.
    step : int or None
        Time-step index when raised from inside a trajectory computation.
    """

    def __init__(self, message: str, gap: float, iterations: int, step: int | None = None):
        super().__init__(message)
        self.gap = gap
        self.iterations = iterations
        self.step = step


class AbsoluteContinuityError(DflowError, ValueError):
    """A set function charges a vertex that the reference measure does not."""

    def __init__(self, message: str, vertices):
        super().__init__(message)
        self.vertices = tuple(int(v) for v in vertices)


class ConfigError(DflowError, ValueError):
    """An experiment configuration failed to parse or validate.

    ``where`` names the offending location, e.g. ``"line 4, column 9"`` or
    ``"tasks[2].steps"``.
    """

    def __init__(self, message: str, where: str | None = None):
        super().__init__(f"{where}: {message}" if where else message)
        self.where = where
