"""Exception hierarchy shared by every module."""


class SpringBlockError(Exception):
    """Base class for all package errors."""


class DomainError(SpringBlockError, ValueError):
    """Input outside the documented domain of an operation."""


class RangeError(SpringBlockError, ArithmeticError):
    """A value left the representable range (e.g. exp overflow)."""


class AccuracyError(SpringBlockError):
    """A requested tolerance could not be met."""


class SearchError(SpringBlockError):
    """A root search or fixed-point iteration failed to converge."""


class IntegrationError(SpringBlockError):
    """The ODE integrator gave up (step underflow, step budget, ...)."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class GuardTripped(RangeError):
    """The overflow guard stopped an integration.

    Carries the partial trajectory and the last state inside the guard so
    that callers can switch charts and continue.
    """

    def __init__(self, message, trajectory=None, last_state=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.last_state = last_state


class TraceError(SpringBlockError):
    """A separatrix or cycle trace did not reach its target region."""

    def __init__(self, message, last_chart=None):
        super().__init__(message)
        self.last_chart = last_chart
