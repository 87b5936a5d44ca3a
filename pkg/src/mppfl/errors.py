"""Exception hierarchy shared by every module."""


class MPPFLError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(MPPFLError, ValueError):
    """An argument lies outside its documented range."""


class StructuralError(MPPFLError, ValueError):
    """A graph or matrix violates a structural requirement."""


class DomainError(MPPFLError, ValueError):
    """A formula was evaluated outside the domain where it is defined."""


class InfeasibleBudgetError(DomainError):
    """A best response fell at or below the budget floor.

    Carries the index of the offending client so callers can raise the
    reward or switch to clamping.
    """

    def __init__(self, message: str, client: int | None = None, value: float | None = None):
        super().__init__(message)
        self.client = client
        self.value = value


class SolverError(MPPFLError, RuntimeError):
    """A numerical solver failed (bracket blow-up, singular system)."""


class NonConvergenceError(SolverError):
    """The fixed-point sweep hit its round cap. ``trace`` holds residuals."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []


class ConfigError(MPPFLError, ValueError):
    """Config file could not be parsed or failed validation."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        super().__init__(message)
        self.line = line
        self.field = field


class DivergenceError(MPPFLError, RuntimeError):
    """Federated training blew up past the divergence guard."""
