"""Exception hierarchy shared across the package."""

from __future__ import annotations


class FlowComputeError(Exception):
    """Base class for all package errors."""


class ConfigError(FlowComputeError):
    """Malformed scenario or function-table input."""


class SizeLimitError(FlowComputeError):
    """Graph too large for exact maximal-independent-set enumeration."""


class ConvergenceError(FlowComputeError):
    """An iterative routine stopped without meeting its tolerance."""

    def __init__(self, message: str, best_value: float | None = None,
                 gap: float | None = None, trace: list[float] | None = None):
        super().__init__(message)
        self.best_value = best_value
        self.gap = gap
        self.trace = trace or []


class DegenerateSourceError(FlowComputeError):
    """Source entropy is zero, so entropic surjectivity is undefined."""


class InstabilityError(FlowComputeError):
    """Operating point where a communication queue cannot be stationary."""


class DegenerateComplexityError(FlowComputeError):
    """Zero computation complexity where a formula divides by it."""


class SurjectiveFunctionError(FlowComputeError):
    """Entropic surjectivity of 1 leaves nothing to compress."""


class CostPoleError(FlowComputeError):
    """The convex computation cost hits its pole mu = k (lambda - gamma)."""


class InfeasibleError(FlowComputeError):
    """Constraint box is empty or the routing system is singular."""

    def __init__(self, message: str, node: int | None = None, cls: str | None = None):
        super().__init__(message)
        self.node = node
        self.cls = cls


class SimulationDiverged(FlowComputeError):
    """A simulated queue exceeded its length cap."""

    def __init__(self, message: str, partial_report=None):
        super().__init__(message)
        self.partial_report = partial_report
