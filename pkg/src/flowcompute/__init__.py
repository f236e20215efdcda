"""Delay-optimal in-network computation of functions on open queueing networks."""

__version__ = "0.1.0"

from .errors import (ConfigError, ConvergenceError, FlowComputeError, InfeasibleError,
                     InstabilityError, SimulationDiverged)
from .model import Complexity, FlowAssignment, FunctionClass, NetworkSpec, validate_network

__all__ = [
    "__version__", "Complexity", "FunctionClass", "NetworkSpec", "FlowAssignment",
    "validate_network", "FlowComputeError", "ConfigError", "ConvergenceError",
    "InfeasibleError", "InstabilityError", "SimulationDiverged",
]
