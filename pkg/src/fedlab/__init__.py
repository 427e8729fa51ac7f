"""fedlab: a deterministic federated-optimization laboratory.

Synthetic convex and matrix-recovery problems, ADMM and first-order
federated solvers, communication shields (compression, robust
aggregation, differential privacy), and topology simulation, all
reproducible bit for bit from a single seed.
"""

from .errors import (
    ConfigurationError,
    DivergenceError,
    DomainError,
    FedLabError,
    NumericalError,
    ParameterError,
    StateError,
    TopologyError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DivergenceError",
    "DomainError",
    "FedLabError",
    "NumericalError",
    "ParameterError",
    "StateError",
    "TopologyError",
    "__version__",
]
