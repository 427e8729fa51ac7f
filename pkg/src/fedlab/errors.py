"""Exception taxonomy shared by every fedlab module.

All failures raised on purpose derive from FedLabError so callers can
catch the whole family at once; the CLI maps subclasses onto exit codes.
"""

from __future__ import annotations


class FedLabError(Exception):
    """Base class for every error fedlab raises deliberately."""


class ParameterError(FedLabError, ValueError):
    """An argument violates a documented precondition (shape, range, finiteness)."""


class DomainError(FedLabError, ValueError):
    """A point lies outside the domain an operation requires."""


class ConfigurationError(FedLabError, ValueError):
    """An experiment configuration is malformed or internally inconsistent."""


class StateError(FedLabError, RuntimeError):
    """An object was driven through an invalid lifecycle transition."""


class TopologyError(FedLabError, ValueError):
    """A communication graph violates its structural contract."""


class NumericalError(FedLabError, ArithmeticError):
    """A numeric routine failed to converge or produced an invalid result."""


class DivergenceError(FedLabError, RuntimeError):
    """An optimization run blew past the divergence guard.

    Carries the 1-based round index at which the guard tripped.
    """

    def __init__(self, message: str, round_index: int):
        super().__init__(message)
        self.round_index = int(round_index)
