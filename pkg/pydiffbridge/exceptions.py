"""Exceptions raised by pydiffbridge."""


class DiffBridgeError(Exception):
    """Base class for all pydiffbridge errors."""


class DomainError(DiffBridgeError, ValueError):
    """An argument lies outside the domain of an operation, e.g. t <= 0."""


class GridError(DiffBridgeError, ValueError):
    """A time grid or lattice violates its invariants."""


class SimulationError(DiffBridgeError):
    """A simulated trajectory produced a non-finite drift or state."""

    def __init__(self, message: str, step: int = -1):
        super().__init__(message)
        self.step = step


class IntegrationError(DiffBridgeError):
    """The probability flow integration produced a non-finite state."""


class ModelError(DiffBridgeError, ValueError):
    """A target density or joint model could not be constructed."""


class UnsupportedError(DiffBridgeError, NotImplementedError):
    """The requested operation is not available for the given input."""


class ArchitectureError(DiffBridgeError, ValueError):
    """Inputs do not match the architecture of a parametric function."""


class TapeError(DiffBridgeError):
    """A gradient was requested for an invalid tape root."""


class OptimizerError(DiffBridgeError):
    """The optimizer received a non-finite gradient."""


class TrainingError(DiffBridgeError):
    """A training loop diverged."""

    def __init__(self, message: str, iteration: int = -1):
        super().__init__(message)
        self.iteration = iteration


class LossError(DiffBridgeError):
    """A loss could not be evaluated, e.g. non-finite terminal log-density."""

    def __init__(self, message: str, path: int = -1):
        super().__init__(message)
        self.path = path


class IpfError(DiffBridgeError):
    """An iterative proportional fitting half-step failed."""

    def __init__(self, message: str, iteration: int = -1, direction: str = ""):
        super().__init__(message)
        self.iteration = iteration
        self.direction = direction


class ConvergenceError(DiffBridgeError):
    """A fixed-point iteration did not reach its tolerance."""

    def __init__(self, message: str, gap: float = float("nan")):
        super().__init__(message)
        self.gap = gap


class ConfigError(DiffBridgeError, ValueError):
    """An experiment configuration is invalid; names the offending field."""

    def __init__(self, message: str, field: str = ""):
        super().__init__(message)
        self.field = field


class VerificationError(DiffBridgeError):
    """An oracle check exceeded its threshold."""

    def __init__(self, message: str, failed: tuple = ()):
        super().__init__(message)
        self.failed = failed
