class SimulationError(Exception):
    """Base class for every error raised by the simulator"""


class InvalidRateError(SimulationError):
    """Raised when a clock rate is not strictly positive"""


class UnsupportedModeError(SimulationError):
    """Raised when an operation does not support the requested domain mode"""


class OrderingError(SimulationError):
    """Raised when parameters or initial states violate a required ordering"""


class TopologyError(SimulationError):
    """Raised when two sites are expected to be nearest neighbors but are not"""


class InconsistentStateError(SimulationError):
    """Raised when a configuration does not match its process kind or domain"""


class HorizonError(SimulationError):
    """Raised when a time lies outside [0, horizon]"""


class DomainError(SimulationError):
    """Raised when a closed-form formula is evaluated outside its domain"""


class BracketError(SimulationError):
    """Raised when a bisection bracket does not straddle the decision boundary"""


class SearchCapError(SimulationError):
    """Raised when a numeric search exceeds its cap"""


class CouplingViolation(SimulationError):
    """Raised when coupled processes lose their pointwise ordering"""


class UsageError(SimulationError):
    """Raised for invalid command-line or config-file values"""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class ParameterError(SimulationError):
    """Raised when model parameters are out of range"""
