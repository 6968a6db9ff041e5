"""dyvm specific exceptions."""

from __future__ import annotations


class DyvmError(Exception):
    """Base class for all dyvm exceptions."""

    def __init__(self, *args: object, operation: str | None = None):
        super().__init__(*args)
        self.operation = operation

    def __str__(self) -> str:
        msg = super().__str__()
        if self.operation:
            return f"{self.operation}: {msg}"
        return msg

    @property
    def message(self) -> object:
        """The exception's error message if one was given."""
        if self.args:
            return self.args[0]
        return None


class ShapeError(DyvmError):
    """Exception raised when tensor shapes are inconsistent."""


class NonFiniteError(DyvmError):
    """Exception raised when a computation produces NaN or infinity."""


class DiscretizationError(DyvmError):
    """Exception raised for invalid continuous parameters, like a non-positive Δ."""


class SingularEvolutionError(DiscretizationError):
    """Exception raised when ΔA can not be inverted outside the small-Δ regime."""


class TimeVaryingKernelError(DyvmError):
    """Exception raised when a convolution kernel is requested for selective params.

    The global convolution form only exists for time-invariant parameters.
    """


class MaskError(DyvmError):
    """Exception raised when a token mask is invalid.

    For example when the class token is marked as pruned, or when a pruning
    stage would retain fewer than one token.
    """


class LabelError(DyvmError):
    """Exception raised when a class label is out of range."""


class StageMismatchError(DyvmError):
    """Exception raised when the number of masks and target ratios differ."""


class ConfigError(DyvmError):
    """Exception raised due to a misconfigured model or experiment."""


class WeightsArchiveError(DyvmError):
    """Exception raised when a weight archive can not be read or written."""


class InvariantViolation(DyvmError):  # noqa: N818
    """Exception raised when a checked property does not hold."""


class CacheCapacityValueError(ValueError):
    """An exception raised when the LRU cache is given a zero or negative capacity."""
