"""
Core exceptions for convflat.
"""


class ConvFlatError(Exception):
    """Base class for all convflat errors."""
    def __init__(self, message: str = "An error occurred"):
        self.message = message
        super().__init__(self.message)


class GeometryError(ConvFlatError):
    """Raised when tensor shapes and convolution geometry do not fit together."""
    def __init__(self, message: str = "Geometry error"):
        super().__init__(message)


class ValidationError(ConvFlatError):
    """Raised when input data fails validation."""
    def __init__(self, message: str = "Validation error", errors: dict | None = None):
        self.errors = errors or {}
        super().__init__(message)


class SizeLimitError(ConvFlatError):
    """Raised when an oracle would exceed its configured size cap."""
    def __init__(self, message: str = "Size limit exceeded", limit: int = 0, requested: int = 0):
        self.limit = limit
        self.requested = requested
        super().__init__(message)


class NonFiniteError(ConvFlatError):
    """Raised when a loss or array that must be finite is not."""
    def __init__(self, message: str = "Non-finite value encountered"):
        super().__init__(message)


class DivergenceError(ConvFlatError):
    """Raised when a training run diverges."""
    def __init__(
        self,
        message: str = "Training diverged",
        epoch: int | None = None,
        loss: float | None = None,
    ):
        self.epoch = epoch
        self.loss = loss
        super().__init__(message)


class UndefinedCorrelationError(ConvFlatError):
    """Raised when a correlation is undefined (zero variance or too few points)."""
    def __init__(self, message: str = "Correlation is undefined"):
        super().__init__(message)


class ConfigError(ConvFlatError):
    """Raised when a configuration document or flag combination is invalid."""
    def __init__(self, message: str = "Invalid configuration", errors: dict | None = None):
        self.errors = errors or {}
        super().__init__(message)
