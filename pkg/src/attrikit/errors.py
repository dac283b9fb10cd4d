"""Exception hierarchy shared by every attrikit module."""


class AttrikitError(Exception):
    """Base class for all library errors."""


class ShapeError(AttrikitError, ValueError):
    """Tensor dimensions do not satisfy an operation's contract."""


class NumericError(AttrikitError, ArithmeticError):
    """A NaN/Inf appeared, or a computation is numerically degenerate."""


class DataError(AttrikitError):
    """Malformed dataset, label, or image input."""


class CheckpointFormatError(DataError):
    """A checkpoint file is corrupt, truncated, or from another format version."""


class CalibrationDegenerateError(AttrikitError, ValueError):
    """Threshold selection needs both classes present."""


class ConfigError(AttrikitError, ValueError):
    """Invalid configuration value."""
