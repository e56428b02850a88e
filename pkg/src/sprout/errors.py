"""Exception types shared across the package."""


class SproutError(Exception):
    """Base class for all package errors."""


class ShapeError(SproutError, ValueError):
    """Array shapes are incompatible for the requested operation."""


class NumericError(SproutError, ArithmeticError):
    """A non-finite value appeared where finite values are required."""


class DatasetError(SproutError, RuntimeError):
    """Dataset tree, manifest or image decode problem."""


class CheckpointError(SproutError, RuntimeError):
    """Checkpoint archive is missing, malformed or incompatible."""


class ConfigError(SproutError, ValueError):
    """Invalid configuration file, key or value."""
