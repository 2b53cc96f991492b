"""Exception types shared across the package."""


class MaskMatchError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MaskMatchError, ValueError):
    """A parameter or config value violates its documented constraints."""


class ShapeError(MaskMatchError, ValueError):
    """Array shapes are inconsistent with what an operation requires."""


class IngestionError(MaskMatchError, IOError):
    """A dataset source is missing, truncated, or malformed."""


class NumericError(MaskMatchError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class CheckpointError(MaskMatchError, IOError):
    """A checkpoint file is corrupt, truncated, or incompatible."""
