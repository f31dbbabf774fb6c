"""Exception types shared across the package."""


class PcsganError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PcsganError):
    """Config file cannot be parsed or refers to unavailable resources."""


class ValidationError(PcsganError, ValueError):
    """An argument or config value violates a documented invariant."""


class DataError(PcsganError):
    """A dataset file cannot be read or decoded."""


class PairingError(DataError):
    """A source/visible image is missing its partner."""


class EmptyDatasetError(DataError):
    """A dataset split contains no image pairs."""


class NumericError(PcsganError):
    """A loss term evaluated to NaN or Inf."""


class CheckpointError(PcsganError):
    """A checkpoint is missing, truncated, or has an incompatible format."""
