"""Shared exception types."""


class BarcodeMaeError(Exception):
    """Base class for package errors."""


class ConfigError(BarcodeMaeError):
    """Invalid configuration value or combination."""


class DataError(BarcodeMaeError):
    """Malformed or inconsistent input data."""


class CheckpointError(BarcodeMaeError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


class TrainingDivergedError(BarcodeMaeError):
    """Non-finite loss or gradient encountered during training."""
