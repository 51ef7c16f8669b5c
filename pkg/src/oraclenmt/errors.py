"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class CheckpointError(ValueError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


class TrainingDiverged(RuntimeError):
    """A training step produced a non-finite loss."""
