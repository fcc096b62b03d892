"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid configuration value or inconsistent option combination."""


class InputError(ValueError):
    """Operation called with arguments violating its preconditions."""


class NotReadyError(RuntimeError):
    """Buffer does not yet hold enough data to serve the request."""


class CheckpointError(RuntimeError):
    """Checkpoint file is corrupt or incompatible with the configuration."""


class ReplayLoadError(RuntimeError):
    """Replay buffer file is corrupt or truncated."""


class MetricsError(ValueError):
    """Metrics stream is malformed."""
