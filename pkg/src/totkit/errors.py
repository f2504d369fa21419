"""Exception hierarchy shared across the package."""


class TotkitError(Exception):
    """Base class for all errors raised by totkit."""


class ConfigError(TotkitError, ValueError):
    """Invalid configuration value or combination of values."""


class ValidationError(TotkitError, ValueError):
    """A feature frame or record violates its schema invariants."""


class DataError(TotkitError, ValueError):
    """Malformed or inconsistent input data (streams, datasets)."""


class LabelError(TotkitError, ValueError):
    """A target marker lies outside the post-TOR window."""


class ShapeError(TotkitError, ValueError):
    """Array shapes do not agree."""


class NonFiniteError(TotkitError, FloatingPointError):
    """NaN or Inf encountered at a layer boundary."""


class TrainingError(TotkitError, RuntimeError):
    """Training aborted (e.g. non-finite loss)."""


class CheckpointError(TotkitError, ValueError):
    """Checkpoint is corrupt, has a wrong version, or does not match."""
