"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid sizes, fractions, hyperparameters or config files."""


class ShapeError(ValueError):
    """Array dimensions do not match the model."""


class NumericError(ArithmeticError):
    """A non-finite value appeared during a computation."""


class NumericWarning(RuntimeWarning):
    """A computation finished but its result may be unreliable."""


class CheckpointError(ValueError):
    """Malformed checkpoint document."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint written by an unsupported format version."""
