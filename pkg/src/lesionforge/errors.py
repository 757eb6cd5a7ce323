"""Exception types shared across the engine."""


class LesionForgeError(Exception):
    """Base class for all engine errors."""


class ShapeError(LesionForgeError, ValueError):
    """Tensor shapes are inconsistent with the requested operation."""


class StateError(LesionForgeError, RuntimeError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class ConfigError(LesionForgeError, ValueError):
    """A hyperparameter or configuration value is out of range or unknown."""


class LabelError(LesionForgeError, ValueError):
    """Labels are not valid one-hot rows / class indices."""


class LayoutError(LesionForgeError, ValueError):
    """A dataset directory does not follow the class-per-directory layout."""


class SplitError(LesionForgeError, ValueError):
    """A dataset cannot be split as requested (e.g. a class with < 2 samples)."""


class InputError(LesionForgeError, ValueError):
    """Invalid input to a metrics/evaluation operation (e.g. empty dataset)."""


class DegenerateBatchError(LesionForgeError, ValueError):
    """Batch statistics are undefined (fewer than 2 values per channel)."""


class NumericalAbort(LesionForgeError, RuntimeError):
    """Training produced a non-finite loss; carries the offending epoch/step."""

    def __init__(self, message, epoch=None, step=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class CheckpointError(LesionForgeError, ValueError):
    """Base class for checkpoint load failures."""


class CheckpointMagicError(CheckpointError):
    """File does not start with the checkpoint magic bytes."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported."""


class CheckpointTruncatedError(CheckpointError):
    """Checkpoint payload is shorter than the manifest declares."""

    def __init__(self, expected, actual):
        super().__init__(f"truncated checkpoint: expected {expected} bytes, got {actual}")
        self.expected = expected
        self.actual = actual
