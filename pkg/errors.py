"""
Error types shared by every module.

Validation errors mean the caller handed us something unusable (bad config,
wrong shapes, broken dataset); training errors mean a run went wrong after
it started. The CLI maps the first to exit code 1 and the second to 2.
"""


class ScdError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ScdError):
    """Invalid input, configuration or data."""


class ConfigError(ValidationError):
    """A configuration file or environment value could not be used."""


class ShapeError(ValidationError, ValueError):
    """Tensor shapes do not satisfy an operation's contract."""


class DatasetError(ValidationError):
    """A dataset directory is incomplete or inconsistent."""


class ClassCountError(ValidationError):
    """Class indices or class counts disagree between model and data."""


class CheckpointError(ValidationError):
    """A checkpoint or weights file could not be read."""


class TrainingError(ScdError):
    """A training or evaluation run failed after it started."""


class NonFiniteLossError(TrainingError):
    """A loss component became NaN or infinite."""

    def __init__(self, component, value):
        self.component = component
        self.value = value
        super().__init__(f"Non-finite loss component '{component}': {value}")
