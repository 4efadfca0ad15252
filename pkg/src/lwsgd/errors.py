"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes; the message names both."""


class FormatError(ValueError):
    """A binary file (IDX, CIFAR batch, checkpoint) is malformed."""


class ConfigError(ValueError):
    """An experiment configuration is invalid."""


class StateError(RuntimeError):
    """An object was used out of sequence (stale or consumed tape, ...)."""


class RunAborted(RuntimeError):
    """Training hit a non-finite loss and was stopped."""

    def __init__(self, epoch, message=""):
        self.epoch = epoch
        super().__init__(message or f"run aborted at epoch {epoch}: non-finite loss")
