"""Exception hierarchy shared by all subpackages."""


class NilmError(Exception):
    """Base class for all errors raised by onoff_nilm."""


class FormatError(NilmError):
    """A file or directory does not follow the expected layout."""


class DataError(NilmError):
    """Input data is present but unusable (empty, non-monotone, unparseable)."""


class ConfigurationError(NilmError, ValueError):
    """Parameters violate a documented invariant."""


class UnsupportedCombinationError(ConfigurationError):
    """A (model, dataset, group, DiT, AD) cell has no published training configuration."""


class TrainingDivergenceError(NilmError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, loss):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"non-finite training loss {loss!r} at epoch {epoch}")


class UndefinedMetricError(NilmError, ValueError):
    """A metric is undefined for the given input (e.g. zero total support)."""
