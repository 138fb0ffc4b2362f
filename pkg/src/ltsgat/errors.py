"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes; the message names both."""


class GraphCycleError(RuntimeError):
    """The differentiation graph is not a DAG."""


class ConfigError(ValueError):
    """A configuration file or override is invalid."""


class DataFormatError(ValueError):
    """An on-disk dataset, feature, or checkpoint artifact is malformed."""


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss or gradient.

    Carries the last parameter snapshot known to be finite so callers can
    checkpoint it before giving up.
    """

    def __init__(self, message, last_good=None, history=None):
        super().__init__(message)
        self.last_good = last_good
        self.history = history
