"""Exception and warning types raised across the package."""


class D2DFLError(Exception):
    """Base class for all package errors."""


class ConfigError(D2DFLError, ValueError):
    """A configuration value or combination is invalid."""


class InvalidNetworkError(D2DFLError, ValueError):
    """A network cannot be built from the requested parameters."""


class ConstraintViolationError(D2DFLError, ValueError):
    """An offloading quantity falls outside its admissible range."""


class AggregationError(D2DFLError, RuntimeError):
    """Global aggregation has no positive weight to average with."""


class EnumerationTooLargeError(D2DFLError, ValueError):
    """Exhaustive sampling search requested on a network that is too large."""


class EmptyDatasetWarning(UserWarning):
    """A device had no data and skipped its local update."""


class InfeasibleStartWarning(UserWarning):
    """A device already exceeds its processing capacity before offloading."""


