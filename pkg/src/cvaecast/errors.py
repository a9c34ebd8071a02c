"""Exception hierarchy; each family maps onto one CLI exit code."""


class CvaeCastError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(CvaeCastError):
    """Invalid run configuration or command-line usage."""

    exit_code = 1


class ShapeError(CvaeCastError, ValueError):
    """Array dimensions do not match what an operation expects."""

    exit_code = 2


class CacheError(CvaeCastError):
    """A forward cache does not belong to the network it is used with."""

    exit_code = 2


class DataError(CvaeCastError, ValueError):
    """Malformed or unusable input data."""

    exit_code = 2


class LoadError(DataError):
    pass


class DegenerateSeriesError(DataError):
    pass


class CalendarError(DataError):
    pass


class MetadataError(DataError):
    pass


class FeasibilityError(DataError):
    """Not enough observations for the requested estimator."""


class ModelFileError(DataError):
    pass


class CorruptModelError(ModelFileError):
    pass


class ModelVersionError(ModelFileError):
    pass


class NumericError(CvaeCastError, ArithmeticError):
    """Numerical failure during training or estimation."""

    exit_code = 3


class TrainingDivergenceError(NumericError):
    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message if epoch is None else f"{message} (epoch {epoch})")
        self.epoch = epoch


class EstimationError(NumericError):
    pass


class CalendarWarning(UserWarning):
    """A rebalance date could not be placed on the trading-day list."""


class NearUnitRootWarning(UserWarning):
    """Fitted AR coefficient sits on the stationarity boundary."""
