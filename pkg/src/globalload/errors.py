"""Exception types shared across the pipeline."""


class GlobalLoadError(Exception):
    """Base class for all pipeline errors."""


class EmptyInputError(GlobalLoadError, ValueError):
    pass


class GapError(GlobalLoadError, ValueError):
    def __init__(self, series_id, timestamp):
        super().__init__(f"gap in 30-min grid for series {series_id!r} at {timestamp}")
        self.series_id = series_id
        self.timestamp = timestamp


class DuplicateError(GlobalLoadError, ValueError):
    pass


class GridError(GlobalLoadError, ValueError):
    pass


class InsufficientDataError(GlobalLoadError, ValueError):
    pass


class ShapeError(GlobalLoadError, ValueError):
    pass


class NumericError(GlobalLoadError, ArithmeticError):
    pass


class CardinalityError(GlobalLoadError, ValueError):
    pass


class UnknownSeriesError(GlobalLoadError, KeyError):
    pass


class DegenerateWindow(GlobalLoadError, ZeroDivisionError):
    """Seasonal-naive MAE of a window is zero, so MASE is undefined."""


class ZeroActualError(GlobalLoadError, ZeroDivisionError):
    pass


class NormalizationError(GlobalLoadError, ValueError):
    pass
