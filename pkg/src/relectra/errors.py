"""Exception types shared across the pipeline."""


class ConfigError(ValueError):
    """Invalid configuration value or cross-field invariant."""

    def __init__(self, message: str, key: str = None):
        super().__init__(message)
        self.key = key


class DataError(ValueError):
    """Missing or unusable input data."""


class LengthError(ValueError):
    """Sequence longer than the model supports."""


class AnnotationError(ValueError):
    """Overlapping or out-of-range entity spans."""


class CoverageError(ValueError):
    """Window predictions leave a position uncovered."""


class NumericError(FloatingPointError):
    """A loss or metric became NaN/Inf."""
