"""Exception hierarchy shared by the analysis modules."""


class LongevityError(Exception):
    """Base class for all package errors."""


class DataError(LongevityError, ValueError):
    """Malformed input or a record that violates its sampling frame."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class OutOfSupportError(LongevityError, ValueError):
    """A quantity was requested at or beyond a finite upper endpoint."""


class DegenerateIntervalError(LongevityError, ValueError):
    """A truncation interval carries zero probability under the model."""


class DegenerateSupportError(LongevityError, ValueError):
    """A likelihood contribution has a zero truncation denominator."""


class FitError(LongevityError, RuntimeError):
    """Numerical optimisation failed or an estimator is undefined."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class InferenceError(LongevityError, RuntimeError):
    """A test or simulation run could not produce a valid result."""
