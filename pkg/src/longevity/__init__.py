"""Likelihood analysis of extreme lifetimes observed through truncated,
censored sampling frames."""

from .distributions import GPD, Exponential, Gompertz, parse_model
from .exceptions import (DataError, FitError, InferenceError, LongevityError,
                         OutOfSupportError)
from .lifetimes import Dataset, Sample, SamplingFrame, Scheme, load_csv, save_csv
from .likelihood import FitResult, fit_mle

__version__ = "0.1.0"

__all__ = [
    "GPD", "Exponential", "Gompertz", "parse_model",
    "DataError", "FitError", "InferenceError", "LongevityError", "OutOfSupportError",
    "Dataset", "Sample", "SamplingFrame", "Scheme", "load_csv", "save_csv",
    "FitResult", "fit_mle", "__version__",
]
