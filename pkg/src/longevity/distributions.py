"""Parametric models for excess lifetimes above a threshold age.

Three families are provided: the generalized Pareto distribution (GPD), its
exponential special case and the Gompertz distribution.  All quantities are in
years of excess lifetime.  Every method accepts scalars or numpy arrays.

The survival function is the primitive: densities, quantiles and truncated
sampling are all built on ``logsf`` and its inverse so that extreme tails and
the exponential boundary (``gamma = 0`` or ``beta = 0``) are handled without
cancellation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateIntervalError, OutOfSupportError

#: below this |gamma| the GPD uses a second-order series in gamma
GAMMA_SERIES_CUTOFF = 1e-6
#: below this beta the Gompertz model is evaluated as an exponential
BETA_ZERO_CUTOFF = 1e-8

DAYS_PER_YEAR = 365.25


def _as_float(x):
    return np.asarray(x, dtype=float)


def _scalar_or_array(a):
    a = np.asarray(a)
    return a.item() if a.ndim == 0 else a


class LifetimeModel:
    """Common interface; subclasses implement ``logsf``, ``logpdf``,
    ``inverse_logsf`` and ``hazard``."""

    family = ""
    param_names: tuple = ()

    @property
    def params(self):
        return tuple(getattr(self, name) for name in self.param_names)

    @property
    def endpoint(self):
        """Upper end of the support of the excess lifetime."""
        return np.inf

    def sf(self, x):
        return _scalar_or_array(np.exp(self.logsf(x)))

    def cdf(self, x):
        return _scalar_or_array(-np.expm1(self.logsf(x)))

    def pdf(self, x):
        return _scalar_or_array(np.exp(self.logpdf(x)))

    def quantile(self, p):
        p = _as_float(p)
        if np.any((p < 0) | (p > 1)):
            raise ValueError("probabilities must lie in [0, 1]")
        with np.errstate(divide="ignore"):
            return self.inverse_logsf(np.log1p(-p))

    def survive_one_year(self, x=0.0):
        """Probability of surviving one more year given survival to ``x``."""
        x = _as_float(x)
        if np.any(x < 0):
            raise ValueError("x must be non-negative")
        with np.errstate(invalid="ignore"):
            out = np.exp(self.logsf(x + 1.0) - self.logsf(x))
        out = np.where(np.isfinite(self.logsf(x + 1.0)), out, 0.0)
        return _scalar_or_array(out)

    def sample(self, size, rng):
        u = rng.random(size)
        return self.inverse_logsf(np.log(u))

    def to_dict(self):
        d = {"family": self.family}
        d.update(zip(self.param_names, (float(v) for v in self.params)))
        return d


@dataclass(frozen=True)
class Exponential(LifetimeModel):
    """Exponential excess lifetimes with mean ``sigma`` (constant hazard)."""

    sigma: float

    family = "exp"
    param_names = ("sigma",)

    def __post_init__(self):
        if not self.sigma > 0 or not np.isfinite(self.sigma):
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    def logsf(self, x):
        x = _as_float(x)
        return np.where(x > 0, -x / self.sigma, 0.0)

    def logpdf(self, x):
        x = _as_float(x)
        return np.where(x >= 0, -np.log(self.sigma) - x / self.sigma, -np.inf)

    def inverse_logsf(self, logs):
        return -self.sigma * _as_float(logs)

    def hazard(self, x):
        x = _as_float(x)
        return _scalar_or_array(np.full_like(x, 1.0 / self.sigma))


@dataclass(frozen=True)
class GPD(LifetimeModel):
    """Generalized Pareto distribution with scale ``sigma`` and shape ``gamma``.

    ``gamma < 0`` gives a finite endpoint at ``-sigma / gamma``.
    """

    sigma: float
    gamma: float

    family = "gpd"
    param_names = ("sigma", "gamma")

    def __post_init__(self):
        if not self.sigma > 0 or not np.isfinite(self.sigma):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not np.isfinite(self.gamma):
            raise ValueError("gamma must be finite")

    @property
    def endpoint(self):
        return -self.sigma / self.gamma if self.gamma < 0 else np.inf

    def _cumhaz(self, y):
        """Cumulative hazard log1p(gamma*y)/gamma at y = x/sigma, inside the support."""
        g = self.gamma
        if abs(g) < GAMMA_SERIES_CUTOFF:
            return y - g * y**2 / 2 + g**2 * y**3 / 3
        return np.log1p(g * y) / g

    def logsf(self, x):
        x = np.maximum(_as_float(x), 0.0)
        y = x / self.sigma
        inside = 1.0 + self.gamma * y > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            out = -self._cumhaz(np.where(inside, y, 0.0))
        return np.where(inside, out, -np.inf)

    def logpdf(self, x):
        x = _as_float(x)
        y = x / self.sigma
        inside = (x >= 0) & (1.0 + self.gamma * y > 0)
        ys = np.where(inside, y, 0.0)
        out = -np.log(self.sigma) - np.log1p(self.gamma * ys) - self._cumhaz(ys)
        return np.where(inside, out, -np.inf)

    def inverse_logsf(self, logs):
        L = -_as_float(logs)
        g = self.gamma
        if abs(g) < GAMMA_SERIES_CUTOFF:
            return self.sigma * (L + g * L**2 / 2 + g**2 * L**3 / 6)
        with np.errstate(over="ignore"):
            return self.sigma * np.expm1(g * L) / g

    def hazard(self, x):
        x = _as_float(x)
        if np.any(x < 0) or np.any(x >= self.endpoint):
            raise OutOfSupportError(
                f"hazard requested outside the support [0, {self.endpoint})")
        return _scalar_or_array(1.0 / (self.sigma + self.gamma * x))


@dataclass(frozen=True)
class Gompertz(LifetimeModel):
    """Gompertz excess lifetimes, hazard ``exp(beta*x/sigma)/sigma``.

    ``beta = 0`` is the exponential distribution with mean ``sigma``.
    """

    sigma: float
    beta: float

    family = "gompertz"
    param_names = ("sigma", "beta")

    def __post_init__(self):
        if not self.sigma > 0 or not np.isfinite(self.sigma):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.beta >= 0 or not np.isfinite(self.beta):
            raise ValueError(f"beta must be non-negative, got {self.beta}")

    def _cumhaz(self, x):
        if self.beta < BETA_ZERO_CUTOFF:
            return x / self.sigma
        with np.errstate(over="ignore"):
            return np.expm1(self.beta * x / self.sigma) / self.beta

    def logsf(self, x):
        x = np.maximum(_as_float(x), 0.0)
        return -self._cumhaz(x)

    def logpdf(self, x):
        x = _as_float(x)
        xs = np.maximum(x, 0.0)
        lin = 0.0 if self.beta < BETA_ZERO_CUTOFF else self.beta * xs / self.sigma
        out = -np.log(self.sigma) + lin - self._cumhaz(xs)
        return np.where(x >= 0, out, -np.inf)

    def inverse_logsf(self, logs):
        L = -_as_float(logs)
        if self.beta < BETA_ZERO_CUTOFF:
            return self.sigma * L
        return self.sigma * np.log1p(self.beta * L) / self.beta

    def hazard(self, x):
        x = _as_float(x)
        if self.beta < BETA_ZERO_CUTOFF:
            return _scalar_or_array(np.full_like(x, 1.0 / self.sigma))
        return _scalar_or_array(np.exp(self.beta * x / self.sigma) / self.sigma)


# -- functional interface ---------------------------------------------------

def cdf(model, x):
    return model.cdf(x)


def hazard(model, x):
    return model.hazard(x)


def survive_one_year(model, x=0.0):
    """S(x + 1) / S(x); zero when x + 1 lies beyond a finite endpoint."""
    return model.survive_one_year(x)


def conditional_cdf(model, x, lower, upper=np.inf):
    """Distribution function of X given lower < X <= upper."""
    x = _as_float(x)
    ls_lo = model.logsf(lower)
    ls_up = model.logsf(upper)
    ls_x = model.logsf(np.clip(x, lower, upper))
    num = -np.expm1(ls_x - ls_lo)
    den = -np.expm1(ls_up - ls_lo)
    return _scalar_or_array(num / den)


def sample_truncated(model, lower, upper, rng, size=None):
    """Draw X | lower < X <= upper by inversion of the survival function.

    ``lower`` and ``upper`` broadcast against each other; ``upper`` may be
    ``np.inf``.  Raises :class:`DegenerateIntervalError` if any interval has
    zero probability.
    """
    lower = _as_float(lower)
    upper = _as_float(upper)
    if size is None:
        size = np.broadcast(lower, upper).shape
    ls_lo = np.broadcast_to(model.logsf(lower), size)
    ls_up = np.broadcast_to(model.logsf(upper), size)
    with np.errstate(invalid="ignore"):
        ratio = np.exp(ls_up - ls_lo)
    bad = ~(ratio < 1.0) | ~np.isfinite(ls_lo)
    if np.any(bad):
        raise DegenerateIntervalError(
            f"{int(np.sum(bad))} truncation interval(s) have zero probability under {model}")
    u = rng.random(size)
    logs = ls_lo + np.log1p(-u * (1.0 - ratio))
    x = model.inverse_logsf(logs)
    return np.clip(x, np.broadcast_to(lower, size), np.broadcast_to(upper, size))


# -- serialisation ----------------------------------------------------------

_FAMILIES = {"gpd": GPD, "exp": Exponential, "exponential": Exponential,
             "gompertz": Gompertz}


def model_from_dict(d):
    family = d["family"].lower()
    cls = _FAMILIES.get(family)
    if cls is None:
        raise ValueError(f"unknown family {d['family']!r}")
    return cls(*(float(d[name]) for name in cls.param_names))


def parse_model(spec):
    """Parse a compact spec such as ``exp:1.45``, ``gpd:1.47,-0.01`` or
    ``gompertz:1.47,0.02``."""
    family, _, rest = spec.partition(":")
    cls = _FAMILIES.get(family.strip().lower())
    if cls is None or not rest:
        raise ValueError(f"cannot parse model spec {spec!r}")
    values = [float(v) for v in rest.split(",")]
    if len(values) != len(cls.param_names):
        raise ValueError(f"{cls.__name__} needs {len(cls.param_names)} parameter(s)")
    return cls(*values)
