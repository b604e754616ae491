"""Flexible hazard estimation on a daily grid, and yearly-block local hazards.

The spline model has reciprocal hazard

    r(z) = sigma + gamma * z / 365 + sum_k beta_k * (kappa_k - z / 365)_+^3

for integer days ``z = 1, ..., x_max`` above the base age, hazard
``h = 1 / r`` per year and cumulative hazard ``H(z) = sum_{y <= z} h(y) / 365``.
Beyond the last knot ``r`` is linear, i.e. generalized Pareto.  Day ``z`` has
probability ``S(z - 1) - S(z)`` with ``S = exp(-H)``, so the probabilities and
``S(x_max)`` sum to one exactly.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import optimize, stats

from ._parallel import pmap
from .distributions import DAYS_PER_YEAR
from .exceptions import DataError, FitError, InferenceError
from .lifetimes import Scheme, as_sample
from .likelihood import fit_mle

logger = logging.getLogger(__name__)

DAYS_IN_HAZARD_YEAR = 365.0
DEFAULT_HORIZON_YEARS = 16
MAX_FAILURE_RATE = 0.05
_PENALTY = 1e10
MIN_RECIPROCAL_HAZARD = 1e-9

HAZARD_COLUMNS = ("age_days", "hazard", "lo_pointwise", "hi_pointwise",
                  "lo_simultaneous", "hi_simultaneous")


# -- model ------------------------------------------------------------------

@dataclass(frozen=True)
class SplineHazardModel:
    sigma: float
    gamma: float
    knots: tuple = ()
    coefficients: tuple = ()
    base_age: float = 105.0
    x_max_days: int = round(DEFAULT_HORIZON_YEARS * DAYS_PER_YEAR)

    @property
    def K(self):
        return len(self.knots)

    def basis(self, days=None):
        """Design matrix ``[1, z/365, (kappa_k - z/365)_+^3]`` on the day grid."""
        z = self.days() if days is None else np.asarray(days, dtype=float)
        return _basis(z, np.asarray(self.knots, dtype=float))

    def days(self):
        return np.arange(1, self.x_max_days + 1, dtype=float)

    def theta(self):
        return np.concatenate([[self.sigma, self.gamma], self.coefficients])

    def reciprocal_hazard(self, days=None):
        return self.basis(days) @ self.theta()

    def hazard(self, days=None):
        r = self.reciprocal_hazard(days)
        with np.errstate(divide="ignore"):
            return np.where(r > 0, 1.0 / r, np.inf)

    def cumulative_hazard(self):
        """``H(z)`` for ``z = 0, ..., x_max``."""
        return np.concatenate([[0.0], np.cumsum(self.hazard()) / DAYS_IN_HAZARD_YEAR])

    def survival(self):
        return np.exp(-self.cumulative_hazard())

    def pmf(self):
        """``Pr(X = z)`` for ``z = 1, ..., x_max``."""
        H = self.cumulative_hazard()
        return np.exp(-H[:-1]) * -np.expm1(-(H[1:] - H[:-1]))

    def feasible(self):
        return bool(np.all(self.reciprocal_hazard() > 0))

    def to_dict(self):
        return {"sigma": self.sigma, "gamma": self.gamma, "knots": list(self.knots),
                "coefficients": list(self.coefficients), "base_age": self.base_age,
                "x_max_days": self.x_max_days}


def _basis(z, knots):
    y = z / DAYS_IN_HAZARD_YEAR
    cols = [np.ones_like(y), y] + [np.maximum(k - y, 0.0) ** 3 for k in knots]
    return np.column_stack(cols)


def random_knots(K, rng):
    """One knot drawn uniformly in each unit bin centred at 1, ..., K years."""
    centres = np.arange(1, K + 1, dtype=float)
    return tuple(np.sort(centres + rng.uniform(-0.5, 0.5, size=K)))


# -- data on the day grid ---------------------------------------------------

@dataclass(frozen=True)
class DayData:
    """Integer-day view of a sample: exit day, offset day, upper day, status."""

    x: np.ndarray
    s: np.ndarray
    up: np.ndarray
    dead: np.ndarray
    scheme: Scheme
    x_max: int

    @classmethod
    def from_sample(cls, sample, x_max):
        to_days = lambda v: np.rint(np.asarray(v) * DAYS_PER_YEAR).astype(np.int64)
        x = np.maximum(to_days(sample.x), 1)
        s = np.minimum(to_days(sample.lower), x - 1)
        up = to_days(np.minimum(sample.upper, 1e6))
        dead = sample.dead.copy()
        beyond = x > x_max
        if beyond.any():
            # lives past the grid enter as survivors to x_max
            logger.info("%d record(s) beyond the day grid treated as censored at x_max",
                        int(beyond.sum()))
            dead &= ~beyond
            x = np.minimum(x, x_max)
        if np.any(s >= x_max):
            raise DataError("offsets beyond the day grid; raise x_max")
        up = np.clip(up, x, x_max)
        return cls(x, s, up, dead, sample.scheme, int(x_max))

    @cached_property
    def counts(self):
        """Per-day weights of the parameter-free terms, and deaths per day."""
        m = self.x_max + 1
        d = self.dead
        w = -(np.bincount(self.x[~d], minlength=m) + np.bincount(self.x[d] - 1, minlength=m))
        if self.scheme is Scheme.LTRC:
            w = w + np.bincount(self.s, minlength=m)
        return w.astype(float), np.bincount(self.x[d], minlength=m)[1:].astype(float)

    def take(self, idx):
        return DayData(self.x[idx], self.s[idx], self.up[idx], self.dead[idx],
                       self.scheme, self.x_max)


def _loglik_grad(theta, B, data, need_grad=True):
    """Log-likelihood and gradient of the discrete model at ``theta``.

    Sums of ``H`` at record-specific days collapse to per-day weights,
    ``sum_i c_i H(a_i) = sum_y hd(y) C(y)`` with ``C`` the reverse cumulative
    sum of the ``c_i`` binned at ``a_i``; the gradient uses the same device
    with the derivative of each term in ``H`` as the weight.
    """
    r = B @ theta
    if np.any(r <= 0):
        return -np.inf, None
    h = 1.0 / r
    hd = h / DAYS_IN_HAZARD_YEAR
    q = -np.expm1(-hd)
    w, deaths = data.counts
    rcum = lambda v: np.cumsum(v[::-1])[::-1][1:]
    if data.scheme is Scheme.LTRC:
        C = rcum(w)
        ll = float(hd @ C + deaths @ np.log(q))
        Cg = C
    else:
        H = np.concatenate([[0.0], np.cumsum(hd)])
        Ss, Su = np.exp(-H[data.s]), np.exp(-H[data.up])
        diff = Ss - Su
        ll = float(hd @ rcum(w) + deaths @ np.log(q) - np.sum(np.log(diff)))
        if need_grad:
            # derivative of -log(S(s) - S(up)) in H(s) and H(up)
            m = w.size
            w = (w + np.bincount(data.s, weights=Ss / diff, minlength=m)
                 - np.bincount(data.up, weights=Su / diff, minlength=m))
            Cg = rcum(w)
    if not need_grad:
        return ll, None
    dlq = np.exp(-hd) / q
    g = B.T @ (-(h * h) / DAYS_IN_HAZARD_YEAR * (Cg + deaths * dlq))
    return ll, g


@dataclass
class SplineFit:
    model: SplineHazardModel
    loglik: float
    converged: bool
    iterations: int
    knot_seed: int | None = None
    message: str = ""
    extra: dict = field(default_factory=dict)


def _optimise(B, data, theta0, scale, polish=True, ftol=1e-15):
    """Maximise the discrete log-likelihood; parameters scaled by ``scale``.

    The optimiser works with ``rho = sigma + gamma * T``, the reciprocal
    hazard at the grid end ``T``, in place of ``gamma``.  Beyond the last knot
    ``r`` interpolates linearly between ``sigma`` and ``rho``, so positivity
    there, where the constraint is active when no one is at risk, becomes the
    bound ``rho >= MIN_RECIPROCAL_HAZARD``.
    """
    k = theta0.size
    T = B[-1, 1]
    M = np.eye(k)
    M[1, :2] = -1.0 / T, 1.0 / T  # gamma = (rho - sigma) / T
    t0 = theta0.copy()
    t0[1] = max(theta0[0] + theta0[1] * T, 2 * MIN_RECIPROCAL_HAZARD)
    tscale = scale.copy()
    tscale[1] = 1.0

    def negf(u):
        ll, g = _loglik_grad(M @ (u * tscale), B, data)
        if not np.isfinite(ll):
            return _PENALTY, np.zeros_like(u)
        return -ll, -(M.T @ g) * tscale

    bounds = [(MIN_RECIPROCAL_HAZARD, None), (MIN_RECIPROCAL_HAZARD, None)] + [(None, None)] * (k - 2)
    res = optimize.minimize(negf, t0 / tscale, jac=True, method="L-BFGS-B", bounds=bounds,
                            options={"maxiter": 2000, "ftol": ftol, "gtol": 1e-9})
    theta = M @ (res.x * tscale)
    ll = -res.fun
    # Newton polish with the analytic gradient
    for _ in range(5 if polish else 0):
        llc, g = _loglik_grad(theta, B, data)
        Hm = _grad_jacobian(theta, B, data)
        try:
            step = -np.linalg.solve(Hm, g)
        except np.linalg.LinAlgError:
            break
        new_ll = _loglik_grad(theta + step, B, data, need_grad=False)[0]
        if not np.isfinite(new_ll) or new_ll < llc - 1e-12:
            break
        theta = theta + step
        ll = new_ll
        if np.max(np.abs(step) / np.maximum(np.abs(theta), 1e-3)) < 1e-12:
            break
    return theta, ll, res


def _grad_jacobian(theta, B, data):
    """Hessian by central differences of the analytic gradient."""
    k = theta.size
    Hm = np.empty((k, k))
    for i in range(k):
        h = 1e-6 * max(abs(theta[i]), 1e-2)
        e = np.zeros(k)
        e[i] = h
        gp = _loglik_grad(theta + e, B, data)[1]
        gm = _loglik_grad(theta - e, B, data)[1]
        if gp is None or gm is None:
            return np.full((k, k), np.nan)
        Hm[:, i] = (gp - gm) / (2 * h)
    return 0.5 * (Hm + Hm.T)


def _starting_values(sample):
    try:
        fit = fit_mle(sample, "gpd")
        sigma, gamma = fit.model.sigma, fit.model.gamma
    except FitError:
        sigma, gamma = fit_mle(sample, "exp").model.sigma, 0.0
    if gamma < 0:
        # keep r positive over the whole grid
        gamma = max(gamma, -0.9 * sigma / DEFAULT_HORIZON_YEARS)
    return sigma, gamma


def fit_spline_hazard(data, K=5, knot_seed=0, knots=None, x_max_days=None, start=None,
                      polish=True):
    """Maximum likelihood fit of the spline reciprocal-hazard model.

    Parameters
    ----------
    data : Dataset, Sample or DayData
        Exceedances of the base age (offsets in days are derived from the
        sample).
    K : int
        Number of knots; ``K = 0`` is the generalized Pareto model on the
        day grid.
    knot_seed : int
        Seed for :func:`random_knots`; ignored when ``knots`` is given.
    knots : sequence of float, optional
        Knots in years above the base age.

    Returns
    -------
    SplineFit
    """
    if isinstance(data, DayData):
        days, sample = data, None
        base_age = math.nan
    else:
        sample = as_sample(data)
        base_age = sample.u
        x_max_days = x_max_days or round(DEFAULT_HORIZON_YEARS * DAYS_PER_YEAR)
        days = DayData.from_sample(sample, x_max_days)
    x_max_days = days.x_max
    if not days.dead.any():
        raise FitError("no deaths on the day grid")
    if knots is None:
        knots = random_knots(K, np.random.default_rng(knot_seed)) if K else ()
    knots = tuple(float(k) for k in knots)
    z = np.arange(1, x_max_days + 1, dtype=float)
    B = _basis(z, np.asarray(knots))
    if start is None:
        if sample is None:
            raise ValueError("starting values are needed for day-grid input")
        start = _starting_values(sample)
    theta0 = np.concatenate([start[:2], np.zeros(len(knots))])
    if not np.all(B @ theta0 > 0):
        theta0[1] = 0.0
    # cubic terms reach kappa^3; scale coefficients to unit influence
    scale = np.concatenate([[1.0, 0.1], 1.0 / np.maximum(np.asarray(knots), 0.5) ** 3])
    ftol = 1e-15 if polish else 1e-12
    theta, ll, res = _optimise(B, days, theta0, scale, polish, ftol)
    model = SplineHazardModel(float(theta[0]), float(theta[1]), knots,
                              tuple(float(b) for b in theta[2:]), base_age, x_max_days)
    if not model.feasible():
        raise FitError("reciprocal hazard is not positive on the day grid")
    r_min = float(model.reciprocal_hazard().min())
    # the positivity constraint is active where no one is at risk
    at_boundary = r_min < 1e-3 * abs(model.sigma)
    if at_boundary:
        logger.info("spline fit on the positivity boundary (min r = %.3g)", r_min)
    return SplineFit(model, float(ll), bool(res.success), int(res.nit), knot_seed,
                     str(res.message), {"min_reciprocal_hazard": r_min,
                                        "at_boundary": at_boundary})


def spline_loglik(model, data):
    """Discrete log-likelihood of ``model`` (``-inf`` if infeasible)."""
    sample = as_sample(data) if not isinstance(data, DayData) else None
    days = data if sample is None else DayData.from_sample(sample, model.x_max_days)
    return _loglik_grad(model.theta(), model.basis(), days, need_grad=False)[0]


def spline_gradient(model, data):
    sample = as_sample(data) if not isinstance(data, DayData) else None
    days = data if sample is None else DayData.from_sample(sample, model.x_max_days)
    return _loglik_grad(model.theta(), model.basis(), days)[1]


# -- bootstrap envelopes ----------------------------------------------------

@dataclass
class HazardEnvelope:
    days: np.ndarray
    hazard: np.ndarray
    lo_pointwise: np.ndarray
    hi_pointwise: np.ndarray
    lo_simultaneous: np.ndarray
    hi_simultaneous: np.ndarray
    n_boot: int
    n_failed: int
    seed: int
    base: SplineFit | None = None
    curves: np.ndarray | None = None

    def contains(self, curve, simultaneous=True):
        lo, hi = ((self.lo_simultaneous, self.hi_simultaneous) if simultaneous
                  else (self.lo_pointwise, self.hi_pointwise))
        curve = np.broadcast_to(curve, self.days.shape)
        return bool(np.all((curve >= lo) & (curve <= hi)))

    def rows(self):
        return [dict(zip(HAZARD_COLUMNS, vals)) for vals in zip(
            self.days, self.hazard, self.lo_pointwise, self.hi_pointwise,
            self.lo_simultaneous, self.hi_simultaneous)]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=HAZARD_COLUMNS)
            w.writeheader()
            for row in self.rows():
                w.writerow({k: (int(v) if k == "age_days" else f"{v:.6g}") for k, v in row.items()})


def simultaneous_band(curves, coverage=0.95, level=0.95):
    """Band containing at least ``coverage`` of the curves entirely.

    Each curve's deviation from the pointwise median is measured in units
    of the pointwise ``level`` half-widths (upper or lower as appropriate);
    its sup over the grid is its extremity.  The band is the median widened
    by the ``coverage`` quantile of the extremities.
    """
    curves = np.asarray(curves, dtype=float)
    alpha = 1.0 - level
    lo, mid, hi = np.percentile(curves, [100 * alpha / 2, 50, 100 * (1 - alpha / 2)], axis=0)
    up, down = hi - mid, mid - lo
    with np.errstate(divide="ignore", invalid="ignore"):
        dev = np.maximum(np.where(curves > mid, (curves - mid) / up, 0.0),
                         np.where(curves < mid, (mid - curves) / down, 0.0))
    extremity = dev.max(axis=1)
    q = float(np.quantile(extremity, coverage, method="inverted_cdf"))
    widen = lambda w: np.where(w > 0, q * w, 0.0)
    return mid - widen(down), mid + widen(up)


def _boot_chunk(args):
    days, start, K, seed, eval_days, idx = args
    out = np.full((len(idx), eval_days.size), np.nan)
    n = days.x.size
    for row, b in enumerate(idx):
        rng = np.random.default_rng([seed, b])
        pick = rng.integers(0, n, size=n)
        knots = random_knots(K, rng) if K else ()
        try:
            fit = fit_spline_hazard(days.take(pick), K=K, knots=knots, start=start, polish=False)
            out[row] = fit.model.hazard(eval_days)
        except FitError:
            pass
    return out


def bootstrap_hazard_envelope(data, n_boot=500, K=5, seed=0, eval_days=None,
                              coverage=0.95, base_knot_seed=None, threads=1, keep_curves=False):
    """Pointwise and simultaneous bootstrap bands for the spline hazard.

    Records are resampled with replacement (each keeping its offset and
    status) and the model is refitted with fresh random knots.  Replicate
    ``b`` draws both from the stream ``(seed, b)``.

    Returns
    -------
    HazardEnvelope
        Bands on ``eval_days`` (default: every 7th day up to the last
        observed exit).
    """
    sample = as_sample(data)
    x_max = round(DEFAULT_HORIZON_YEARS * DAYS_PER_YEAR)
    days = DayData.from_sample(sample, x_max)
    if eval_days is None:
        # beyond the last exit the curves reflect only the positivity constraint
        eval_days = np.arange(1, int(days.x.max()) + 1, 7)
    eval_days = np.asarray(eval_days)
    base = fit_spline_hazard(sample, K=K, knot_seed=seed if base_knot_seed is None else base_knot_seed)
    start = _starting_values(sample)
    chunks = [range(a, min(a + 25, n_boot)) for a in range(0, n_boot, 25)]
    args = [(days, start, K, seed, eval_days, idx) for idx in chunks]
    curves = np.vstack(pmap(_boot_chunk, args, threads=threads))
    failed = int(np.isnan(curves).any(axis=1).sum())
    if failed > MAX_FAILURE_RATE * n_boot:
        raise InferenceError(f"{failed} of {n_boot} bootstrap refits failed")
    curves = curves[~np.isnan(curves).any(axis=1)]
    lo_pw, hi_pw = np.percentile(curves, [2.5, 97.5], axis=0)
    lo_s, hi_s = simultaneous_band(curves, coverage)
    return HazardEnvelope(eval_days, base.model.hazard(eval_days), lo_pw, hi_pw,
                          np.minimum(lo_s, lo_pw), np.maximum(hi_s, hi_pw), n_boot, failed, seed,
                          base, curves if keep_curves else None)


# -- yearly blocks ----------------------------------------------------------

@dataclass
class HazardBlock:
    age_lo: float
    age_hi: float
    deaths: int
    exposure: float
    hazard: float
    lower: float
    upper: float
    flag: str = ""


def local_hazard_blocks(data, ages, level=0.95):
    """Constant-hazard estimates on disjoint age intervals.

    Each record contributes the part of its observed interval (offset to
    exit, in ages) lying in an interval, and its death to the interval
    containing it.  The hazard is deaths over exposure; the interval comes
    from the exponential-scale Wald interval mapped through the reciprocal.
    An interval without deaths gets hazard 0, the one-sided upper bound
    ``-log(1 - level) / exposure`` and a flag.

    Parameters
    ----------
    ages : sequence of (float, float)
        ``(a, b)`` age intervals; ``b`` may be ``inf``.
    """
    sample = as_sample(data)
    if sample.scheme is not Scheme.LTRC:
        raise DataError("yearly-block hazards need left-truncated, right-censored data")
    lo_age = sample.u + sample.lower
    hi_age = sample.u + sample.x
    z = stats.norm.ppf(0.5 + level / 2)
    out = []
    prev = -np.inf
    for a, b in ages:
        if not b > a or a < prev:
            raise ValueError("age intervals must be increasing and disjoint")
        prev = b
        exp_ = np.clip(np.minimum(hi_age, b) - np.maximum(lo_age, a), 0.0, None)
        E = float(exp_.sum())
        d = int(np.sum(sample.dead & (hi_age > a) & (hi_age <= b)))
        if E <= 0:
            out.append(HazardBlock(a, b, d, 0.0, math.nan, math.nan, math.nan, "no exposure"))
        elif d == 0:
            out.append(HazardBlock(a, b, 0, E, 0.0, 0.0, -math.log(1 - level) / E, "no deaths"))
        else:
            sig = E / d
            s_lo, s_hi = sig - z * sig / math.sqrt(d), sig + z * sig / math.sqrt(d)
            out.append(HazardBlock(a, b, d, E, d / E, 1.0 / s_hi,
                                   1.0 / s_lo if s_lo > 0 else math.inf))
    return out


def yearly_intervals(first_age, last_age, open_last=True):
    """``[(a, a + 1), ...]``, the last one open-ended if ``open_last``."""
    edges = list(range(int(first_age), int(last_age) + 1))
    out = [(float(a), float(a + 1)) for a in edges[:-1]]
    out.append((float(edges[-1]), math.inf if open_last else float(edges[-1] + 1)))
    return out


def homogeneity_test(blocks):
    """Pearson chi-square test of a common hazard across blocks.

    Blocks without exposure are skipped; NaN is returned when fewer than two
    blocks remain or there are no deaths.
    """
    use = [b for b in blocks if b.exposure > 0]
    d = np.array([b.deaths for b in use], dtype=float)
    E = np.array([b.exposure for b in use])
    if len(use) < 2 or d.sum() == 0:
        return math.nan, math.nan
    rate = d.sum() / E.sum()
    expected = rate * E
    stat = float(np.sum((d - expected) ** 2 / expected))
    return stat, float(stats.chi2.sf(stat, len(use) - 1))
