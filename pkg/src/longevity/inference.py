"""Tests and interval estimates for threshold-exceedance models."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ._parallel import pmap
from .distributions import Exponential
from .exceptions import FitError, InferenceError
from .lifetimes import as_sample, resimulate
from .likelihood import (endpoint_profile, fit_gpd_profile, fit_mle, loglik)

logger = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.05


@dataclass
class TestResult:
    statistic: float
    p_value: float
    null_dist: str
    boundary: bool = False
    p_asymptotic: float | None = None
    n_replicates: int | None = None
    seed: int | None = None
    n_failed: int = 0
    mc_se: float | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self):
        d = {"statistic": float(self.statistic), "p_value": float(self.p_value),
             "null_dist": self.null_dist, "boundary": bool(self.boundary)}
        if self.p_asymptotic is not None:
            d["p_asymptotic"] = float(self.p_asymptotic)
        if self.n_replicates is not None:
            d.update(n_replicates=self.n_replicates, seed=self.seed,
                     n_failed=self.n_failed, mc_se=self.mc_se)
        d.update({k: v for k, v in self.details.items() if isinstance(v, (int, float, str, bool))})
        return d


# -- likelihood ratio tests -------------------------------------------------

def lrt_gamma_zero(data):
    """Likelihood ratio test of an exponential tail (gamma = 0) within the GPD."""
    sample = as_sample(data)
    gp = fit_mle(sample, "gpd")
    ex = fit_mle(sample, "exp")
    stat = max(2.0 * (gp.loglik - ex.loglik), 0.0)
    p = float(stats.chi2.sf(stat, 1))
    return TestResult(stat, p, "ChiSq1", details={
        "gamma_hat": gp.model.gamma, "sigma_hat": gp.model.sigma,
        "sigma_e_hat": ex.model.sigma, "loglik_gpd": gp.loglik, "loglik_exp": ex.loglik})


def directed_root(lrt_stat, gamma_hat):
    return math.copysign(math.sqrt(max(lrt_stat, 0.0)), gamma_hat) if gamma_hat != 0 else 0.0


def p_infinity_from(lrt_stat, gamma_hat):
    """Probability that gamma >= 0 from the directed likelihood root at 0."""
    return float(stats.norm.cdf(directed_root(lrt_stat, gamma_hat)))


def p_infinity(data):
    res = lrt_gamma_zero(data)
    return p_infinity_from(res.statistic, res.details["gamma_hat"])


def half_chi2_pvalue(w):
    """Asymptotic p-value for a boundary LRT, 0.5*chi2_0 + 0.5*chi2_1."""
    return 1.0 if w <= 0 else 0.5 * float(stats.chi2.sf(w, 1))


def boundary_lrt_gompertz(data):
    """LRT of beta = 0 (exponential) against beta > 0 in the Gompertz model."""
    sample = as_sample(data)
    gz = fit_mle(sample, "gompertz")
    ex = fit_mle(sample, "exp")
    w = 0.0 if gz.boundary else max(2.0 * (gz.loglik - ex.loglik), 0.0)
    p = half_chi2_pvalue(w)
    return TestResult(w, p, "HalfChiSqMixture", boundary=(w == 0.0), p_asymptotic=p,
                      details={"beta_hat": gz.model.beta, "sigma_hat": gz.model.sigma,
                               "sigma_e_hat": ex.model.sigma})


# -- parametric bootstrap ---------------------------------------------------

_TESTS = {
    "gompertz": boundary_lrt_gompertz,
    "gamma_zero": lrt_gamma_zero,
}


def _boot_replicate(args):
    sample, null_model, test, seed, index = args
    rng = np.random.default_rng([seed, index])
    sim = resimulate(sample, null_model, rng, keep_status=True)
    try:
        return _TESTS[test](sim).statistic
    except (FitError, FloatingPointError, ValueError):
        return math.nan


def bootstrap_p_value(data, test="gompertz", n_replicates=1000, seed=0, threads=1):
    """Parametric bootstrap p-value under the fitted exponential null.

    Replicates keep each record's entry time, offset and censoring indicator;
    deaths are redrawn from the null truncated to the observation window.  The
    replicate with index ``i`` uses the stream ``(seed, i)``.
    """
    if n_replicates < 100:
        raise ValueError("use at least 100 bootstrap replicates")
    sample = as_sample(data)
    observed = _TESTS[test](sample)
    null = Exponential(fit_mle(sample, "exp").model.sigma)
    args = [(sample, null, test, seed, i) for i in range(n_replicates)]
    wstar = np.array(pmap(_boot_replicate, args, threads=threads, chunksize=16))
    failed = int(np.isnan(wstar).sum())
    if failed > MAX_FAILURE_RATE * n_replicates:
        raise InferenceError(f"{failed} of {n_replicates} bootstrap fits failed")
    if failed:
        logger.warning("dropping %d failed bootstrap replicates", failed)
    wstar = wstar[~np.isnan(wstar)]
    # tolerance absorbs optimiser noise around exact ties such as w = 0
    p = float(np.mean(wstar >= observed.statistic - 1e-9))
    return TestResult(observed.statistic, p, f"Bootstrap({wstar.size})",
                      boundary=observed.boundary, p_asymptotic=observed.p_value,
                      n_replicates=n_replicates, seed=seed, n_failed=failed,
                      mc_se=math.sqrt(p * (1 - p) / wstar.size),
                      details={**observed.details, "replicates": wstar})


# -- profile likelihood intervals -------------------------------------------

@dataclass
class Interval:
    estimate: float
    lower: float
    upper: float
    level: float
    param: str

    def contains(self, value):
        return self.lower <= value <= self.upper

    def to_dict(self):
        return {"param": self.param, "estimate": self.estimate, "lower": self.lower,
                "upper": self.upper, "level": self.level}


def _bisect(f, inside, outside, target, tol=1e-6, max_iter=200):
    """Root of f = target between ``inside`` (f > target) and ``outside``."""
    for _ in range(max_iter):
        mid = 0.5 * (inside + outside)
        if f(mid) > target:
            inside = mid
        else:
            outside = mid
        if abs(outside - inside) < tol:
            break
    return 0.5 * (inside + outside)


def _search(f, start, step, target, limit, tol):
    """Walk from ``start`` in steps growing geometrically until ``f`` drops
    below ``target`` or ``limit`` is reached; return the crossing or ``None``."""
    inside = start
    h = step
    for _ in range(60):
        cand = start + h
        if (step > 0 and cand >= limit) or (step < 0 and cand <= limit):
            cand = limit
        val = f(cand)
        if not (val > target):
            return _bisect(f, inside, cand, target, tol)
        if cand == limit:
            return None
        inside = cand
        h *= 2.0
    return None


def profile_ci(data, param="gamma", level=0.95, tol=1e-6):
    """Likelihood-ratio interval for ``gamma``, ``sigma_e`` or ``iota``.

    An endpoint that the profile never crosses is returned as infinite (for
    ``iota`` the upper end is infinite whenever the exponential model, the
    limit iota -> infinity, lies inside the interval).
    """
    sample = as_sample(data)
    crit = float(stats.chi2.ppf(level, 1)) / 2.0

    if param in ("sigma_e", "sigma"):
        fit = fit_mle(sample, "exp")
        est, lmax = fit.model.sigma, fit.loglik
        f = lambda s: loglik(Exponential(s), sample) if s > 0 else -np.inf
        se = fit.se("sigma")
        lo = _search(f, est, -se, lmax - crit, 1e-12, tol)
        hi = _search(f, est, se, lmax - crit, est * 1e6, tol)
        return Interval(est, 0.0 if lo is None else lo, np.inf if hi is None else hi,
                        level, "sigma_e")

    if param == "gamma":
        fit = fit_mle(sample, "gpd")
        est, lmax = fit.model.gamma, fit.loglik
        se = fit.se("gamma")
        if not np.isfinite(se):
            se = 0.1

        def f(g):
            try:
                return fit_mle(sample, "gpd", fixed_gamma=g).loglik
            except FitError:
                return -np.inf
        lo = _search(f, est, -se / 2, lmax - crit, -1.0, tol)
        hi = _search(f, est, se / 2, lmax - crit, 10.0, tol)
        return Interval(est, -1.0 if lo is None else lo, np.inf if hi is None else hi,
                        level, "gamma")

    if param == "iota":
        fit = fit_gpd_profile(sample)
        lmax = fit.loglik
        zmax = sample.max_point
        eta_hat = -fit.model.gamma / fit.model.sigma
        f = lambda eta: endpoint_profile(sample, eta)[0]
        eta_top = (1.0 - 1e-12) / zmax
        start = max(eta_hat, 0.0)
        # larger eta means a lower endpoint
        eta_lo_end = _search(f, start, 0.05 / zmax, lmax - crit, eta_top, tol * 1e-3)
        if f(0.0) > lmax - crit:
            eta_hi_end = 0.0
        else:
            eta_hi_end = _bisect(f, start, 0.0, lmax - crit, tol * 1e-3)
        to_age = lambda eta: sample.u + 1.0 / eta if eta > 0 else np.inf
        est = to_age(eta_hat) if eta_hat > 0 else np.inf
        lower = sample.u + zmax if eta_lo_end is None else to_age(eta_lo_end)
        return Interval(est, lower, to_age(eta_hi_end), level, "iota")

    raise ValueError(f"no profile interval for {param!r}")


# -- pooling ----------------------------------------------------------------

def se_from_ci(lower, upper, level=0.95):
    """Standard error implied by a symmetric Wald interval."""
    z = stats.norm.ppf(0.5 + level / 2)
    return (upper - lower) / (2 * z)


@dataclass
class PooledEstimate:
    estimate: float
    se: float
    lower: float
    upper: float


def pool_inverse_variance(estimates, level=0.95):
    """Inverse-variance weighted mean of ``(estimate, se)`` pairs with a Wald interval."""
    est = np.array([e for e, _ in estimates], dtype=float)
    se = np.array([s for _, s in estimates], dtype=float)
    if est.size < 2:
        raise ValueError("need at least two estimates to pool")
    if np.any(se <= 0):
        raise ValueError("standard errors must be positive")
    w = 1.0 / se**2
    pooled = float(np.sum(w * est) / np.sum(w))
    pooled_se = float(np.sum(w) ** -0.5)
    z = stats.norm.ppf(0.5 + level / 2)
    return PooledEstimate(pooled, pooled_se, pooled - z * pooled_se, pooled + z * pooled_se)
