"""Monte-Carlo power of tests for a finite lifespan and for sex differences.

Every simulation conditions on the entry times and frame of an observed (or
matched synthetic) dataset: LTRC replicates are drawn conditionally on
surviving the offset and censored at the frame end, DT replicates are drawn
from the doubly truncated model.

Random streams are keyed by ``(seed, g, k, i)`` with ``g = 0`` for the null
simulation and ``g = j + 1`` for grid point ``j``, ``k`` the dataset index and
``i`` the replicate, so results do not depend on scheduling.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ._parallel import pmap
from .distributions import GPD, Exponential
from .exceptions import DataError, FitError, InferenceError
from .lifetimes import Scheme, as_sample, resimulate
from .likelihood import (endpoint_profile, endpoint_profile_grid, fit_gpd_profile,
                         fit_mle, gpd_std_errors, zoom_maximize)

logger = logging.getLogger(__name__)

SIMULATED_NULL = "SimulatedNull"
ASYMPTOTIC_NULL = "AsymptoticNull"
MAX_FAILURE_RATE = 0.05
CHUNK = 50

POWER_COLUMNS = ("dataset", "alternative_type", "alternative_value", "power", "mc_se",
                 "n_sims", "calibration")


@dataclass
class PowerCurve:
    dataset: str
    alternative_type: str
    grid: np.ndarray
    power: np.ndarray
    mc_se: np.ndarray
    n_sims: int
    calibration: str
    critical_value: float = math.nan
    n_failed: np.ndarray | None = None
    flags: list = field(default_factory=list)

    def rows(self):
        return [{"dataset": self.dataset, "alternative_type": self.alternative_type,
                 "alternative_value": float(v), "power": float(p), "mc_se": float(s),
                 "n_sims": self.n_sims, "calibration": self.calibration}
                for v, p, s in zip(self.grid, self.power, self.mc_se)]

    def at(self, value):
        i = int(np.argmin(np.abs(np.asarray(self.grid) - value)))
        if not math.isclose(self.grid[i], value, rel_tol=1e-9, abs_tol=1e-12):
            raise KeyError(value)
        return float(self.power[i])


def write_power_csv(curves, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=POWER_COLUMNS)
        w.writeheader()
        for c in curves:
            for row in c.rows():
                w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v)
                            for k, v in row.items()})


def _rng(seed, g, k, i):
    return np.random.default_rng([seed, g, k, i])


def _labels(datasets, labels):
    if labels is not None:
        return list(labels)
    return [getattr(d, "label", None) or f"dataset{k}" for k, d in enumerate(datasets)]


def _power(reject):
    """Rejection rate and Monte-Carlo se over the finite entries of ``reject``."""
    ok = ~np.isnan(reject)
    n = int(ok.sum())
    if n == 0:
        return math.nan, math.nan
    p = float(np.mean(reject[ok]))
    return p, math.sqrt(p * (1 - p) / n)


def _critical(null_stats, level, calibration, asymptotic):
    if calibration == ASYMPTOTIC_NULL:
        return asymptotic
    if calibration != SIMULATED_NULL:
        raise ValueError(f"unknown calibration {calibration!r}")
    finite = null_stats[np.isfinite(null_stats)]
    return float(np.quantile(finite, level, method="inverted_cdf"))


def _check_failures(stat, what):
    failed = int(np.isnan(stat).sum())
    if failed > MAX_FAILURE_RATE * stat.size:
        raise InferenceError(f"{what}: {failed} of {stat.size} replicate fits failed")
    if failed:
        logger.warning("%s: %d failed replicates dropped", what, failed)
    return failed


def _chunks(n):
    return [range(a, min(a + CHUNK, n)) for a in range(0, n, CHUNK)]


# -- shape (Wald) power -----------------------------------------------------

def shape_statistics(sample):
    """Wald statistic ``gamma_hat / se`` and directed root for ``gamma = 0``."""
    fit = fit_gpd_profile(sample)
    ll0 = float(endpoint_profile_grid(sample, [0.0])[0][0])
    gamma = fit.model.gamma
    r = math.copysign(math.sqrt(max(2.0 * (fit.loglik - ll0), 0.0)), gamma) if gamma else 0.0
    se = gpd_std_errors(sample, fit.model)
    w = gamma / se["gamma"] if se else math.nan
    return w, r


def _shape_chunk(args):
    sample, model, seed, g, k, idx = args
    out = np.full((len(idx), 2), np.nan)
    for row, i in enumerate(idx):
        sim = resimulate(sample, model, _rng(seed, g, k, i))
        try:
            out[row] = shape_statistics(sim)
        except (FitError, FloatingPointError, ValueError):
            pass
    return out


def _simulate_shape(sample, model, seed, g, k, n_sims, threads):
    args = [(sample, model, seed, g, k, idx) for idx in _chunks(n_sims)]
    return np.vstack(pmap(_shape_chunk, args, threads=threads))


def power_shape(datasets, gamma_grid, n_sims=2000, seed=0, level=0.05,
                calibration=SIMULATED_NULL, statistic="wald", labels=None, threads=1):
    """Power of the one-sided test of ``gamma = 0`` against ``gamma < 0``.

    For every ``gamma`` in the grid the scale is profiled on each dataset,
    replicates are simulated from ``GPD(sigma_gamma, gamma)`` under that
    dataset's frame and the test rejects when the statistic falls below the
    ``level`` quantile of its null distribution.  The combined curve rejects
    when any dataset rejects, each at level ``level``.

    Parameters
    ----------
    datasets : sequence of Dataset or Sample
    gamma_grid : sequence of float
        Shape values, normally in ``[-0.25, 0]``.
    statistic : {"wald", "root"}
        Wald ``gamma_hat / se`` or the directed likelihood root.

    Returns
    -------
    list of PowerCurve
        One per dataset followed by the combined curve (when more than one
        dataset is given).
    """
    col = {"wald": 0, "root": 1}[statistic]
    samples = [as_sample(d) for d in datasets]
    names = _labels(datasets, labels)
    grid = np.asarray(gamma_grid, dtype=float)
    reject = np.full((len(samples), grid.size, n_sims), np.nan)
    curves = []
    for k, (sample, name) in enumerate(zip(samples, names)):
        sig_e = fit_mle(sample, "exp").model.sigma
        null = _simulate_shape(sample, Exponential(sig_e), seed, 0, k, n_sims, threads)[:, col]
        _check_failures(null, f"{name} null")
        crit = _critical(null, level, calibration, stats.norm.ppf(level))
        failed = np.zeros(grid.size, dtype=int)
        for j, gamma in enumerate(grid):
            sigma = fit_mle(sample, "gpd", fixed_gamma=gamma).model.sigma
            model = GPD(sigma, gamma) if gamma != 0 else Exponential(sigma)
            st = _simulate_shape(sample, model, seed, j + 1, k, n_sims, threads)[:, col]
            failed[j] = _check_failures(st, f"{name} gamma={gamma}")
            reject[k, j] = np.where(np.isnan(st), np.nan, st <= crit)
        pw = np.array([_power(reject[k, j]) for j in range(grid.size)])
        curves.append(PowerCurve(name, "gamma", grid, pw[:, 0], pw[:, 1], n_sims,
                                 calibration, crit, failed))
    if len(samples) > 1:
        with np.errstate(invalid="ignore"):
            anyrej = np.where(np.isnan(reject).any(axis=0), np.nan,
                              np.nanmax(reject, axis=0))
        pw = np.array([_power(anyrej[j]) for j in range(grid.size)])
        curves.append(PowerCurve("combined", "gamma", grid, pw[:, 0], pw[:, 1], n_sims,
                                 calibration, math.nan,
                                 np.isnan(anyrej).sum(axis=1)))
    return curves


# -- endpoint (directed root) power -----------------------------------------

_T_GRID = np.concatenate([np.linspace(0.0, 0.9, 10), 1.0 - np.logspace(-1.3, -6, 8)])


def _one_sided_loglik(sample):
    """Maximum log-likelihood over finite or infinite endpoints, and at eta = 0."""
    zmax = sample.max_point
    f = lambda e: endpoint_profile_grid(sample, e)[0]
    ll1 = zoom_maximize(f, _T_GRID / zmax)[1]
    ll0 = float(f(np.array([0.0]))[0])
    return max(ll1, ll0), ll0


def joint_endpoint_loglik(samples):
    """Maximum over a common finite endpoint ``iota`` of the summed profile
    log-likelihoods, each dataset with its own scale.

    The search variable is ``phi = 1 / iota``; ``phi = 0`` is the exponential
    model for every dataset.
    """
    us = np.array([s.u for s in samples])
    phi_max = min(1.0 / (s.u + s.max_point) for s in samples)

    def f(phi):
        phi = np.asarray(phi, dtype=float)
        total = np.zeros(phi.shape)
        for s, u in zip(samples, us):
            total += endpoint_profile_grid(s, phi / (1.0 - phi * u))[0]
        return total

    return zoom_maximize(f, _T_GRID * phi_max)


def endpoint_statistics(samples):
    """Per-dataset and joint directed roots ``-sqrt(2 (l_gp - l_exp))``."""
    per = []
    ll0_total = 0.0
    for s in samples:
        ll1, ll0 = _one_sided_loglik(s)
        ll0_total += ll0
        per.append(-math.sqrt(max(2.0 * (ll1 - ll0), 0.0)))
    ll_joint = max(joint_endpoint_loglik(samples)[1], ll0_total)
    return np.array(per), -math.sqrt(max(2.0 * (ll_joint - ll0_total), 0.0))


def _endpoint_chunk(args):
    samples, models, seed, g, idx = args
    out = np.full((len(idx), len(samples) + 1), np.nan)
    for row, i in enumerate(idx):
        sims = [resimulate(s, m, _rng(seed, g, k, i)) for k, (s, m) in enumerate(zip(samples, models))]
        try:
            per, joint = endpoint_statistics(sims)
            out[row, :-1] = per
            out[row, -1] = joint
        except (FitError, FloatingPointError, ValueError):
            pass
    return out


def _simulate_endpoint(samples, models, seed, g, n_sims, threads):
    args = [(samples, models, seed, g, idx) for idx in _chunks(n_sims)]
    return np.vstack(pmap(_endpoint_chunk, args, threads=threads))


def endpoint_alternative(sample, iota):
    """GPD with endpoint ``iota`` (an age) and profiled scale."""
    eta = 1.0 / (iota - sample.u)
    if not (eta > 0 and eta * sample.max_point < 1.0):
        raise DataError(f"endpoint {iota} is not above the oldest observation "
                        f"{sample.u + sample.max_point:.2f}")
    sigma = endpoint_profile(sample, eta)[1]
    return GPD(sigma, -sigma * eta)


def power_endpoint(datasets, iota_grid, n_sims=2000, seed=0, level=0.05,
                   calibration=SIMULATED_NULL, labels=None, threads=1):
    """Power of the likelihood ratio test of an infinite lifespan against a
    finite endpoint ``iota``.

    Each dataset is tested on its own (scale and endpoint free) and jointly,
    with a common endpoint and one scale per dataset.  Grid points below a
    dataset's oldest observation are infeasible: they get ``nan`` power and
    a flag.

    Returns
    -------
    list of PowerCurve
        One per dataset, then the joint test's curve labelled ``combined``.
    """
    samples = [as_sample(d) for d in datasets]
    names = _labels(datasets, labels)
    grid = np.asarray(iota_grid, dtype=float)
    K = len(samples)
    nulls = [Exponential(fit_mle(s, "exp").model.sigma) for s in samples]
    null = _simulate_endpoint(samples, nulls, seed, 0, n_sims, threads)
    _check_failures(null[:, -1], "endpoint null")
    asym = stats.norm.ppf(level)
    crit = [_critical(null[:, c], level, calibration, asym) for c in range(K + 1)]

    power = np.full((K + 1, grid.size), np.nan)
    mcse = np.full((K + 1, grid.size), np.nan)
    failed = np.zeros((K + 1, grid.size), dtype=int)
    flags = [[] for _ in range(K + 1)]
    for j, iota in enumerate(grid):
        try:
            models = [endpoint_alternative(s, iota) for s in samples]
        except DataError as exc:
            for fl in flags:
                fl.append(f"iota={iota:g}: {exc}")
            continue
        st = _simulate_endpoint(samples, models, seed, j + 1, n_sims, threads)
        for c in range(K + 1):
            failed[c, j] = _check_failures(st[:, c], f"iota={iota:g}")
            rej = np.where(np.isnan(st[:, c]), np.nan, st[:, c] <= crit[c])
            power[c, j], mcse[c, j] = _power(rej)
    curve_names = names + ["combined"]
    if K == 1:
        curve_names, power, mcse = curve_names[:1], power[:1], mcse[:1]
    return [PowerCurve(curve_names[c], "iota", grid, power[c], mcse[c], n_sims, calibration,
                       crit[c], failed[c], flags[c]) for c in range(len(curve_names))]


# -- sex-ratio power --------------------------------------------------------

def sex_scales(sigma, lam):
    """Women's and men's exponential scales with ratio ``lam`` and geometric
    mean ``sigma``."""
    r = math.sqrt(lam)
    return sigma * r, sigma / r


def _group_loglik(sample):
    """Maximised exponential log-likelihood of a sample."""
    if sample.scheme is Scheme.LTRC:
        d = sample.n_deaths
        if d == 0:
            return 0.0
        a = float(np.sum(sample.x - sample.lower))
        return -d * math.log(a / d) - d
    return fit_mle(sample, "exp").loglik


def sex_lrt(sample, female, male):
    """LRT of equal exponential scales for women and men."""
    ll_sep = _group_loglik(sample.subset(female)) + _group_loglik(sample.subset(male))
    return max(2.0 * (ll_sep - _group_loglik(sample.subset(female | male))), 0.0)


def _sex_chunk(args):
    sample, female, male, sig_f, sig_m, seed, g, idx = args
    fem = sample.subset(female)
    mal = sample.subset(male)
    out = np.full(len(idx), np.nan)
    nf = fem.n
    both = np.concatenate([np.flatnonzero(female), np.flatnonzero(male)])
    merged = sample.subset(both)
    fmask = np.arange(merged.n) < nf
    for row, i in enumerate(idx):
        rng = _rng(seed, g, 0, i)
        a = resimulate(fem, Exponential(sig_f), rng)
        b = resimulate(mal, Exponential(sig_m), rng)
        sim = merged.with_lifetimes(np.concatenate([a.x, b.x]), np.concatenate([a.dead, b.dead]))
        try:
            out[row] = sex_lrt(sim, fmask, ~fmask)
        except FitError:
            pass
    return out


def power_sex_ratio(data, lambda_grid, n_sims=2000, seed=0, level=0.05,
                    calibration=ASYMPTOTIC_NULL, threads=1):
    """Power of the 1-df LRT for a difference between women's and men's scales.

    Sex labels and the frame are held fixed; lifetimes are exponential with
    scales ``sigma * sqrt(lam)`` (women) and ``sigma / sqrt(lam)`` (men),
    ``sigma`` being the pooled estimate.  Records of unknown sex are dropped.
    """
    sample = as_sample(data)
    if sample.sex is None:
        raise DataError("sex labels are required")
    female = sample.sex == "F"
    male = sample.sex == "M"
    if not female.any() or not male.any():
        raise DataError("both sexes must be represented")
    grid = np.asarray(lambda_grid, dtype=float)
    if np.any(grid < 1):
        raise ValueError("scale ratios must be at least 1")
    sigma = fit_mle(sample.subset(female | male), "exp").model.sigma
    asym = stats.chi2.ppf(1 - level, 1)

    def run(lam, g):
        sf, sm = sex_scales(sigma, lam)
        args = [(sample, female, male, sf, sm, seed, g, idx) for idx in _chunks(n_sims)]
        return np.concatenate(pmap(_sex_chunk, args, threads=threads))

    crit = asym
    if calibration == SIMULATED_NULL:
        null = run(1.0, 0)
        _check_failures(null, "sex null")
        crit = float(np.quantile(null[np.isfinite(null)], 1 - level, method="inverted_cdf"))
    elif calibration != ASYMPTOTIC_NULL:
        raise ValueError(f"unknown calibration {calibration!r}")
    power, mcse, failed = [], [], []
    for j, lam in enumerate(grid):
        st = run(lam, j + 1)
        failed.append(_check_failures(st, f"lambda={lam:g}"))
        p, s = _power(np.where(np.isnan(st), np.nan, st > crit))
        power.append(p)
        mcse.append(s)
    label = getattr(data, "label", None) or "dataset"
    return PowerCurve(label, "lambda", grid, np.array(power), np.array(mcse), n_sims,
                      calibration, float(crit), np.array(failed))


def alternative_at_power(curve, target):
    """Linear interpolation of the alternative value giving ``target`` power
    on a monotone stretch of ``curve``."""
    x = np.asarray(curve.grid, dtype=float)
    p = np.asarray(curve.power, dtype=float)
    for a in range(x.size - 1):
        lo, hi = sorted((p[a], p[a + 1]))
        if lo <= target <= hi and hi > lo:
            return float(x[a] + (target - p[a]) * (x[a + 1] - x[a]) / (p[a + 1] - p[a]))
    return math.nan
