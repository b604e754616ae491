"""QQ diagnostics for truncated and censored samples.

The lifetime distribution is estimated by the product-limit estimator for
left-truncated, right-censored data, and ordered deaths are plotted against
``F^{-1}{G(x)}`` for a fitted model ``F``.  Envelopes come from simulating
new lifetimes under the fitted model with entry times and censoring
indicators held fixed, refitting, and recomputing both estimates.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ._parallel import pmap
from .exceptions import DataError, FitError, InferenceError
from .lifetimes import Scheme, as_sample, resimulate
from .likelihood import fit_mle

logger = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.05
QQ_COLUMNS = ("position", "observed", "lo_pointwise", "hi_pointwise",
              "lo_simultaneous", "hi_simultaneous")


@dataclass
class ProductLimit:
    """Right-continuous step estimate of the lifetime cdf.

    Attributes
    ----------
    times : ndarray
        Distinct death times, increasing.
    deaths, at_risk : ndarray
        Deaths and risk-set sizes at ``times``.
    values : ndarray
        The estimate at each of ``times``.
    flag : str
        Non-empty when a risk set is empty, or is exhausted while later
        entrants still die; the estimate is undefined from there on and
        ``values`` are NaN.
    """

    times: np.ndarray
    deaths: np.ndarray
    at_risk: np.ndarray
    values: np.ndarray
    flag: str = ""

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        i = np.searchsorted(self.times, x, side="right")
        vals = np.concatenate([[0.0], self.values])
        return vals[i]

    def left_limit(self, x):
        x = np.asarray(x, dtype=float)
        i = np.searchsorted(self.times, x, side="left")
        vals = np.concatenate([[0.0], self.values])
        return vals[i]

    def mid_jump(self, x):
        """``G(x-) + (G(x) - G(x-)) / 2``."""
        return 0.5 * (self(x) + self.left_limit(x))


def product_limit_cdf(data):
    """Product-limit estimate for left-truncated, right-censored lifetimes.

    The risk set at a death time ``t`` holds the records with offset below
    ``t`` and exit at or after ``t``.

    Raises
    ------
    DataError
        If the sample is doubly truncated or has no deaths.
    """
    sample = as_sample(data)
    if sample.scheme is not Scheme.LTRC:
        raise DataError("the product-limit estimator needs left-truncated, right-censored data")
    if not sample.dead.any():
        raise DataError("no deaths in the sample")
    times, deaths = np.unique(sample.x[sample.dead], return_counts=True)
    entered = np.searchsorted(np.sort(sample.lower), times, side="left")
    left = np.searchsorted(np.sort(sample.x), times, side="left")
    at_risk = entered - left
    flag = ""
    with np.errstate(divide="ignore", invalid="ignore"):
        factors = 1.0 - deaths / at_risk
    empty = at_risk <= 0
    if empty.any():
        j = int(np.argmax(empty))
        flag = f"empty risk set at x = {times[j]:.6g}; estimate undefined beyond"
        logger.warning(flag)
        factors[j:] = np.nan
    surv = np.cumprod(factors)
    gone = np.flatnonzero(surv[:-1] == 0)
    if gone.size and not flag:
        # later entrants die after the estimate has reached one
        j = int(gone[0])
        flag = f"risk set exhausted at x = {times[j]:.6g}; estimate undefined beyond"
        logger.info(flag)
        surv[j + 1:] = np.nan
    return ProductLimit(times, deaths, at_risk, 1.0 - surv, flag)


@dataclass
class QQPoints:
    position: np.ndarray
    observed: np.ndarray
    flags: list = field(default_factory=list)


def qq_positions(data, fitted, estimate=None):
    """Plotting positions ``F^{-1}{G(x)}`` for the ordered deaths.

    ``G`` is evaluated midway up its jump at each death so that the largest
    death maps to a finite quantile.  Deaths beyond a finite endpoint of
    ``fitted``, or where ``G`` is undefined, get a NaN position and a flag.
    """
    sample = as_sample(data)
    G = estimate if estimate is not None else product_limit_cdf(sample)
    observed = np.sort(sample.x[sample.dead])
    p = G.mid_jump(observed)
    undefined = np.isnan(p)
    beyond = observed > fitted.endpoint
    position = np.full(observed.size, np.nan)
    ok = ~(undefined | beyond)
    position[ok] = fitted.quantile(p[ok])
    flags = [""] * observed.size
    for i in np.flatnonzero(undefined):
        flags[i] = "product-limit estimate undefined"
    for i in np.flatnonzero(beyond):
        flags[i] = "observation beyond the fitted endpoint"
    return QQPoints(position, observed, flags)


@dataclass
class QQEnvelope:
    """Bands for the observed order statistics at their plotting positions."""

    position: np.ndarray
    observed: np.ndarray
    lo_pointwise: np.ndarray
    hi_pointwise: np.ndarray
    lo_simultaneous: np.ndarray
    hi_simultaneous: np.ndarray
    n_sims: int
    n_failed: int
    seed: int
    replicates: np.ndarray | None = None

    def inside(self, simultaneous=True):
        """Points within the band; points without a position count as inside."""
        lo, hi = ((self.lo_simultaneous, self.hi_simultaneous) if simultaneous
                  else (self.lo_pointwise, self.hi_pointwise))
        return np.isnan(self.position) | ((self.observed >= lo) & (self.observed <= hi))

    def rows(self):
        return [dict(zip(QQ_COLUMNS, vals)) for vals in zip(
            self.position, self.observed, self.lo_pointwise, self.hi_pointwise,
            self.lo_simultaneous, self.hi_simultaneous)]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=QQ_COLUMNS)
            w.writeheader()
            for row in self.rows():
                w.writerow({k: f"{v:.6g}" for k, v in row.items()})


def _deviations(sample, family):
    fit = fit_mle(sample, family)
    pts = qq_positions(sample, fit.model)
    return pts.observed - pts.position


def _qq_chunk(args):
    sample, fitted, family, seed, idx = args
    out = np.full((len(idx), int(sample.dead.sum())), np.nan)
    for row, b in enumerate(idx):
        sim = resimulate(sample, fitted, np.random.default_rng([seed, b]), keep_status=True)
        try:
            out[row] = _deviations(sim, family)
        except (FitError, DataError):
            pass
    return out


def _extremity(curves, lo, mid, hi):
    """Largest deviation from ``mid`` in units of the half-widths."""
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.fmax(np.where(curves > mid, (curves - mid) / (hi - mid), 0.0),
                    np.where(curves < mid, (mid - curves) / (mid - lo), 0.0))
    return np.where(np.isnan(curves), 0.0, z).max(axis=-1)


def _leave_one_out_quantiles(curves, probs):
    """Per-column quantiles of ``curves`` with each row left out in turn.

    Returns one ``(n, m)`` array per probability; row ``b`` holds the linear
    interpolation quantiles of the other ``n - 1`` rows.  NaN entries are
    ignored column by column.
    """
    n, m = curves.shape
    order = np.argsort(curves, axis=0)              # NaNs sort last
    v = np.take_along_axis(curves, order, axis=0)
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(n)[:, None], axis=0)
    valid = (~np.isnan(curves)).sum(axis=0)          # per column
    own_valid = ~np.isnan(curves)
    cnt = valid[None, :] - own_valid                 # sample size without row b
    cols = np.arange(m)[None, :]
    out = []
    for p in probs:
        h = p * (cnt - 1)
        k = np.clip(np.floor(h).astype(int), 0, None)
        frac = h - k

        def kth(j):
            # j-th order statistic of the column with row b removed
            j = np.minimum(j, np.maximum(cnt - 1, 0))
            idx = np.where(own_valid & (j >= rank), j + 1, j)
            return v[np.minimum(idx, n - 1), cols]

        out.append(np.where(cnt > 0, kth(k) + frac * (kth(k + 1) - kth(k)), np.nan))
    return out


def envelope_rank(n, coverage):
    """Order statistic (1-based) of ``n`` replicate extremities giving
    coverage ``coverage`` for a curve exchangeable with the replicates."""
    return math.ceil(coverage * (n + 1))


def qq_envelope(data, fitted=None, n_sims=100, seed=0, family="exp", level=0.95,
                coverage=0.95, threads=1, keep_replicates=False):
    """Pointwise and simultaneous simulation envelopes for the QQ plot.

    Parameters
    ----------
    data : Dataset or Sample
        Left-truncated, right-censored exceedances.
    fitted : LifetimeModel, optional
        Model to simulate from; defaults to the ``family`` fit to ``data``.
    n_sims : int
        Replicates.  Replicate ``b`` uses the stream ``(seed, b)``.
    family : str
        Family refitted to each replicate.
    level : float
        Pointwise level.
    coverage : float
        Simultaneous level.

    Returns
    -------
    QQEnvelope
        Bands for ``observed`` at each plotting position.  Each replicate
        gives deviations ``x_(i) - F_b^{-1}{G_b(x_(i))}`` of its ordered
        deaths; the pointwise band takes their quantiles, and the
        simultaneous band widens the pointwise one by a Monte Carlo rank of
        the replicates' largest standardized deviations.
    """
    sample = as_sample(data)
    if fitted is None:
        fitted = fit_mle(sample, family).model
    pts = qq_positions(sample, fit_mle(sample, family).model)
    chunks = [range(a, min(a + 25, n_sims)) for a in range(0, n_sims, 25)]
    args = [(sample, fitted, family, seed, idx) for idx in chunks]
    dev = np.vstack(pmap(_qq_chunk, args, threads=threads))
    bad = np.isnan(dev).all(axis=1)
    failed = int(bad.sum())
    if failed > MAX_FAILURE_RATE * n_sims:
        raise InferenceError(f"{failed} of {n_sims} envelope replicates failed")
    dev = dev[~bad]
    # single points are NaN where a replicate's estimate is undefined
    alpha = 1.0 - level
    probs = [alpha / 2, 0.5, 1 - alpha / 2]
    lo, mid, hi = np.nanpercentile(dev, [100 * p for p in probs], axis=0)
    up, down = hi - mid, mid - lo
    # each replicate is standardized by the others only, so that its
    # extremity is distributed like that of an independent curve
    q_lo, q_mid, q_hi = _leave_one_out_quantiles(dev, probs)
    extremity = np.sort(_extremity(dev, q_lo, q_mid, q_hi))
    k = envelope_rank(extremity.size, coverage)
    q = extremity[k - 1] if k <= extremity.size else np.inf
    widen = lambda w: np.where(w > 0, q * w, 0.0)
    base = pts.position
    return QQEnvelope(base, pts.observed, base + lo, base + hi,
                      base + np.minimum(mid - widen(down), lo),
                      base + np.maximum(mid + widen(up), hi),
                      n_sims, failed, seed, dev if keep_replicates else None)
