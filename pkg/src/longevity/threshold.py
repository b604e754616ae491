"""Threshold sweeps: fits at a ladder of thresholds and parameter-stability traces."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ._parallel import pmap
from .exceptions import DataError, FitError, InferenceError
from .inference import (Interval, boundary_lrt_gompertz, bootstrap_p_value, lrt_gamma_zero,
                        p_infinity_from, profile_ci)
from .lifetimes import as_sample
from .likelihood import fit_mle

logger = logging.getLogger(__name__)

MIN_EXCEEDANCES = 20

TABLE_COLUMNS = ("threshold", "n_u", "sigma", "sigma_se", "gamma", "gamma_se",
                 "sigma_e", "sigma_e_se", "p_lrt", "p_inf")
STABILITY_COLUMNS = ("threshold", "estimate", "ci_lo", "ci_hi", "family", "parameter")


@dataclass
class SweepRow:
    threshold: float
    n_u: int
    n_deaths: int
    fits: dict = field(default_factory=dict)
    intervals: dict = field(default_factory=dict)
    p_lrt: float = math.nan
    p_inf: float = math.nan
    gompertz: dict = field(default_factory=dict)
    flag: str = ""

    def table_row(self):
        gp = self.fits.get("gpd")
        ex = self.fits.get("exp")
        val = lambda fit, name: fit.params[name] if fit else math.nan
        se = lambda fit, name: fit.se(name) if fit else math.nan
        return {"threshold": self.threshold, "n_u": self.n_u,
                "sigma": val(gp, "sigma"), "sigma_se": se(gp, "sigma"),
                "gamma": val(gp, "gamma"), "gamma_se": se(gp, "gamma"),
                "sigma_e": val(ex, "sigma"), "sigma_e_se": se(ex, "sigma"),
                "p_lrt": self.p_lrt, "p_inf": self.p_inf}


@dataclass
class StabilityTable:
    rows: list

    def table(self):
        return [r.table_row() for r in self.rows]

    def long_format(self):
        out = []
        for r in self.rows:
            for (family, param), ci in r.intervals.items():
                out.append({"threshold": r.threshold, "estimate": ci.estimate,
                            "ci_lo": ci.lower, "ci_hi": ci.upper,
                            "family": family, "parameter": param})
        return out

    def write_table(self, path):
        _write(path, TABLE_COLUMNS, self.table())

    def write_stability(self, path):
        _write(path, STABILITY_COLUMNS, self.long_format())


def _write(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row[k]) for k in columns})


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.6g}"
    return v


def default_thresholds(data, start=None, min_exceedances=MIN_EXCEEDANCES):
    """Integer thresholds from ``start`` upward while at least
    ``min_exceedances`` records remain."""
    sample = as_sample(data)
    u = math.ceil(sample.u if start is None else start)
    out = []
    while sample.rethreshold(u).n >= min_exceedances:
        out.append(float(u))
        u += 1
    return out


def _sweep_row(args):
    sample, u, families, level, n_boot, seed, min_exc = args
    sub = sample.rethreshold(u)
    row = SweepRow(float(u), sub.n, sub.n_deaths)
    if sub.n == 0:
        row.flag = "no exceedances"
        return row
    if sub.n < min_exc:
        row.flag = f"fewer than {min_exc} exceedances"
        return row
    try:
        for fam in families:
            row.fits[fam] = fit_mle(sub, fam)
        if "exp" in families:
            row.intervals[("exp", "sigma_e")] = profile_ci(sub, "sigma_e", level)
        if "gpd" in families:
            row.intervals[("gpd", "gamma")] = profile_ci(sub, "gamma", level)
            row.intervals[("gpd", "iota")] = profile_ci(sub, "iota", level)
            gp = row.fits["gpd"]
            sig = gp.params["sigma"]
            s_se = gp.se("sigma")
            row.intervals[("gpd", "sigma")] = _wald(sig, s_se, level)
        if "gpd" in families and "exp" in families:
            lrt = lrt_gamma_zero(sub)
            row.p_lrt = lrt.p_value
            row.p_inf = p_infinity_from(lrt.statistic, lrt.details["gamma_hat"])
        if "gompertz" in families:
            test = (bootstrap_p_value(sub, "gompertz", n_boot, seed) if n_boot
                    else boundary_lrt_gompertz(sub))
            row.gompertz = test.to_dict()
            gz = row.fits["gompertz"]
            row.intervals[("gompertz", "beta")] = _wald(gz.params["beta"], gz.se("beta"), level)
    except (FitError, InferenceError) as exc:
        row.flag = f"fit failed: {exc}"
        logger.warning("threshold %s: %s", u, exc)
    return row


def _wald(est, se, level):
    z = stats.norm.ppf(0.5 + level / 2)
    if not np.isfinite(se):
        return Interval(est, math.nan, math.nan, level, "wald")
    return Interval(est, est - z * se, est + z * se, level, "wald")


def threshold_sweep(data, thresholds=None, families=("gpd", "exp"), level=0.95,
                    n_boot=0, seed=0, min_exceedances=MIN_EXCEEDANCES, threads=1):
    """Fit each family at every threshold in ``thresholds``.

    Parameters
    ----------
    data : Dataset or Sample
        Exceedances of the lowest threshold.
    thresholds : sequence of float, optional
        Increasing ages not below the data's threshold.  Defaults to integer
        ages while at least ``min_exceedances`` records remain.
    families : sequence of str
        Any of ``"gpd"``, ``"exp"``, ``"gompertz"``.
    n_boot : int
        Bootstrap replicates for the Gompertz boundary test; 0 uses the
        asymptotic mixture p-value.

    Returns
    -------
    StabilityTable
        One row per threshold.  Rows with too few exceedances carry a flag
        and no fits.
    """
    sample = as_sample(data)
    if thresholds is None:
        thresholds = default_thresholds(sample, min_exceedances=min_exceedances)
    thresholds = [float(u) for u in thresholds]
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be increasing")
    if thresholds and thresholds[0] < sample.u:
        raise DataError(f"threshold {thresholds[0]} is below the data threshold {sample.u}")
    args = [(sample, u, tuple(families), level, n_boot, seed, min_exceedances)
            for u in thresholds]
    return StabilityTable(pmap(_sweep_row, args, threads=threads))


def parse_thresholds(text):
    """``"105:111"`` gives 105, ..., 111; ``"105,107,109"`` lists them."""
    if ":" in text:
        a, b = text.split(":")
        return [float(u) for u in range(int(a), int(b) + 1)]
    return [float(v) for v in text.split(",")]
