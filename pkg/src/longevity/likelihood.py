"""Truncation- and censoring-corrected likelihoods and maximum likelihood fits.

Contributions per record, with offset ``s = (b - t)+`` and ``e - t`` the upper
observation limit:

* left-truncated, right-censored (LTRC): ``f(x) / S(s)`` for a death and
  ``S(e - t) / S(s)`` for a censored record;
* doubly truncated (DT): ``f(x) / {F(e - t) - F(s)}``.

Besides the general quasi-Newton fitter :func:`fit_mle`, the module exposes an
exact profile in the GPD endpoint (:func:`endpoint_profile`).  With the
inverse distance to the endpoint ``eta = -gamma / sigma`` held fixed, the GPD
is an exponential distribution on the transformed time scale
``a(x) = -log(1 - eta * x) / eta``, so the scale has a closed form (LTRC) or a
one-dimensional concave problem (DT).  Simulation engines use this route.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .distributions import GPD, BETA_ZERO_CUTOFF, Exponential, Gompertz
from .exceptions import DegenerateSupportError, FitError
from .lifetimes import Scheme, as_sample

FAMILIES = ("gpd", "exp", "gompertz")
GAMMA_MIN = -1.0  # shape values below -1 give an unbounded likelihood
MAX_ITER = 500


def _family(name):
    key = {"exponential": "exp", "gp": "gpd"}.get(name.lower(), name.lower())
    if key not in FAMILIES:
        raise ValueError(f"unknown family {name!r}")
    return key


# -- log-likelihood ---------------------------------------------------------

def loglik_terms(model, sample):
    """Per-record log contributions; ``-inf`` where a term is impossible."""
    s = sample.lower
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        ls_s = model.logsf(s)
        if sample.scheme is Scheme.LTRC:
            num = np.where(sample.dead, model.logpdf(sample.x), model.logsf(sample.x))
            den = ls_s
        else:
            num = model.logpdf(sample.x)
            den = ls_s + np.log1p(-np.exp(model.logsf(sample.upper) - ls_s))
        out = num - den
    return np.where(np.isfinite(den), out, -np.inf)


def loglik(model, data):
    sample = as_sample(data)
    total = float(np.sum(loglik_terms(model, sample)))
    return total if np.isfinite(total) else -np.inf


def loglik_contribution(record, frame, model):
    """Log-likelihood contribution of a single record."""
    from .lifetimes import Dataset

    sample = Dataset(frame, [record]).sample
    s = float(sample.lower[0])
    if frame.scheme is Scheme.LTRC:
        den = float(model.logsf(s))
    else:
        den = float(np.log(model.sf(s) - model.sf(float(sample.upper[0]))))
    if not np.isfinite(den):
        raise DegenerateSupportError(
            f"record {record.id}: truncation set has zero probability under {model}")
    return float(loglik_terms(model, sample)[0])


# -- results ----------------------------------------------------------------

@dataclass
class FitResult:
    model: object
    loglik: float
    std_errors: dict | None
    n_exceedances: int
    n_deaths: int
    converged: bool = True
    iterations: int = 0
    boundary: bool = False
    fixed: dict = field(default_factory=dict)
    message: str = ""
    cov: np.ndarray | None = None

    @property
    def params(self):
        return dict(zip(self.model.param_names, self.model.params))

    def se(self, name):
        if self.std_errors is None:
            return math.nan
        return self.std_errors.get(name, math.nan)

    def to_dict(self):
        return {
            "family": self.model.family,
            "parameters": list(self.model.param_names),
            "estimates": {k: float(v) for k, v in self.params.items()},
            "std_errors": (None if self.std_errors is None
                           else {k: float(v) for k, v in self.std_errors.items()}),
            "loglik": float(self.loglik),
            "n_u": self.n_exceedances,
            "n_deaths": self.n_deaths,
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "boundary": bool(self.boundary),
            "fixed": {k: float(v) for k, v in self.fixed.items()},
            "message": self.message,
        }


# -- exponential ------------------------------------------------------------

def exposure_total(sample):
    """Total time at risk, sum of x - s over all records."""
    return float(np.sum(sample.x - sample.lower))


def fit_exponential_closed_form(data):
    """Explicit exponential MLE for LTRC data: exposure over deaths."""
    sample = as_sample(data)
    if sample.scheme is not Scheme.LTRC:
        raise FitError("closed-form exponential estimate needs an LTRC sample")
    d = sample.n_deaths
    if d == 0:
        raise FitError("no deaths: exponential scale estimator is undefined")
    sigma = exposure_total(sample) / d
    model = Exponential(sigma)
    return FitResult(model, loglik(model, sample), {"sigma": sigma / math.sqrt(d)},
                     sample.n, d, message="closed form")


def exponential_score(data, sigma):
    """Analytic derivative of the exponential log-likelihood in ``sigma``."""
    sample = as_sample(data)
    d = sample.n_deaths
    if sample.scheme is Scheme.LTRC:
        return -d / sigma + exposure_total(sample) / sigma**2
    s, up = sample.lower, sample.upper
    Ss = np.exp(-s / sigma)
    Su = np.where(np.isfinite(up), np.exp(-up / sigma), 0.0)
    upSu = np.where(np.isfinite(up), up * Su, 0.0)
    dlogden = (s * Ss - upSu) / (sigma**2 * (Ss - Su))
    return float(np.sum(-1.0 / sigma + sample.x / sigma**2 - dlogden))


def fit_exponential_naive(data):
    """Exponential fit ignoring truncation and censoring (every record treated
    as a complete lifetime).  Biased; kept for comparison only."""
    sample = as_sample(data)
    sigma = float(np.mean(sample.x))
    return FitResult(Exponential(sigma), math.nan, {"sigma": sigma / math.sqrt(sample.n)},
                     sample.n, sample.n, message="naive")


# -- endpoint profile -------------------------------------------------------

def _transformed_time(z, eta):
    z = np.asarray(z, dtype=float)
    if eta == 0.0:
        return z.copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        a = -np.log1p(-eta * z) / eta
    if eta > 0:
        a = np.where(eta * z >= 1.0, np.inf, a)
    return a


def _dt_scale(a_x, a_lo, a_up, lam_min, lam0):
    """Maximise the doubly truncated exponential log-likelihood in the rate.

    Concave in the rate; safeguarded Newton iterations.
    """
    d = a_x.size
    delta = a_up - a_lo
    base = float(np.sum(a_x - a_lo))
    fin = np.isfinite(delta)
    dfin = delta[fin]

    def parts(lam):
        v = lam * dfin
        em1 = np.expm1(v)
        with np.errstate(over="ignore", invalid="ignore"):
            g_terms = np.where(v > 700, 0.0, dfin / em1)
            h_terms = np.where(v > 350, 0.0, dfin**2 * np.exp(np.minimum(v, 700)) / em1**2)
        score = d / lam - base - float(np.sum(g_terms))
        info = d / lam**2 - float(np.sum(h_terms))
        return score, info

    def value(lam):
        v = lam * dfin
        return (d * math.log(lam) - lam * base
                - float(np.sum(np.log(-np.expm1(-v)))) + 0.0)

    lo, hi = lam_min, None
    lam = max(lam0, lam_min * 1.0001 if lam_min > 0 else lam0)
    for _ in range(100):
        score, info = parts(lam)
        if score > 0:
            lo = lam
        else:
            hi = lam
        if abs(score) < 1e-10 * max(1.0, d / lam):
            break
        step = score / info if info > 0 else np.nan
        new = lam + step
        if not np.isfinite(new) or new <= lo or (hi is not None and new >= hi):
            new = 0.5 * (lo + hi) if hi is not None else 2.0 * lam
        if abs(new - lam) < 1e-14 * lam:
            lam = new
            break
        lam = new
    if lam_min > 0 and parts(lam_min)[0] <= 0:
        lam = lam_min
    return lam, value(lam)


def endpoint_profile(data, eta, sigma0=None):
    """Profile log-likelihood of the GPD with ``eta = -gamma/sigma`` fixed.

    Returns ``(loglik, sigma)``.  ``eta = 0`` is the exponential model, positive
    ``eta`` gives a finite endpoint ``1/eta`` above the threshold.  The shape is
    kept at or above -1.
    """
    sample = as_sample(data)
    d = sample.n_deaths
    if d == 0:
        return -np.inf, math.nan
    if eta > 0 and eta * sample.max_point >= 1.0:
        return -np.inf, math.nan
    a_x = _transformed_time(sample.x, eta)
    a_lo = _transformed_time(sample.lower, eta)
    jac = np.log1p(-eta * sample.x[sample.dead]) if eta != 0 else np.zeros(d)
    lam_min = max(eta, 0.0)
    if sample.scheme is Scheme.LTRC:
        A = float(np.sum(a_x - a_lo))
        lam = max(d / A, lam_min)
        ll = d * math.log(lam) - lam * A - float(np.sum(jac))
    else:
        a_up = _transformed_time(sample.upper, eta)
        lam0 = d / max(float(np.sum(a_x - a_lo)), 1e-12)
        if sigma0:
            lam0 = 1.0 / sigma0
        lam, value = _dt_scale(a_x, a_lo, a_up, lam_min, max(lam0, lam_min * 1.01 + 1e-12))
        ll = value - float(np.sum(jac))
    return ll, 1.0 / lam


def endpoint_profile_grid(data, etas):
    """Vectorised :func:`endpoint_profile` over an array of ``eta`` values.

    Returns ``(loglik, sigma)`` arrays; infeasible values give ``-inf``.
    """
    sample = as_sample(data)
    etas = np.atleast_1d(np.asarray(etas, dtype=float))
    out_ll = np.full(etas.shape, -np.inf)
    out_sig = np.full(etas.shape, np.nan)
    d = sample.n_deaths
    ok = ~((etas > 0) & (etas * sample.max_point >= 1.0))
    if d == 0 or not ok.any():
        return out_ll, out_sig
    eta = etas[ok][:, None]
    small = np.abs(eta) < 1e-300
    safe = np.where(small, 1.0, eta)

    def a(z):
        with np.errstate(divide="ignore", invalid="ignore"):
            v = -np.log1p(-safe * z) / safe
        v = np.where(small, z, v)
        return np.where(eta * z >= 1.0, np.inf, v)

    x_dead = sample.x[sample.dead]
    jac = np.sum(np.log1p(-eta * x_dead), axis=1)
    lam_min = np.maximum(eta[:, 0], 0.0)
    if sample.scheme is Scheme.LTRC:
        A = np.sum(a(sample.x) - a(sample.lower), axis=1)
        lam = np.maximum(d / A, lam_min)
        ll = d * np.log(lam) - lam * A - jac
    else:
        a_lo = a(sample.lower)
        base = np.sum(a(sample.x) - a_lo, axis=1)
        delta = np.minimum(a(sample.upper) - a_lo, 1e100)
        lam, val = _dt_scale_batch(d, base, delta, lam_min)
        ll = val - jac
    out_ll[ok] = ll
    out_sig[ok] = 1.0 / lam
    return out_ll, out_sig


def _dt_terms(lam, delta, with_log=False):
    # delta must be finite (infinite windows are capped by the caller)
    om = -np.expm1(-lam[:, None] * delta)
    g = delta * (1.0 - om) / om
    h = g * delta / om
    logterm = np.log(om).sum(axis=1) if with_log else None
    return g.sum(axis=1), h.sum(axis=1), logterm


def _dt_scale_batch(d, base, delta, lam_min, max_iter=100):
    """Row-wise :func:`_dt_scale` by safeguarded Newton on all rows at once."""
    lam = np.maximum(d / base, lam_min * 1.0001 + 1e-12)
    lo = lam_min.copy()
    hi = np.full_like(lam, np.inf)
    active = np.ones(lam.shape, dtype=bool)
    for _ in range(max_iter):
        g, h, _ = _dt_terms(lam, delta)
        score = d / lam - base - g
        info = d / lam**2 - h
        lo = np.where(score > 0, lam, lo)
        hi = np.where(score <= 0, lam, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            new = lam + score / info
        bad = ~np.isfinite(new) | (new <= lo) | (new >= hi)
        new = np.where(bad, np.where(np.isfinite(hi), 0.5 * (lo + hi), 2.0 * lam), new)
        done = (np.abs(score) < 1e-10 * np.maximum(1.0, d / lam)) | (np.abs(new - lam) < 1e-14 * lam)
        lam = np.where(active & ~done, new, lam)
        active &= ~done
        if not active.any():
            break
    score_min = d / np.where(lam_min > 0, lam_min, 1.0) - base - _dt_terms(np.where(lam_min > 0, lam_min, 1.0), delta)[0]
    lam = np.where((lam_min > 0) & (score_min <= 0), lam_min, lam)
    _, _, logterm = _dt_terms(lam, delta, with_log=True)
    return lam, d * np.log(lam) - lam * base - logterm


def _eta_grid(zmax, sigma_guess, n=24):
    hi = 1.0 / zmax
    lo = -8.0 / sigma_guess
    frac = np.concatenate([np.linspace(-1.0, 0.0, n // 2, endpoint=False),
                           np.linspace(0.0, 0.9, n // 3),
                           1.0 - np.logspace(-1.3, -6, n - n // 2 - n // 3)])
    neg = np.where(frac < 0, -frac * lo, 0.0)
    pos = np.where(frac >= 0, frac * hi, 0.0)
    return np.unique(np.concatenate([neg + pos, [0.0]]))


def zoom_maximize(fn, grid, rounds=5, n=9):
    """Maximise a vectorised 1-D function by successive grid refinement.

    ``fn`` maps an array of points to an array of values (``-inf`` where
    infeasible).  Each round re-grids the bracket around the current best
    point; the result never leaves the hull of the initial grid.
    """
    grid = np.asarray(grid, dtype=float)
    vals = fn(grid)
    if not np.any(np.isfinite(vals)):
        raise FitError("profile is infeasible on the whole grid")
    for _ in range(rounds):
        i = int(np.argmax(np.where(np.isfinite(vals), vals, -np.inf)))
        a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
        best_x, best_v = grid[i], vals[i]
        if b <= a:
            break
        inner = np.linspace(a, b, n)[1:-1]
        grid = np.concatenate([[a], inner, [b], [best_x]])
        vals = np.concatenate([fn(np.array([a])), fn(inner), fn(np.array([b])), [best_v]])
        grid, idx = np.unique(grid, return_index=True)
        vals = vals[idx]
    i = int(np.argmax(np.where(np.isfinite(vals), vals, -np.inf)))
    best_x, best_v = float(grid[i]), float(vals[i])
    if 0 < i < grid.size - 1 and np.all(np.isfinite(vals[i - 1:i + 2])):
        # parabolic vertex through the best point and its neighbours
        x0, x1, x2 = grid[i - 1:i + 2]
        f0, f1, f2 = vals[i - 1:i + 2]
        den = (x1 - x0) * (f1 - f2) - (x1 - x2) * (f1 - f0)
        if den != 0:
            xv = x1 - 0.5 * ((x1 - x0)**2 * (f1 - f2) - (x1 - x2)**2 * (f1 - f0)) / den
            if x0 < xv < x2:
                fv = float(fn(np.array([xv]))[0])
                if fv > best_v:
                    best_x, best_v = float(xv), fv
    return best_x, best_v


def fit_gpd_profile(data, one_sided=False):
    """GPD maximum likelihood through the endpoint profile.

    With ``one_sided=True`` the shape is restricted to ``gamma <= 0`` (finite
    or infinite endpoint), as in the endpoint test.  Returns a
    :class:`FitResult` without standard errors.
    """
    sample = as_sample(data)
    zmax = sample.max_point
    sig_guess = max(exposure_total(sample) / max(sample.n_deaths, 1), 1e-3)
    grid = _eta_grid(zmax, sig_guess)
    if one_sided:
        grid = grid[grid >= 0]
    grid = grid[grid < 1.0 / zmax]
    eta, ll = zoom_maximize(lambda e: endpoint_profile_grid(sample, e)[0], grid)
    sigma = float(endpoint_profile_grid(sample, [eta])[1][0])
    model = GPD(sigma, -sigma * eta if eta != 0 else 0.0)
    return FitResult(model, ll, None, sample.n, sample.n_deaths,
                     boundary=(one_sided and eta == 0.0), message="endpoint profile")


# -- numerical derivatives --------------------------------------------------

def fd_gradient(f, theta, rel_step=1e-6):
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for i in range(theta.size):
        h = rel_step * max(abs(theta[i]), 1.0)
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def fd_hessian(f, theta, rel_step=1e-4):
    """Central-difference Hessian of a scalar function."""
    theta = np.asarray(theta, dtype=float)
    k = theta.size
    h = rel_step * np.maximum(np.abs(theta), 0.1)
    H = np.empty((k, k))
    f0 = f(theta)
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h[i]
        H[i, i] = (f(theta + ei) - 2 * f0 + f(theta - ei)) / h[i] ** 2
        for j in range(i + 1, k):
            ej = np.zeros(k)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (f(theta + ei + ej) - f(theta + ei - ej)
                                 - f(theta - ei + ej) + f(theta - ei - ej)) / (4 * h[i] * h[j])
    return H


def observed_information(loglik_fn, theta):
    """Negative Hessian of ``loglik_fn`` at ``theta`` (natural parameters)."""
    return -fd_hessian(loglik_fn, theta)


def _std_errors(names, info):
    info = 0.5 * (info + info.T)
    try:
        np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        return None, None, "observed information not positive definite"
    cov = np.linalg.inv(info)
    return dict(zip(names, np.sqrt(np.diag(cov)))), cov, ""


# -- general fitter ---------------------------------------------------------

_PENALTY = 1e12


def _feasible_gpd(sigma, gamma, zmax):
    return sigma > 0 and gamma >= GAMMA_MIN and (gamma >= 0 or 1 + gamma * zmax / sigma > 0)


def _gpd_ll(sample, zmax):
    def ll(theta):
        sigma, gamma = theta
        if not _feasible_gpd(sigma, gamma, zmax):
            return -np.inf
        return loglik(GPD(sigma, gamma), sample)
    return ll


def _gompertz_ll(sample):
    def ll(theta):
        sigma, beta = theta
        if sigma <= 0 or beta < 0:
            return -np.inf
        return loglik(Gompertz(sigma, beta), sample)
    return ll


def _minimize(negf, starts, bounds):
    """L-BFGS-B from several starts, central-difference gradients."""
    best = None
    for x0 in starts:
        if not np.isfinite(negf(np.asarray(x0))) or negf(np.asarray(x0)) >= _PENALTY:
            continue
        res = optimize.minimize(
            negf, x0, method="L-BFGS-B", jac="3-point", bounds=bounds,
            options={"maxiter": MAX_ITER, "ftol": 1e-13, "gtol": 1e-8,
                     "finite_diff_rel_step": 1e-6})
        if best is None or res.fun < best.fun:
            best = res
    return best


def _newton_polish(ll, theta, lower=None, steps=4):
    """A few Newton steps on ll in natural parameters to tighten the optimum."""
    theta = np.asarray(theta, dtype=float)
    cur = ll(theta)
    for _ in range(steps):
        g = fd_gradient(ll, theta)
        H = fd_hessian(ll, theta)
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        new = theta + step
        if lower is not None and np.any(new < lower):
            break
        val = ll(new)
        if not np.isfinite(val) or val < cur - 1e-12:
            break
        if val - cur < 1e-13:
            theta, cur = new, val
            break
        theta, cur = new, val
    return theta, cur


def _score_root(sample, sigma):
    """Refine ``sigma`` to the root of the analytic score by bracketing."""
    f = lambda s: exponential_score(sample, s)
    lo, hi = sigma * (1 - 1e-4), sigma * (1 + 1e-4)
    for _ in range(20):
        if f(lo) > 0 > f(hi):
            return optimize.brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        lo, hi = lo * 0.9, hi * 1.1
    return sigma


def _fit_exponential_numeric(sample):
    d = sample.n_deaths
    if d == 0:
        raise FitError("no deaths: exponential scale estimator is undefined")
    guess = max(exposure_total(sample) / d, 1e-6)

    def negll(logs):
        return -loglik(Exponential(math.exp(logs)), sample)

    lo, hi = math.log(guess) - 5, math.log(guess) + 5
    res = optimize.minimize_scalar(negll, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12, "maxiter": MAX_ITER})
    ll1 = lambda t: loglik(Exponential(t[0]), sample) if t[0] > 0 else -np.inf
    sigma = _score_root(sample, math.exp(res.x))
    theta, ll = np.array([sigma]), ll1([sigma])
    info = observed_information(ll1, theta)
    se, cov, msg = _std_errors(("sigma",), info)
    return FitResult(Exponential(sigma), ll, se, sample.n, d, converged=bool(res.success),
                     iterations=int(res.nfev), message=msg, cov=cov)


def _fit_gpd(sample, fixed_gamma=None, fixed_iota=None):
    d = sample.n_deaths
    if d == 0:
        raise FitError("no deaths in sample")
    zmax = sample.max_point
    ll2 = _gpd_ll(sample, zmax)
    sig0 = max(exposure_total(sample) / d, 1e-6)

    if fixed_iota is not None:
        eta = 1.0 / (fixed_iota - sample.u) if np.isfinite(fixed_iota) else 0.0
        if eta < 0 or eta * zmax >= 1:
            raise FitError(f"endpoint {fixed_iota} is not above the largest observation "
                           f"{sample.u + zmax:.3f}")
        ll, sigma = endpoint_profile(sample, eta)
        gamma = -sigma * eta if eta else 0.0
        ll1 = lambda t: ll2([t[0], -t[0] * eta])
        info = observed_information(ll1, [sigma])
        se, cov, msg = _std_errors(("sigma",), info)
        return FitResult(GPD(sigma, gamma), ll, se, sample.n, d,
                         boundary=bool(sigma * eta >= 1 - 1e-9),
                         fixed={"iota": fixed_iota}, message=msg, cov=cov)

    if fixed_gamma is not None:
        g = float(fixed_gamma)
        lo = math.log(max(-g * zmax, 0.0) + 1e-10) if g < 0 else math.log(sig0) - 6
        lo = max(lo, math.log(sig0) - 6) if g >= 0 else lo
        hi = math.log(sig0) + 6

        def negll(ls):
            v = ll2([math.exp(ls), g])
            return -v if np.isfinite(v) else _PENALTY

        res = optimize.minimize_scalar(negll, bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-11, "maxiter": MAX_ITER})
        sigma = math.exp(res.x)
        ll1 = lambda t: ll2([t[0], g])
        theta, ll = _newton_polish(ll1, [sigma], lower=np.array([max(-g * zmax, 0.0)]))
        sigma = float(theta[0])
        info = observed_information(ll1, theta)
        se, cov, msg = _std_errors(("sigma",), info)
        return FitResult(GPD(sigma, g), ll, se, sample.n, d, converged=bool(res.success),
                         iterations=int(res.nfev), fixed={"gamma": g}, message=msg, cov=cov)

    def negf(t):
        v = ll2([math.exp(t[0]), t[1]])
        return -v if np.isfinite(v) else _PENALTY

    starts = [(math.log(sig0), 0.0), (math.log(sig0), -0.1), (math.log(sig0), 0.1),
              (math.log(1.2 * sig0), 0.0), (math.log(0.8 * sig0), 0.0)]
    # a start from the endpoint profile guards against flat or multimodal surfaces
    try:
        prof = fit_gpd_profile(sample)
        starts.append((math.log(prof.model.sigma), prof.model.gamma))
    except FitError:
        pass
    best = _minimize(negf, starts, bounds=[(None, None), (GAMMA_MIN, 10.0)])
    if best is None:
        raise FitError("no feasible starting point for the GPD fit")
    theta = np.array([math.exp(best.x[0]), best.x[1]])
    theta, ll = _newton_polish(ll2, theta)
    model = GPD(float(theta[0]), float(theta[1]))
    info = observed_information(ll2, theta)
    se, cov, msg = _std_errors(("sigma", "gamma"), info)
    return FitResult(model, ll, se, sample.n, d, converged=bool(best.success),
                     iterations=int(best.nit), boundary=bool(theta[1] <= GAMMA_MIN + 1e-8),
                     message=msg or str(best.message), cov=cov)


def gpd_std_errors(data, model):
    """Standard errors of ``(sigma, gamma)`` from the observed information at
    ``model``; ``None`` when the information is not positive definite."""
    sample = as_sample(data)
    ll2 = _gpd_ll(sample, sample.max_point)
    theta = np.array([model.sigma, model.gamma])
    with np.errstate(invalid="ignore"):
        info = observed_information(ll2, theta)
    if not np.all(np.isfinite(info)):
        return None
    return _std_errors(("sigma", "gamma"), info)[0]


def gompertz_score_at_zero(sample, sigma):
    """d loglik / d beta at beta = 0, evaluated analytically."""
    s = sample.lower / sigma
    y = sample.x / sigma
    if sample.scheme is Scheme.LTRC:
        num = np.where(sample.dead, y - y**2 / 2, -y**2 / 2)
        return float(np.sum(num + s**2 / 2))
    up = sample.upper / sigma
    Ss, Su = np.exp(-s), np.exp(-up)
    dlogden = (Ss * (-s**2 / 2) - np.where(np.isfinite(up), Su * (-up**2 / 2), 0.0)) / (Ss - Su)
    return float(np.sum(y - y**2 / 2 - dlogden))


def _fit_gompertz(sample, fixed_beta=None):
    d = sample.n_deaths
    if d == 0:
        raise FitError("no deaths in sample")
    ll2 = _gompertz_ll(sample)
    expfit = _fit_exponential_numeric(sample)
    sig_e = expfit.model.sigma

    if fixed_beta is not None:
        bta = float(fixed_beta)

        def negll(ls):
            v = ll2([math.exp(ls), bta])
            return -v if np.isfinite(v) else _PENALTY

        res = optimize.minimize_scalar(negll, bounds=(math.log(sig_e) - 6, math.log(sig_e) + 6),
                                       method="bounded", options={"xatol": 1e-11})
        ll1 = lambda t: ll2([t[0], bta])
        theta, ll = _newton_polish(ll1, [math.exp(res.x)], lower=np.array([0.0]))
        se, cov, msg = _std_errors(("sigma",), observed_information(ll1, theta))
        return FitResult(Gompertz(float(theta[0]), bta), ll, se, sample.n, d,
                         converged=bool(res.success), fixed={"beta": bta}, message=msg, cov=cov)

    score = gompertz_score_at_zero(sample, sig_e)
    if score <= 0:
        se, cov, msg = _std_errors(("sigma",), observed_information(
            lambda t: ll2([t[0], 0.0]), [sig_e]))
        return FitResult(Gompertz(sig_e, 0.0), expfit.loglik, se, sample.n, d,
                         boundary=True, message="beta at boundary 0", cov=cov)

    def negf(t):
        v = ll2([math.exp(t[0]), t[1]])
        return -v if np.isfinite(v) else _PENALTY

    starts = [(math.log(sig_e), b0) for b0 in (1e-3, 0.02, 0.1, 0.3)]
    best = _minimize(negf, starts, bounds=[(None, None), (0.0, 50.0)])
    theta = np.array([math.exp(best.x[0]), best.x[1]])
    ll = -best.fun
    if theta[1] > 1e-6:
        theta, ll = _newton_polish(ll2, theta, lower=np.array([0.0, 0.0]))
    if ll <= expfit.loglik or theta[1] < BETA_ZERO_CUTOFF:
        se, cov, msg = _std_errors(("sigma",), observed_information(
            lambda t: ll2([t[0], 0.0]), [sig_e]))
        return FitResult(Gompertz(sig_e, 0.0), expfit.loglik, se, sample.n, d,
                         boundary=True, message="beta at boundary 0", cov=cov)
    se, cov, msg = _std_errors(("sigma", "beta"), observed_information(ll2, theta))
    return FitResult(Gompertz(float(theta[0]), float(theta[1])), ll, se, sample.n, d,
                     converged=bool(best.success), iterations=int(best.nit),
                     message=msg or str(best.message), cov=cov)


def fit_mle(data, family, fixed_gamma=None, fixed_iota=None, fixed_beta=None):
    """Maximum likelihood fit of ``family`` ('gpd', 'exp' or 'gompertz').

    At most one constraint may be given; the remaining parameters are then
    profiled.  ``fixed_iota`` is the endpoint as an age, i.e. ``u - sigma/gamma``.
    """
    sample = as_sample(data)
    if sample.n == 0:
        raise FitError("empty sample")
    family = _family(family)
    if sum(v is not None for v in (fixed_gamma, fixed_iota, fixed_beta)) > 1:
        raise ValueError("give at most one constraint")
    if family == "exp":
        return _fit_exponential_numeric(sample)
    if family == "gpd":
        if fixed_beta is not None:
            raise ValueError("fixed_beta applies to the Gompertz family")
        return _fit_gpd(sample, fixed_gamma, fixed_iota)
    if fixed_gamma is not None or fixed_iota is not None:
        raise ValueError("Gompertz fits accept only fixed_beta")
    return _fit_gompertz(sample, fixed_beta)


# -- profiles ---------------------------------------------------------------

@dataclass
class ProfileTrace:
    param: str
    values: np.ndarray
    loglik: np.ndarray
    converged: np.ndarray
    nuisance: np.ndarray

    def to_rows(self):
        return [{"param": self.param, "value": float(v), "loglik": float(l),
                 "converged": bool(c), "sigma": float(s)}
                for v, l, c, s in zip(self.values, self.loglik, self.converged, self.nuisance)]


def profile_loglik(data, family, param, grid):
    """Profile log-likelihood over ``grid`` for ``param`` in {'gamma', 'iota',
    'beta', 'sigma_e'}; failed points carry ``converged=False``."""
    sample = as_sample(data)
    family = _family(family)
    grid = np.asarray(grid, dtype=float)
    lls = np.full(grid.size, -np.inf)
    ok = np.zeros(grid.size, dtype=bool)
    nuis = np.full(grid.size, np.nan)
    for i, v in enumerate(grid):
        try:
            if param == "gamma":
                fit = fit_mle(sample, "gpd", fixed_gamma=v)
            elif param == "iota":
                fit = fit_mle(sample, "gpd", fixed_iota=v)
            elif param == "beta":
                fit = fit_mle(sample, "gompertz", fixed_beta=v)
            elif param in ("sigma_e", "sigma"):
                if family != "exp":
                    raise ValueError("sigma profiles are provided for the exponential family")
                lls[i] = loglik(Exponential(v), sample)
                ok[i] = np.isfinite(lls[i])
                nuis[i] = v
                continue
            else:
                raise ValueError(f"cannot profile {param!r}")
        except FitError:
            continue
        lls[i] = fit.loglik
        ok[i] = fit.converged and np.isfinite(fit.loglik)
        nuis[i] = fit.model.sigma
    return ProfileTrace(param, grid, lls, ok, nuis)
