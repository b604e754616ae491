import math

import numpy as np
import pytest

from conftest import LTRC_FRAME, ltrc_sample, record
from longevity.distributions import GPD, Exponential
from longevity.exceptions import FitError
from longevity.lifetimes import Sample, Scheme, matched_dataset, shift_dataset
from longevity.likelihood import (endpoint_profile, exponential_score, fd_gradient,
                                  fit_exponential_closed_form, fit_exponential_naive,
                                  fit_gpd_profile, fit_mle, loglik, loglik_contribution,
                                  profile_loglik)


def test_ltrc_death_without_offset_is_plain_density():
    rec = record("2010-05-01", "2012-05-01")
    x = rec.excess_x
    assert loglik_contribution(rec, LTRC_FRAME, Exponential(1.3)) == pytest.approx(
        -math.log(1.3) - x / 1.3, rel=1e-12)


def test_ltrc_censored_without_offset_is_log_survival():
    rec = record("2010-05-01")
    exposure = (LTRC_FRAME.end.toordinal() - rec.entry_date.toordinal()) / 365.25
    assert loglik_contribution(rec, LTRC_FRAME, Exponential(1.3)) == pytest.approx(
        -exposure / 1.3, rel=1e-12)


def test_dt_contribution_by_hand():
    # x = 1 observed on the window (0.5, 2] relative to entry
    s = Sample([1.0], [True], [-0.5], 1.5, 108.0, Scheme.DT)
    expected = math.log(math.exp(-1) / (math.exp(-0.5) - math.exp(-2)))
    assert expected == pytest.approx(-0.2476, abs=1e-4)  # quoted value is rounded up
    assert loglik(Exponential(1.0), s) == pytest.approx(expected, rel=1e-12)


def test_closed_form_two_deaths():
    fit = fit_exponential_closed_form(ltrc_sample([2.0, 1.0], [True, True], [0, 0]))
    assert fit.model.sigma == pytest.approx(1.5, rel=1e-15)
    assert fit.se("sigma") == pytest.approx(1.5 / math.sqrt(2), rel=1e-15)
    assert fit.se("sigma") == pytest.approx(1.0607, abs=5e-5)


def test_closed_form_with_censored_exposure():
    fit = fit_exponential_closed_form(ltrc_sample([3.0, 2.0], [True, False], [1.0, 0.0]))
    assert fit.model.sigma == pytest.approx(4.0, rel=1e-15)


def test_all_censored_is_an_error():
    s = ltrc_sample([1.0, 2.0], [False, False], [0, 0])
    with pytest.raises(FitError):
        fit_exponential_closed_form(s)
    with pytest.raises(FitError):
        fit_mle(s, "exp")


def test_numerical_exponential_matches_closed_form(istat):
    a = fit_exponential_closed_form(istat)
    b = fit_mle(istat, "exp")
    assert abs(a.model.sigma - b.model.sigma) < 1e-8
    assert b.se("sigma") == pytest.approx(a.se("sigma"), rel=1e-5)
    assert b.loglik == pytest.approx(a.loglik, abs=1e-9)


def test_naive_estimate_is_biased_low(istat):
    assert fit_exponential_naive(istat).model.sigma < fit_exponential_closed_form(istat).model.sigma


def test_gpd_at_zero_shape_is_exponential(istat, france):
    for ds in (istat, france):
        g = fit_mle(ds, "gpd", fixed_gamma=0.0)
        e = fit_mle(ds, "exp")
        assert g.model.sigma == pytest.approx(e.model.sigma, rel=1e-7)
        assert g.loglik == pytest.approx(e.loglik, abs=1e-8)


def test_likelihood_invariant_to_calendar_shift(istat):
    shifted = shift_dataset(istat, 400)
    m = GPD(1.4, -0.03)
    assert loglik(m, shifted) == pytest.approx(loglik(m, istat), rel=1e-13)


@pytest.mark.parametrize("name", ["istat", "france"])
def test_exponential_score_matches_finite_differences(name):
    s = matched_dataset(name, seed=3).sample
    for sigma in (0.9, 1.45, 2.3):
        fd = fd_gradient(lambda t: loglik(Exponential(t[0]), s), [sigma])[0]
        assert exponential_score(s, sigma) == pytest.approx(fd, rel=1e-6, abs=1e-6)


def test_gpd_recovers_shape_at_istat105_scale():
    ds = matched_dataset("istat105", seed=21, model=GPD(1.67, -0.05))
    fit = fit_mle(ds, "gpd")
    assert 3000 < ds.sample.n < 5000
    se = fit.se("gamma")
    assert 0.01 < se < 0.04
    assert abs(fit.model.gamma + 0.05) < 3 * se


def test_fast_profile_agrees_with_general_fit(istat, france):
    for ds in (istat, france):
        a = fit_mle(ds, "gpd")
        b = fit_gpd_profile(ds)
        assert b.loglik == pytest.approx(a.loglik, abs=1e-6)
        assert b.model.gamma == pytest.approx(a.model.gamma, abs=1e-3)


def test_endpoint_profile_at_zero_is_exponential(istat):
    ll, sigma = endpoint_profile(istat, 0.0)
    e = fit_mle(istat, "exp")
    assert sigma == pytest.approx(e.model.sigma, rel=1e-9)
    assert ll == pytest.approx(e.loglik, abs=1e-9)


def test_profile_touches_maximum(istat):
    fit = fit_mle(istat, "gpd")
    tr = profile_loglik(istat, "gpd", "gamma", [fit.model.gamma])
    assert tr.loglik[0] == pytest.approx(fit.loglik, abs=1e-6)
    assert tr.converged[0]


def test_gamma_profile_peaks_near_zero_on_exponential_data():
    ds = matched_dataset("istat105", seed=2)
    grid = np.linspace(-0.1, 0.1, 21)
    tr = profile_loglik(ds, "gpd", "gamma", grid)
    assert abs(grid[np.argmax(tr.loglik)]) <= 0.03


def test_iota_profile_increases_when_shape_nonnegative():
    # find a replicate with a nonnegative shape estimate
    for seed in range(20):
        ds = matched_dataset("istat", seed=seed)
        fit = fit_mle(ds, "gpd")
        if fit.model.gamma >= 0:
            break
    else:
        pytest.fail("no replicate with a nonnegative shape estimate")
    top = 108 + ds.sample.max_point
    grid = top + np.array([1.0, 3.0, 10.0, 30.0, 100.0, 1000.0])
    tr = profile_loglik(ds, "gpd", "iota", grid)
    assert np.all(np.diff(tr.loglik) > -1e-8)
    assert tr.loglik[-1] <= fit_mle(ds, "exp").loglik + 1e-6


def test_constraints_are_exclusive(istat):
    with pytest.raises(ValueError):
        fit_mle(istat, "gpd", fixed_gamma=0.0, fixed_iota=120.0)
    with pytest.raises(ValueError):
        fit_mle(istat, "gompertz", fixed_gamma=0.0)


def test_gompertz_fixed_beta_zero_is_exponential(istat):
    g = fit_mle(istat, "gompertz", fixed_beta=0.0)
    assert g.model.sigma == pytest.approx(fit_mle(istat, "exp").model.sigma, rel=1e-7)


def test_fit_result_serializes(istat):
    d = fit_mle(istat, "gpd").to_dict()
    assert d["family"] == "gpd" and d["n_u"] == 415 and d["n_deaths"] == 321
    assert set(d["estimates"]) == {"sigma", "gamma"}
