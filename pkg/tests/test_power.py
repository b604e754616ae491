import math

import numpy as np
import pytest
from scipy import stats

from longevity.exceptions import DataError
from longevity.lifetimes import matched_dataset
from longevity.power import (alternative_at_power, power_endpoint, power_sex_ratio,
                             power_shape, sex_scales, write_power_csv)

N = 300


def within(p, target, n, k=2.5):
    return abs(p - target) <= k * math.sqrt(target * (1 - target) / n)


@pytest.fixture(scope="module")
def shape_curves(istat):
    return power_shape([istat], [0.0, -0.1, -0.2], n_sims=N, seed=1)


def test_shape_size_under_simulated_null(shape_curves):
    curve = shape_curves[0]
    # the critical value is itself estimated from N null draws
    assert within(curve.at(0.0), 0.05, N, k=3.5)


def test_shape_power_increases_with_departure(shape_curves):
    p = shape_curves[0].power
    assert p[0] < p[1] < p[2]


def test_wald_null_is_left_skewed(shape_curves):
    # the simulated 5% critical value lies below the normal one
    assert shape_curves[0].critical_value < stats.norm.ppf(0.05)


def test_power_is_deterministic(istat):
    a = power_shape([istat], [-0.1], n_sims=50, seed=3)[0]
    b = power_shape([istat], [-0.1], n_sims=50, seed=3)[0]
    assert a.power.tolist() == b.power.tolist()
    assert a.critical_value == b.critical_value


def test_combined_power_dominates(istat, france):
    curves = power_endpoint([istat, france], [125.0, 1e6], n_sims=150, seed=2)
    assert [c.dataset for c in curves][-1] == "combined"
    comb = curves[-1]
    # the joint test shares the endpoint and is at least as powerful as either
    for c in curves[:-1]:
        assert comb.at(125.0) >= c.at(125.0) - 3 * math.sqrt(0.25 / 150)
    # a remote endpoint is indistinguishable from the null
    for c in curves:
        assert within(c.at(1e6), 0.05, 150, k=3.5)


def test_endpoint_power_decreases_with_endpoint(istat):
    c = power_endpoint([istat], [125.0, 135.0], n_sims=150, seed=4)[0]
    assert c.at(125.0) > c.at(135.0)


def test_infeasible_endpoint_is_flagged(istat):
    top = 108 + istat.sample.max_point
    c = power_endpoint([istat], [top - 1, 130.0], n_sims=20, seed=0)[0]
    assert math.isnan(c.power[0]) and c.flags
    assert not math.isnan(c.power[1])


def test_sex_ratio_size_and_monotonicity(istat):
    c = power_sex_ratio(istat, [1.0, 1.4, 2.0], n_sims=N, seed=5)
    assert within(c.at(1.0), 0.05, N, k=3)
    assert c.power[0] < c.power[1] < c.power[2]


def test_sex_scales_keep_the_geometric_mean():
    f, m = sex_scales(1.45, 1.61)
    assert f / m == pytest.approx(1.61)
    assert math.sqrt(f * m) == pytest.approx(1.45)


def test_sex_ratio_needs_both_sexes(istat):
    women = istat.filter(lambda r: r.sex == "F")
    with pytest.raises(DataError):
        power_sex_ratio(women, [1.5], n_sims=10)


def test_alternative_at_power(shape_curves):
    c = shape_curves[0]
    g = alternative_at_power(c, 0.5)
    assert -0.2 <= g <= 0.0


def test_power_csv(shape_curves, tmp_path):
    write_power_csv(shape_curves, tmp_path / "power.csv")
    lines = (tmp_path / "power.csv").read_text().splitlines()
    assert lines[0] == "dataset,alternative_type,alternative_value,power,mc_se,n_sims,calibration"
    assert len(lines) == 4
