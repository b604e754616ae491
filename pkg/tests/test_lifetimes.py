import datetime as dt

import numpy as np
import pytest

from conftest import DT_FRAME, LTRC_FRAME, record
from longevity.distributions import Exponential
from longevity.exceptions import DataError
from longevity.lifetimes import (Dataset, GeneratorConfig, SamplingFrame, Scheme, Status,
                                 generate_lexis, load_csv, matched_dataset, resimulate,
                                 save_csv, truncation_offset)
from longevity.likelihood import fit_exponential_closed_form

HEADER = "id,birth_date,entry_date,death_date,sex,cohort\n"


def write(tmp_path, rows):
    p = tmp_path / "data.csv"
    p.write_text(HEADER + "".join(r + "\n" for r in rows))
    return p


def test_dt_rejects_death_before_frame(tmp_path):
    frame = SamplingFrame("2009-01-01", "2016-01-01", Scheme.DT, 105)
    p = write(tmp_path, ["a,1900-01-01,2005-01-01,2007-07-02,F,1900"])
    with pytest.raises(DataError, match="before frame begin") as err:
        load_csv(p, frame)
    assert err.value.row == 2


def test_empty_death_date_is_censored_at_frame_end(tmp_path):
    frame = SamplingFrame("2009-01-01", "2016-01-01", Scheme.LTRC, 105)
    ds = load_csv(write(tmp_path, ["a,1905-03-01,2010-03-01,,F,1905"]), frame)
    rec = ds.records[0]
    assert rec.status is Status.CENSORED
    assert rec.exit_date == frame.end
    s = ds.sample
    assert s.entry[0] + s.x[0] == pytest.approx(s.window)


def test_excess_from_dates(tmp_path):
    frame = SamplingFrame("2009-01-01", "2016-01-01", Scheme.LTRC, 105)
    ds = load_csv(write(tmp_path, ["a,,2010-03-05,2012-03-05,M,"]), frame)
    rec = ds.records[0]
    assert rec.dead
    assert rec.excess_x == pytest.approx(2.0, abs=1 / 365.25)


def test_censored_record_not_allowed_under_dt(tmp_path):
    with pytest.raises(DataError, match="censored"):
        load_csv(write(tmp_path, ["a,,2010-03-05,,F,"]), DT_FRAME)


def test_malformed_row_reports_row_number(tmp_path):
    p = write(tmp_path, ["a,,2010-03-05,2012-03-05,F,", "b,,not-a-date,,F,"])
    with pytest.raises(DataError) as err:
        load_csv(p, LTRC_FRAME)
    assert err.value.row == 3


def test_missing_columns(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("id,entry_date\na,2010-01-01\n")
    with pytest.raises(DataError, match="missing columns"):
        load_csv(p, LTRC_FRAME)


@pytest.mark.parametrize("entry,expected", [
    (dt.date(2009, 1, 1) - dt.timedelta(days=round(1.5 * 365.25)), 1.5),
    (dt.date(2011, 1, 1), 0.0),
    (dt.date(2009, 1, 1), 0.0),
])
def test_truncation_offset(entry, expected):
    rec = record(entry.isoformat(), "2012-06-01")
    assert truncation_offset(rec, LTRC_FRAME) == pytest.approx(expected, abs=1e-3)


def test_csv_round_trip(tmp_path, istat):
    p = tmp_path / "out.csv"
    save_csv(istat, p)
    back = load_csv(p, istat.frame, label=istat.label)
    assert back == istat
    np.testing.assert_array_equal(back.sample.x, istat.sample.x)


def test_generator_is_deterministic(tmp_path):
    cfg = GeneratorConfig.geometric(LTRC_FRAME, 1990, 2015, 50, 1.05)
    a = generate_lexis(cfg, Exponential(1.45), seed=3)
    b = generate_lexis(cfg, Exponential(1.45), seed=3)
    assert a == b
    save_csv(a, tmp_path / "a.csv")
    save_csv(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert generate_lexis(cfg, Exponential(1.45), seed=4) != a


def test_generator_dt_has_no_censoring():
    cfg = GeneratorConfig.geometric(DT_FRAME, 1980, 2017, 60, 1.03)
    ds = generate_lexis(cfg, Exponential(1.41), seed=1)
    assert len(ds) > 100
    assert all(r.dead for r in ds.records)


def test_generator_recovers_scale():
    # large LTRC frame: the exposure / deaths estimate is within 3 MC se of the truth
    cfg = GeneratorConfig.geometric(LTRC_FRAME, 1985, 2015, 6000, 1.0)
    ds = generate_lexis(cfg, Exponential(1.45), seed=2)
    fit = fit_exponential_closed_form(ds)
    assert fit.n_deaths > 40_000
    # whole-day rounding up adds about half a day to each lifetime
    assert abs(fit.model.sigma - 1.45) < 3 * fit.se("sigma") + 1 / 365.25


def test_matched_presets_hit_published_counts(istat, france):
    s = istat.sample
    assert s.n == 415 and s.n - s.n_deaths == 94
    assert int(np.sum(s.sex == "M")) == 40
    assert int(np.sum((s.sex == "M") & ~s.dead)) == 15
    assert france.sample.n == 1210 and france.sample.scheme is Scheme.DT
    assert matched_dataset("idl", seed=5).sample.n == 566


def test_rethreshold_recomputes_offsets(istat):
    s = istat.sample
    r = s.rethreshold(109)
    assert r.u == 109
    assert np.all(r.x > 0)
    # lower bound is the offset at the new age: max(b - t', 0) with t' = t + 1
    kept = (s.x > 1) & (s.entry + 1 < s.window)
    np.testing.assert_allclose(r.lower, np.maximum(-(s.entry[kept] + 1), 0))
    assert r.n == int(kept.sum())


@pytest.mark.parametrize("keep_status", [False, True])
def test_resimulate_respects_frame(istat, keep_status):
    s = istat.sample
    sim = resimulate(s, Exponential(1.45), np.random.default_rng(0), keep_status)
    assert np.all(sim.x > s.lower - 1e-12)
    assert np.all(sim.x[sim.dead] <= s.upper[sim.dead] + 1e-12)
    np.testing.assert_allclose(sim.x[~sim.dead], s.upper[~sim.dead])
    if keep_status:
        np.testing.assert_array_equal(sim.dead, s.dead)


def test_dataset_rejects_inconsistent_records():
    with pytest.raises(DataError, match="exit precedes entry"):
        Dataset(LTRC_FRAME, [record("2012-01-01", "2011-01-01")])
    with pytest.raises(DataError, match="after frame end"):
        Dataset(LTRC_FRAME, [record("2016-02-01", "2016-03-01")])
