import datetime as dt

import numpy as np
import pytest

from longevity.lifetimes import (LifetimeRecord, Sample, SamplingFrame, Scheme, Status,
                                 matched_dataset)

LTRC_FRAME = SamplingFrame("2009-01-01", "2016-01-01", Scheme.LTRC, 108)
DT_FRAME = SamplingFrame("2000-01-01", "2018-01-01", Scheme.DT, 108)


def record(entry, exit_=None, frame=LTRC_FRAME, ident="r", sex="F"):
    """Death on ``exit_`` or, with ``exit_=None``, censored at the frame end."""
    entry = dt.date.fromisoformat(entry)
    if exit_ is None:
        return LifetimeRecord(ident, entry, frame.end, Status.CENSORED, sex)
    return LifetimeRecord(ident, entry, dt.date.fromisoformat(exit_), Status.DEAD, sex)


def ltrc_sample(x, dead, lower, window=50.0, u=105.0):
    """Sample with given exits, statuses and offsets (entry = -offset)."""
    lower = np.asarray(lower, dtype=float)
    return Sample(np.asarray(x, float), np.asarray(dead, bool), -lower, window, u, Scheme.LTRC)


@pytest.fixture(scope="session")
def istat():
    return matched_dataset("istat", seed=11)


@pytest.fixture(scope="session")
def france():
    return matched_dataset("france", seed=12)


@pytest.fixture(scope="session")
def istat105():
    return matched_dataset("istat105", seed=13)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(lines):
        terminalreporter.write_line(lines[key])
