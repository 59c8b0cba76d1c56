import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from degrade.data import FailureThreshold, rmdt_from_arrays
from degrade.nonparam import (EventTable, ep_critical_value, ep_tail_probability,
                              extract_soft_failures, kaplan_meier, nair_scb, pointwise_band)

HAND = [(1, True), (2, True), (3, False), (4, True)]


def test_hand_fixture_exact():
    km = kaplan_meier(HAND)
    assert list(km.times) == [1, 2, 3, 4]
    assert list(km.extra["survival"]) == [0.75, 0.5, 0.5, 0.0]


def test_no_censoring_is_ecdf():
    t = [3.0, 1.0, 2.0, 2.0, 5.0]
    km = kaplan_meier([(x, True) for x in t])
    ecdf = np.array([np.mean(np.array(t) <= s) for s in km.times])
    assert np.allclose(km.cdf, ecdf, atol=1e-15)


def test_all_censored():
    km = kaplan_meier([(1, False), (2, False)])
    assert np.all(km.extra["survival"] == 1.0)
    with pytest.raises(ValueError):
        nair_scb([(1, False), (2, False)])


def test_event_table_invariants():
    tab = EventTable.from_events(HAND + [(2, False)])
    assert np.all(np.diff(tab.at_risk) <= 0) and np.all(tab.failures <= tab.at_risk)
    assert list(tab.at_risk) == [5, 4, 2, 1]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 30), st.booleans()), min_size=1, max_size=40))
def test_km_nondecreasing_jumps_at_failures(ev):
    km = kaplan_meier(ev)
    assert np.all(np.diff(km.cdf) >= 0)
    jumps = np.r_[km.cdf[0], np.diff(km.cdf)] > 0
    fail_times = {t for t, f in ev if f}
    assert all(t in fail_times for t in km.times[jumps])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 30), st.booleans()), min_size=1, max_size=40), st.integers(1, 5))
def test_late_censoring_changes_nothing_before(ev, extra):
    # pushing censorings that sit past the last failure further out leaves S alone up to it
    fails = [t for t, f in ev if f]
    last = max(fails) if fails else 0
    moved = [(t + extra if (not f and t > last) else t, f) for t, f in ev]
    a, b = kaplan_meier(ev), kaplan_meier(moved)
    ka, kb = a.times <= last, b.times <= last
    assert np.array_equal(a.extra["survival"][ka], b.extra["survival"][kb])


def test_soft_failure_rules():
    d = rmdt_from_arrays(["A", "A", "B", "B", "C", "C"], [1, 2, 1, 2, 1, 2], [0.2, 0.6, 0.1, 0.3, 0.5, 0.7])
    ev = dict(zip("ABC", extract_soft_failures(d, 0.4)))
    assert ev["A"] == (1.5, True)
    assert ev["B"] == (2.0, False)
    assert ev["C"] == (1.0, True)
    single = rmdt_from_arrays(["S"], [3.0], [0.1])
    assert extract_soft_failures(single, 0.4) == [(3.0, False)]


def test_soft_failure_decreasing():
    d = rmdt_from_arrays(["A", "A"], [0, 10], [1.0, 0.0])
    assert extract_soft_failures(d, FailureThreshold(0.25, "decreasing")) == [(7.5, True)]


@settings(max_examples=60, deadline=None)
@given(st.floats(0.1, 5), st.floats(-2, 2), st.floats(0.05, 0.95), st.integers(1, 5))
def test_soft_failure_redundant_points(slope, icpt, frac, k):
    t = np.array([0.0, 10.0])
    y = icpt + slope * t
    d0 = y[0] + frac * (y[1] - y[0])
    base = extract_soft_failures(rmdt_from_arrays(["A"] * 2, t, y), d0)[0][0]
    tt = np.linspace(0, 10, k + 2)
    more = extract_soft_failures(rmdt_from_arrays(["A"] * tt.size, tt, icpt + slope * tt), d0)[0][0]
    assert abs(base - more) < 1e-12 * max(1.0, base)


def test_critical_value_solves_tail():
    c = ep_critical_value(0.1, 0.9, 0.95)
    assert ep_tail_probability(c, 0.1, 0.9) == pytest.approx(0.05, abs=1e-10)
    assert c >= norm.ppf(0.975)
    assert ep_critical_value(0.1, 0.9, 0.99) > c


def test_band_contains_pointwise_and_clipped():
    rng = np.random.default_rng(1)
    t = rng.exponential(1.0, 80)
    c = rng.exponential(2.0, 80)
    ev = list(zip(np.minimum(t, c), t <= c))
    for tr in ("loglog", "arcsine", "linear"):
        band = nair_scb(ev, transform=tr)
        lo, hi = pointwise_band(ev, band.times, transform=tr)
        assert np.all(band.lower <= lo + 1e-12) and np.all(band.upper >= hi - 1e-12)
        assert np.all((band.lower >= 0) & (band.upper <= 1))
        assert np.all(band.lower <= band.km) and np.all(band.km <= band.upper)
    lines = band.to_csv().splitlines()
    assert lines[0] == "time,km,lower,upper"


def test_band_errors():
    with pytest.raises(ValueError):
        nair_scb(HAND, t_range=(3.0, 2.0))
    with pytest.raises(ValueError):
        nair_scb(HAND, transform="probit")


def test_band_coverage_small():
    rng = np.random.default_rng(7)
    hits = 0
    lo_t, hi_t = -np.log(0.9), -np.log(0.1)
    for _ in range(200):
        ev = [(x, True) for x in rng.exponential(1.0, 100)]
        b = nair_scb(ev, t_range=(lo_t, hi_t))
        grid_s = np.exp(-b.times)
        nxt = np.exp(-np.r_[b.times[1:], hi_t])
        hits += np.all((b.lower <= nxt) & (grid_s <= b.upper))
    assert hits / 200 >= 0.9
