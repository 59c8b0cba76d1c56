import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from degrade.data import CovariateHistory, FailureThreshold
from degrade.paths import (CoatingPath, CumulativeExposurePath, DeviceBPath, LinearPath,
                           LogLogisticPath, ParisPath, SingularityError, first_crossing_time,
                           path_from_dict)


def test_paris_theta2_two_example():
    p = ParisPath(0.01, 2.0, 9.0)
    assert p.evaluate(10.0) == pytest.approx(9 * math.exp(0.01 * math.pi * 10), rel=1e-12)
    assert p.evaluate(10.0) == pytest.approx(12.322, abs=5e-4)


def test_paris_crossing_inverts_example():
    p = ParisPath(0.01, 2.0, 9.0)
    level = p.evaluate(10.0)
    assert first_crossing_time(p, FailureThreshold(level)) == pytest.approx(10.0, abs=1e-6)
    # the rounded value printed in the example lands within 2e-4 of 10
    assert first_crossing_time(p, FailureThreshold(12.322)) == pytest.approx(10.0, abs=2e-4)


def test_paris_theta2_zero_is_linear():
    p = ParisPath(0.3, 0.0, 9.0)
    assert p.evaluate(4.0) == pytest.approx(9 + 0.3 * 4, rel=1e-12)


def test_paris_continuity_near_two():
    t = np.linspace(0, 50, 11)
    ref = ParisPath(0.005, 2.0, 9.0).evaluate(t)
    for d in (1e-6, -1e-6):
        assert np.allclose(ParisPath(0.005, 2.0 + d, 9.0).evaluate(t), ref, rtol=1e-4)


def test_paris_blowup_raises_with_time():
    p = ParisPath(0.01, 3.0, 9.0)
    with pytest.raises(SingularityError) as e:
        p.evaluate(p.blowup_time * 1.01)
    assert e.value.blowup_time == pytest.approx(p.blowup_time)


def test_loglogistic_half_asymptote():
    assert LogLogisticPath(4.0, 2.5, 0.7).evaluate(2.5) == pytest.approx(2.0)


def test_device_b_limits():
    p = DeviceBPath(-7.0, 0.3, 0.6, 24.0, 25.0)
    assert p.evaluate(0.0) == 0.0
    assert p.evaluate(1e12) == pytest.approx(-math.exp(0.3))
    assert first_crossing_time(p, FailureThreshold(-1.1 * math.exp(0.3), "decreasing")) is None


def test_cumulative_exposure_constant_history():
    h = CovariateHistory("A", "x", [0, 5, 10], [2.0, 2.0, 2.0])
    p = CumulativeExposurePath(1.0, (("power", (0.5, 1.5)),), (h,))
    assert p.evaluate(7.0) == pytest.approx(1 + 7 * 0.5 * 2 ** 1.5)


def test_linear_crossing_and_domain():
    assert first_crossing_time(LinearPath(0, 2), FailureThreshold(1.0)) == 0.5
    with pytest.raises(ValueError):
        first_crossing_time(LinearPath(0, -2), FailureThreshold(1.0))


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        LinearPath(0, 1).evaluate(-1.0)


def test_json_roundtrip():
    h = CovariateHistory("A", "x", [0, 1], [1.0, 2.0])
    for p in (LinearPath(1, 2), ParisPath(0.01, 2.5, 9), LogLogisticPath(3, 2, 1),
              DeviceBPath(-7, 0.3, 0.6, 24, 25), CoatingPath(-1, 2, (0.5,), 1.2, 0.1, (1.0,)),
              CumulativeExposurePath(0.5, (("linear", (0.3,)),), (h,))):
        q = path_from_dict(p.to_dict())
        assert np.allclose(q.evaluate(np.array([0.2, 0.9])), p.evaluate(np.array([0.2, 0.9])))


def _paths(draw_vals):
    a, b, c = draw_vals
    return [LinearPath(a, abs(b) + 0.1), ParisPath(abs(c) * 1e-3 + 1e-4, 1.5 + abs(b) % 0.9, 5.0),
            LogLogisticPath(abs(a) + 1, abs(b) + 0.5, abs(c) + 0.3),
            CoatingPath(-(abs(a) + 0.5), b, (), abs(c) + 0.2)]


@settings(max_examples=60, deadline=None)
@given(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5)),
       st.floats(0, 20), st.floats(0, 20))
def test_monotone_after_canonicalization(vals, t1, t2):
    t1, t2 = sorted((t1, t2))
    for p in _paths(vals):
        s = 1.0 if p.direction == "increasing" else -1.0
        assert s * p.evaluate(t2) >= s * p.evaluate(t1) - 1e-12 * (1 + abs(p.evaluate(t1)))


@settings(max_examples=60, deadline=None)
@given(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5)), st.floats(0.05, 0.95))
def test_crossing_consistency(vals, frac):
    for p in _paths(vals):
        v0, v1 = p.evaluate(1e-3), p.evaluate(30.0)
        level = v0 + frac * (v1 - v0)
        if abs(v1 - v0) < 1e-6:
            continue
        T = first_crossing_time(p, FailureThreshold(level, p.direction))
        assert T is not None
        assert p.evaluate(T) == pytest.approx(level, rel=1e-8, abs=1e-10)


def test_bisection_path_crossing():
    h = CovariateHistory("A", "x", [0, 10, 20, 30], [1.0, 3.0, 2.0, 4.0])
    p = CumulativeExposurePath(0.0, (("linear", (1.0,)),), (h,))
    T = first_crossing_time(p, FailureThreshold(25.0))
    assert p.evaluate(T) == pytest.approx(25.0, rel=1e-8)
    assert first_crossing_time(p, FailureThreshold(1e6)) is None
