import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from degrade.data import RmdtDataset, UnitSeries, ValidationError, rmdt_from_arrays
from degrade.optim import OptimizerOptions
from degrade.sp import (DegenerateIncrementError, SpModelSpec, empirical_first_passage, fit_sp,
                        ig_cdf, simulate_sp_path, simulate_sp_paths, sp_failure_cdf,
                        sp_increment_loglik)

PROCS = ("wiener", "gamma", "inverse_gaussian")


def test_increment_loglik_examples():
    w = rmdt_from_arrays(["A", "A"], [1, 2], [0.5, 1.0])
    assert sp_increment_loglik(SpModelSpec("wiener"), w) == pytest.approx(-2.08788, abs=5e-6)
    g = rmdt_from_arrays(["A"], [1], [1.0])
    assert sp_increment_loglik(SpModelSpec("gamma"), g) == pytest.approx(-1.0, abs=1e-12)
    assert sp_increment_loglik(SpModelSpec("inverse_gaussian"), g) == \
        pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)


def test_negative_increment_names_unit():
    d = rmdt_from_arrays(["Z9", "Z9"], [1, 2], [1.0, 0.5])
    for p in ("gamma", "inverse_gaussian"):
        with pytest.raises(ValueError, match="Z9"):
            sp_increment_loglik(SpModelSpec(p), d)
    assert np.isfinite(sp_increment_loglik(SpModelSpec("wiener"), d))


def test_zero_trend_increment_is_degenerate():
    d = RmdtDataset((UnitSeries("A", [0.0, 1.0], [0.0, 0.3]),))
    spec = SpModelSpec("gamma", alpha1=1e6, alpha2=1e9)  # trend underflows to 0
    with pytest.raises(DegenerateIncrementError):
        sp_increment_loglik(spec, d)


def test_failure_cdf_anchors():
    assert sp_failure_cdf(SpModelSpec("wiener"), 1.0, [1.0]).cdf[0] == pytest.approx(0.66810, abs=1e-5)
    assert sp_failure_cdf(SpModelSpec("gamma"), math.log(2), [1.0]).cdf[0] == pytest.approx(0.5, abs=1e-15)
    assert sp_failure_cdf(SpModelSpec("inverse_gaussian"), 1.0, [1.0]).cdf[0] == \
        pytest.approx(0.33190, abs=1e-5)
    ref = 0.5 + math.exp(2) * 0.5 * math.erfc(2 / math.sqrt(2))
    assert ig_cdf(1.0, 1.0, 1.0) == pytest.approx(ref, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(PROCS), st.floats(0.3, 3), st.floats(0.5, 50), st.floats(0.05, 3), st.floats(0.1, 10))
def test_cdf_shape(proc, a1, a2, sigma, d0):
    spec = SpModelSpec(proc, a1, a2, sigma)
    t = np.r_[0.0, np.geomspace(1e-3 * a2, 1e3 * a2, 60)]
    F = sp_failure_cdf(spec, d0, t).cdf
    assert F[0] == 0.0
    assert np.all(np.diff(F) >= -1e-12)
    assert np.all((F >= 0) & (F <= 1))
    if a1 >= 0.8:  # mu(1e6 a2) >= 6e4 dwarfs d0; small a1 leaves a visible wiener tail
        assert sp_failure_cdf(spec, d0, [1e6 * a2]).cdf[0] == pytest.approx(1.0, abs=1e-6)


@given(st.floats(0.1, 5), st.floats(0.1, 100))
def test_trend_pivot(a1, a2):
    assert SpModelSpec("gamma", a1, a2).trend(a2) == 1.0


def test_simulate_monotone_and_deterministic():
    g = np.linspace(0, 5, 51)
    for p in ("gamma", "inverse_gaussian"):
        for s in range(5):
            u = simulate_sp_path(SpModelSpec(p, 1.2, 2.0, 0.5), g, seed=s)
            assert np.all(np.diff(u.measurements) >= 0)
    a = simulate_sp_path(SpModelSpec("wiener"), g, seed=4)
    assert a == simulate_sp_path(SpModelSpec("wiener"), g, seed=4)
    with pytest.raises(ValueError):
        simulate_sp_path(SpModelSpec("wiener"), [1, 2])


@pytest.mark.parametrize("proc", PROCS)
def test_simulated_mean_matches_trend(proc):
    spec = SpModelSpec(proc, 1.3, 2.0, 0.4)
    g = np.array([0.0, 0.5, 1.0, 3.0])
    Y = simulate_sp_paths(spec, g, 100_000, seed=1)
    m = spec.trend(g)
    if proc == "gamma":
        m = spec.sigma * m  # shape dmu, scale sigma: the mean carries sigma
    var = {"wiener": spec.sigma ** 2 * m, "gamma": spec.sigma * m,
           "inverse_gaussian": m / spec.sigma}[proc]
    se = np.sqrt(var[1:] / Y.shape[0])
    assert np.all(np.abs(Y[:, 1:].mean(0) - m[1:]) < 3 * se)


def test_chunking_does_not_change_paths():
    spec = SpModelSpec("gamma", 1.0, 1.0, 0.3)
    a = simulate_sp_paths(spec, [0, 1, 2], 25, seed=3, chunk=10)
    b = simulate_sp_paths(spec, [0, 1, 2], 25, seed=3, chunk=10)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("proc", PROCS)
def test_first_passage_simulation_small(proc):
    spec = SpModelSpec(proc, 1.0, 1.0, 0.5)
    g = np.linspace(0, 6, 301)
    emp = empirical_first_passage(spec, 2.0, g, 20_000, seed=2).cdf
    assert np.max(np.abs(emp - sp_failure_cdf(spec, 2.0, g).cdf)) < 0.03


def test_gamma_simulate_recover():
    truth = SpModelSpec("gamma", 1.4, 3.0, 0.2)
    g = np.linspace(0, 10, 11)
    units = tuple(UnitSeries(f"U{i}", g[1:], simulate_sp_path(truth, g, seed=100 + i).measurements[1:])
                  for i in range(50))
    f = fit_sp(SpModelSpec("gamma"), RmdtDataset(units), OptimizerOptions(restarts=2))
    assert f.converged
    for k in ("alpha1", "alpha2", "sigma"):
        assert abs(f.estimates[k] - getattr(truth, k)) < 3 * f.se[k], k


def test_wiener_sigma_closed_form_at_known_trend():
    truth = SpModelSpec("wiener", 1.0, 1.0, 0.7)
    g = np.linspace(0, 20, 201)
    units = tuple(UnitSeries(f"U{i}", g[1:], simulate_sp_path(truth, g, seed=i).measurements[1:])
                  for i in range(20))
    d = RmdtDataset(units)
    f = fit_sp(SpModelSpec("wiener", 1.0, 1.0, 0.5), d)
    dy = np.concatenate([np.diff(np.r_[0.0, u.measurements]) for u in units])
    dm = np.diff(g)[0]
    s2 = np.mean((dy - dm) ** 2 / dm)
    assert f.estimates["sigma"] ** 2 == pytest.approx(s2, rel=0.05)


def test_duplicated_data_doubles_loglik():
    spec = SpModelSpec("inverse_gaussian", 1.2, 2.0, 3.0)
    g = np.linspace(0, 4, 9)
    u = simulate_sp_path(spec, g, seed=1)
    one = RmdtDataset((UnitSeries("A", g[1:], u.measurements[1:]),))
    two = RmdtDataset(one.units + (UnitSeries("B", g[1:], u.measurements[1:]),))
    assert sp_increment_loglik(spec, two) == pytest.approx(2 * sp_increment_loglik(spec, one), rel=1e-13)


def test_invalid_spec():
    with pytest.raises(ValueError):
        SpModelSpec("levy")
    with pytest.raises(ValueError):
        SpModelSpec("gamma", sigma=0.0)
    with pytest.raises(ValueError):
        sp_failure_cdf(SpModelSpec("gamma"), 0.0, [1.0])
