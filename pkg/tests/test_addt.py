import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from degrade.addt import (AddtParametricModel, AddtSemiparametricModel, AddtTemplate,
                          ExtrapolationError, ISplineBasis, InsufficientSupportError,
                          NoCrossingError, addt_bootstrap, addt_failure_cdf, addt_parametric_loglik,
                          addt_quantile, equicorrelation_logdet, equicorrelation_quad, fit_addt,
                          mean_time_to_failure, model_from_fit, simulate_addt, thermal_index)
from degrade.addt import _knots_for
from degrade.data import AddtDataset, AddtRecord, FailureThreshold, ValidationError, arrhenius_transform
from degrade.optim import OptimizerOptions

ARR70 = arrhenius_transform(70.0, "negative")
TRUTH = AddtParametricModel(4.47, -0.0284 / math.exp(0.65 * ARR70), 0.65, 0.10, 0.3)
TEMPS = (50.0, 60.0, 70.0)
TIMES = (336.0, 672.0, 1008.0, 2016.0, 2688.0)


def test_equicorrelation_determinant_example():
    assert math.exp(equicorrelation_logdet(2, 1.0, 0.5)) == pytest.approx(0.75, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 20), st.floats(0.05, 5), st.floats(0, 0.99), st.integers(0, 2 ** 32 - 1))
def test_equicorrelation_vs_dense(n, sigma, rho, seed):
    r = np.random.default_rng(seed).normal(size=n)
    S = sigma ** 2 * ((1 - rho) * np.eye(n) + rho)
    sign, ld = np.linalg.slogdet(S)
    assert equicorrelation_logdet(n, sigma, rho) == pytest.approx(ld, rel=1e-10, abs=1e-10)
    q = r @ np.linalg.solve(S, r)
    assert equicorrelation_quad(np.sum(r ** 2), np.sum(r), n, sigma, rho) == pytest.approx(q, rel=1e-10)
    dense = stats.multivariate_normal(np.zeros(n), S).logpdf(r)
    ours = -0.5 * (n * math.log(2 * math.pi) + equicorrelation_logdet(n, sigma, rho)
                   + equicorrelation_quad(np.sum(r ** 2), np.sum(r), n, sigma, rho))
    assert ours == pytest.approx(dense, rel=1e-10)


def test_loglik_vs_dense_on_dataset():
    d = simulate_addt(TRUTH, TEMPS, TIMES[:3], 4, seed=1, baseline=5)
    x, _, t, y = d.arrays()
    ref = 0.0
    for idx in d.batches():
        n = idx.size
        S = TRUTH.sigma ** 2 * ((1 - TRUTH.rho) * np.eye(n) + TRUTH.rho)
        ref += stats.multivariate_normal(TRUTH.mean(t[idx], x[idx]), S).logpdf(y[idx])
    assert addt_parametric_loglik(TRUTH, d) == pytest.approx(ref, rel=1e-10)


def test_singleton_batches_are_rho_free():
    recs = tuple(AddtRecord(ARR70 + k * 0.1, 70.0, 100.0 * (k + 1), f"b{k}", 4.0 - 0.1 * k) for k in range(5))
    d = AddtDataset(recs)
    a = addt_parametric_loglik(AddtParametricModel(4.47, -1e-3, 0.1, 0.2, 0.0), d)
    b = addt_parametric_loglik(AddtParametricModel(4.47, -1e-3, 0.1, 0.2, 0.9), d)
    assert a == pytest.approx(b, rel=1e-13)


def test_rho_domain():
    with pytest.raises(ValueError):
        AddtParametricModel(1, -1, 0.1, 0.1, 1.0)
    with pytest.raises(ValueError):
        AddtParametricModel(1, -1, 0.1, 0.1, -0.1)


@pytest.fixture(scope="module")
def param_fit():
    d = simulate_addt(TRUTH, TEMPS, TIMES, 4, seed=2)
    return d, fit_addt("parametric", d, OptimizerOptions(restarts=2))


def test_parametric_simulate_recover():
    # beta1 = c exp(-beta2 xbar) with xbar near -34 is lognormal-like, so its
    # interval is taken on log|beta1|; rho can land on its boundary at 0
    hits = dict.fromkeys(("beta0", "beta1", "beta2", "sigma", "rho"), 0)
    for seed in range(20):
        d = simulate_addt(TRUTH, TEMPS, TIMES, 4, seed=seed)
        f = fit_addt("parametric", d, OptimizerOptions(restarts=1))
        e, se = f.estimates, f.se
        for k in ("beta0", "beta2", "sigma", "rho"):
            hits[k] += abs(e[k] - getattr(TRUTH, k)) < 3 * se[k]
        hits["beta1"] += abs(math.log(e["beta1"] / TRUTH.beta1)) < 3 * se["beta1"] / abs(e["beta1"])
    assert all(v >= 18 for v in hits.values()), hits


def test_parametric_fit_converges(param_fit):
    _, f = param_fit
    assert f.converged and f.extra["grad_norm"] < 1e-4


def test_needs_two_levels():
    d = simulate_addt(TRUTH, (60.0,), TIMES, 3, seed=0)
    with pytest.raises(ValidationError):
        fit_addt("parametric", d)


def test_cdf_and_quantile_roundtrip(param_fit):
    _, f = param_fit
    m = model_from_fit(f)
    thr = FailureThreshold(4.47 - math.log(2), "decreasing")
    x = arrhenius_transform(60.0, "negative")
    for q in (0.1, 0.5, 0.9):
        tq = addt_quantile(f, thr, x, q)
        assert addt_failure_cdf(f, thr, x, [tq]).cdf[0] == pytest.approx(q, abs=1e-6)
    t = 1500.0
    assert addt_failure_cdf(f, float(m.mean(t, x)), x, [t]).cdf[0] == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ValueError):
        addt_quantile(f, thr, x, 1.0)
    with pytest.raises(ValueError):
        addt_failure_cdf(f, FailureThreshold(3.0, "increasing"), x, [1.0])


def test_quantiles_decrease_with_temperature(param_fit):
    _, f = param_fit
    assert f.estimates["beta2"] > 0
    thr = FailureThreshold(4.47 - math.log(2), "decreasing")
    qs = [addt_quantile(f, thr, arrhenius_transform(tc, "negative"), 0.5) for tc in (40, 50, 60, 70, 80)]
    assert np.all(np.diff(qs) < 0)


def test_ti_monotone_in_target(param_fit):
    _, f = param_fit
    d0 = 4.47 - math.log(2)
    tis = [thermal_index(f, d0, td).ti_celsius for td in (1e3, 1e4, 1e5, 1e6)]
    assert np.all(np.diff(tis) < 0)


def test_ti_exponential_anchor():
    r = thermal_index(lambda x: np.exp(-20 + 10000 * x), target_hours=1e5)
    assert r.xd == pytest.approx(0.0031513, abs=5e-8)
    assert r.ti_celsius == pytest.approx(44.2, abs=0.1)
    assert math.exp(-20 + 10000 * r.xd) == pytest.approx(1e5, rel=1e-10)


def test_ti_roundtrip_exact():
    m = lambda x: np.exp(-20 + 10000 * x)
    xs = 0.0031
    r = thermal_index(m, target_hours=float(m(xs)))
    assert r.ti_celsius == pytest.approx(1 / xs - 273.16, abs=1e-9)


def test_ti_model_roundtrip():
    d0 = 4.47 - math.log(2)
    for tc in (20.0, 45.0, 90.0):
        td = float(mean_time_to_failure(TRUTH, d0, 1.0 / (1.0 / (tc + 273.16)) - 273.16))
        assert thermal_index(TRUTH, d0, td).ti_celsius == pytest.approx(tc, abs=1e-8)


def test_ti_extrapolation_error():
    with pytest.raises(ExtrapolationError) as e:
        thermal_index(lambda x: np.exp(-20 + 10000 * x), target_hours=1e300)
    lo, hi = e.value.attainable
    assert lo < hi


def test_ti_outputs():
    r = thermal_index(TRUTH, 4.47 - math.log(2), 1e5, curve_temps=[30, 40])
    import json
    js = json.loads(r.to_json())
    assert set(js) == {"ti_c", "td_hours", "xd", "method", "d0"}
    lines = r.curve_csv().splitlines()
    assert lines[0] == "temp_c,mtf_hours" and len(lines) == 3


def test_no_crossing_signal():
    with pytest.raises(NoCrossingError):
        TRUTH.time_to_level(5.0, ARR70)


def test_ispline_columns_monotone():
    b = ISplineBasis([1.0, 2.0, 3.0], 5.0)
    e = np.linspace(0, 6, 200)
    B = b(e)
    assert B.shape == (200, b.size)
    assert np.allclose(B[0], 0) and np.allclose(B[-1], 1)
    assert np.all(np.diff(B, axis=0) >= -1e-14)


def _design(beta=8.0):
    return simulate_addt(TRUTH, TEMPS, TIMES, 3, seed=4, baseline=4)


def test_semiparametric_noiseless_reproduction():
    d = _design()
    x, raw, t, _ = d.arrays()
    beta = 8.0
    x_max = x.max()
    eta = t / np.exp(beta * (x_max - x))
    knots, upper = _knots_for(eta, 3)
    basis = ISplineBasis(knots, upper)
    coefs = np.r_[4.5, np.linspace(0.1, 0.6, basis.size)]
    y = coefs[0] - basis(eta) @ coefs[1:]
    noiseless = AddtDataset(tuple(AddtRecord(r.condition, r.raw_condition, r.time, r.batch_id, yy)
                                  for r, yy in zip(d.records, y)))
    f = fit_addt(AddtTemplate("semiparametric", beta_fixed=beta), noiseless)
    m = model_from_fit(f)
    assert np.max(np.abs(m.g(eta) - y)) < 1e-6


@pytest.fixture(scope="module")
def semi_fit():
    d = simulate_addt(TRUTH, TEMPS, TIMES, 8, seed=0, baseline=8)
    return d, fit_addt(AddtTemplate("semiparametric"), d)


def test_semiparametric_monotone_and_baseline(semi_fit):
    d, f = semi_fit
    m = model_from_fit(f)
    assert f.converged
    e = np.linspace(0, m.upper * 1.2, 500)
    assert np.all(np.diff(m.g(e)) <= 1e-12)
    assert m.eta(123.0, m.x_max) == 123.0
    # the acceleration rate targets the same Arrhenius slope as beta2
    assert f.estimates["beta"] == pytest.approx(TRUTH.beta2 * 2, rel=0.3)
    assert f.extra["rss_history"] == sorted(f.extra["rss_history"], reverse=True)


def test_semiparametric_insufficient_support():
    recs = tuple(AddtRecord(x, 0.0, t, f"b{k}", 1.0) for k, (x, t) in
                 enumerate([(-35.0, 100.0), (-34.0, 100.0), (-35.0, 200.0)]))
    with pytest.raises(InsufficientSupportError):
        fit_addt(AddtTemplate("semiparametric", beta_fixed=0.0), AddtDataset(recs))


def test_semiparametric_bootstrap_parallel_invariant(semi_fit):
    d, _ = semi_fit
    tpl = AddtTemplate("semiparametric")
    a = addt_bootstrap(tpl, d, 4, seed=3, n_jobs=1)
    b = addt_bootstrap(tpl, d, 4, seed=3, n_jobs=2)
    assert np.array_equal(a, b)
    f = fit_addt(AddtTemplate("semiparametric", bootstrap=4), d, OptimizerOptions(seed=3))
    assert np.all(np.isfinite(f.covariance)) and f.extra["bootstrap"]["usable"] == 4


def test_semiparametric_ti_close_to_parametric(semi_fit):
    _, f = semi_fit
    d0 = 4.47 - math.log(2)
    truth = thermal_index(TRUTH, d0, 1e5).ti_celsius
    assert thermal_index(f, d0, 1e5).ti_celsius == pytest.approx(truth, abs=5.0)
