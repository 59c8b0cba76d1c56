"""Accelerated destructive degradation tests and thermal index.

Two mean models for a strength-like response that decreases over time:

* parametric ``D(t, x) = beta0 + beta1 * exp(beta2 * x) * sqrt(t)``, with
  equicorrelated errors inside a batch;
* semiparametric ``D(t, x) = g(t / exp(beta * s))``, ``s = x_max - x``, where
  ``g`` is a nonincreasing spline built from I-splines with nonnegative
  coefficients.

Here ``x = -11605 / (temp_c + 273.15)``, so hotter conditions have larger
``x``. The thermal index works on the reciprocal-temperature scale
``x_d = 1 / (TI + 273.16)``; the two Kelvin offsets differ by 0.01 on
purpose, each formula keeps its own.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special
from scipy.interpolate import BSpline

from .data import AddtDataset, AddtRecord, FailureThreshold, ValidationError, arrhenius_transform
from .gpm import _delta_covariance
from .optim import OptimizerOptions, maximize
from .results import CdfCurve, FitResult, substream

logger = logging.getLogger(__name__)

TI_OFFSET = 273.16
_LOG2PI = np.log(2 * np.pi)


class InsufficientSupportError(ValueError):
    """Too few distinct transformed times to fit the monotone spline."""


class NoCrossingError(ValueError):
    """The threshold is outside the range reached by the mean path."""


class ExtrapolationError(ValueError):
    """Target life not attainable inside the admissible temperature range."""

    def __init__(self, msg, attainable=(np.nan, np.nan)):
        super().__init__(msg)
        self.attainable = tuple(float(a) for a in attainable)


# --------------------------------------------------------------------------
# models
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AddtParametricModel:
    beta0: float
    beta1: float
    beta2: float
    sigma: float
    rho: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")

    def mean(self, t, x):
        t = np.asarray(t, float)
        return self.beta0 + self.beta1 * np.exp(self.beta2 * np.asarray(x, float)) * np.sqrt(t)

    def time_to_level(self, d0, x):
        """Mean-path crossing time ``[(d0 - beta0) / (beta1 exp(beta2 x))]^2``."""
        ratio = (d0 - self.beta0) / (self.beta1 * np.exp(self.beta2 * np.asarray(x, float)))
        if np.any(ratio < 0):
            raise NoCrossingError(f"mean path never reaches {d0}")
        return ratio ** 2


class ISplineBasis:
    """Monotone I-spline basis on ``[0, upper]``.

    Column ``j`` is the sum of B-splines ``j..n-1`` of degree ``order``;
    every column rises from 0 to 1. The constant column is dropped.
    Arguments past ``upper`` are clamped, so the basis is flat there.
    """

    def __init__(self, interior, upper: float, order: int = 3):
        self.interior = np.asarray(interior, float)
        self.upper = float(upper)
        self.order = int(order)
        d = self.order
        self._t = np.r_[np.zeros(d + 1), self.interior, np.full(d + 1, self.upper)]

    @property
    def size(self) -> int:
        return self._t.size - self.order - 1 - 1

    def __call__(self, eta):
        eta = np.clip(np.asarray(eta, float), 0.0, self.upper)
        B = BSpline.design_matrix(eta, self._t, self.order).toarray()
        # reverse cumulative sum across columns, drop the all-ones first column
        return np.cumsum(B[:, ::-1], axis=1)[:, ::-1][:, 1:]


@dataclass(frozen=True)
class AddtSemiparametricModel:
    beta: float
    knots: tuple
    spline_coefs: tuple  # (intercept, gamma_1, ..., gamma_k) with gamma >= 0
    x_max: float
    sigma: float
    upper: float
    order: int = 3

    @property
    def basis(self) -> ISplineBasis:
        return ISplineBasis(self.knots, self.upper, self.order)

    def eta(self, t, x):
        return np.asarray(t, float) / np.exp(self.beta * (self.x_max - np.asarray(x, float)))

    def g(self, eta):
        c = np.asarray(self.spline_coefs, float)
        eta = np.atleast_1d(np.asarray(eta, float))
        return c[0] - self.basis(eta) @ c[1:]

    def mean(self, t, x):
        t, x = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
        return self.g(self.eta(t, x).ravel()).reshape(t.shape)

    def eta_at_level(self, d0) -> float:
        """Smallest ``eta`` with ``g(eta) <= d0``, by bisection."""
        g0, g1 = self.g([0.0, self.upper])
        if d0 > g0:
            return 0.0
        if d0 < g1:
            raise NoCrossingError(f"threshold {d0} below the fitted range [{g1:.6g}, {g0:.6g}]")
        lo, hi = 0.0, self.upper
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.g([mid])[0] <= d0:
                hi = mid
            else:
                lo = mid
            if hi - lo <= 1e-12 * max(1.0, hi):
                break
        return hi

    def time_to_level(self, d0, x):
        return self.eta_at_level(d0) * np.exp(self.beta * (self.x_max - np.asarray(x, float)))


@dataclass
class AddtTemplate:
    """What ``fit_addt`` should fit.

    ``kind`` is ``"parametric"`` or ``"semiparametric"``. The remaining
    fields only matter for the semiparametric model; ``beta_fixed`` skips
    the search over ``beta``.
    """

    kind: str = "parametric"
    n_knots: int = 3
    order: int = 3
    bootstrap: int = 0
    beta_fixed: float | None = None
    beta_upper: float | None = None

    def __post_init__(self):
        if self.kind not in ("parametric", "semiparametric"):
            raise ValueError(f"unknown ADDT model kind {self.kind!r}")


# --------------------------------------------------------------------------
# parametric likelihood
# --------------------------------------------------------------------------

def _batch_labels(data: AddtDataset):
    labels = np.empty(len(data), dtype=int)
    for k, idx in enumerate(data.batches()):
        labels[idx] = k
    return labels, np.bincount(labels).astype(float)


def equicorrelation_logdet(n, sigma, rho):
    """``log |Sigma|`` for an ``n x n`` equicorrelation matrix scaled by ``sigma^2``."""
    n = np.asarray(n, float)
    return 2 * n * np.log(sigma) + (n - 1) * np.log1p(-rho) + np.log1p((n - 1) * rho)


def equicorrelation_quad(sum_r2, sum_r, n, sigma, rho):
    """``r' Sigma^{-1} r`` from the batch sums of ``r`` and ``r^2``."""
    n = np.asarray(n, float)
    return (sum_r2 - rho / (1 + (n - 1) * rho) * sum_r ** 2) / (sigma ** 2 * (1 - rho))


def _param_loglik(mean, y, labels, sizes, sigma, rho):
    r = y - mean
    s1 = np.bincount(labels, r, minlength=sizes.size)
    s2 = np.bincount(labels, r * r, minlength=sizes.size)
    ld = equicorrelation_logdet(sizes, sigma, rho)
    q = equicorrelation_quad(s2, s1, sizes, sigma, rho)
    return float(-0.5 * np.sum(sizes * _LOG2PI + ld + q))


def addt_parametric_loglik(model: AddtParametricModel, data: AddtDataset) -> float:
    """Gaussian log-likelihood with equicorrelated errors inside each batch."""
    if not 0.0 <= model.rho < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {model.rho}")
    x, _, t, y = data.arrays()
    labels, sizes = _batch_labels(data)
    return _param_loglik(model.mean(t, x), y, labels, sizes, model.sigma, model.rho)


# --------------------------------------------------------------------------
# fitting
# --------------------------------------------------------------------------

def _check_levels(data: AddtDataset):
    x = data.arrays()[0]
    if np.unique(x[data.arrays()[2] > 0]).size < 2:
        raise ValidationError("ADDT fit needs at least two stress levels with t > 0")


def fit_addt(template: AddtTemplate | str, data: AddtDataset,
             options: OptimizerOptions | None = None, n_jobs: int = 1) -> FitResult:
    """Fit the parametric or semiparametric ADDT model.

    Parameters
    ----------
    template : AddtTemplate or str
        Model choice; a bare string selects ``kind`` with defaults.
    data : AddtDataset
        Records on the modeling scale, stress already transformed.
    options : OptimizerOptions, optional
        Optimizer settings (parametric) and the seed for the bootstrap.
    n_jobs : int
        Workers for bootstrap replicates.
    """
    if isinstance(template, str):
        template = AddtTemplate(kind=template)
    opts = options or OptimizerOptions()
    _check_levels(data)
    if template.kind == "parametric":
        return _fit_parametric(data, opts)
    fit = _fit_semiparametric(template, data)
    fit.seed = opts.seed
    if template.bootstrap > 0:
        reps = addt_bootstrap(template, data, template.bootstrap, opts.seed, n_jobs)
        ok = np.all(np.isfinite(reps), axis=1)
        if ok.sum() >= 2:
            fit.covariance = np.cov(reps[ok].T)
        fit.extra["bootstrap"] = {"replicates": int(template.bootstrap), "usable": int(ok.sum())}
    return fit


def _parametric_start(x, t, y, xbar):
    best = None
    for b2 in np.linspace(0.0, 3.0, 61):
        z = np.exp(b2 * (x - xbar)) * np.sqrt(t)
        A = np.c_[np.ones_like(z), z]
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        rss = float(np.sum((y - A @ coef) ** 2))
        if best is None or rss < best[0]:
            best = (rss, coef, b2)
    rss, (b0, c), b2 = best
    sigma = np.sqrt(max(rss / y.size, 1e-12))
    return np.array([b0, c, b2, np.log(sigma), special.logit(0.2)])


def _fit_parametric(data: AddtDataset, opts: OptimizerOptions) -> FitResult:
    x, _, t, y = data.arrays()
    labels, sizes = _batch_labels(data)
    xbar = float(np.mean(x))

    def loglik_u(u):
        b0, c, b2, ls, lr = u
        mean = b0 + c * np.exp(b2 * (x - xbar)) * np.sqrt(t)
        return _param_loglik(mean, y, labels, sizes, np.exp(ls), special.expit(lr))

    def to_nat(u):
        b0, c, b2, ls, lr = u
        return np.array([b0, c * np.exp(-b2 * xbar), b2, np.exp(ls), special.expit(lr)])

    u0 = _parametric_start(x, t, y, xbar)
    res = maximize(loglik_u, u0, opts)
    u = res.x
    cov, _ = _delta_covariance(loglik_u, u, to_nat)
    nat = to_nat(u)
    names = ("beta0", "beta1", "beta2", "sigma", "rho")
    converged = res.converged and bool(np.all(np.isfinite(cov)))
    return FitResult(
        estimates=dict(zip(names, (float(v) for v in nat))), covariance=cov,
        loglik=res.value, aic=2 * len(names) - 2 * res.value, converged=converged,
        iterations=res.iterations, seed=opts.seed, model="addt-parametric",
        extra={"x_bar": xbar, "grad_norm": res.grad_norm,
               "restarts": [[r, v, ok] for r, v, ok in res.history]},
    )


def _knots_for(eta, n_knots):
    u = np.unique(eta)
    upper = float(u[-1])
    qs = np.quantile(u[u > 0], np.arange(1, n_knots + 1) / (n_knots + 1))
    qs = np.unique(qs[(qs > 0) & (qs < upper)])
    return qs, upper


def _spline_fit(eta, y, n_knots, order):
    """Monotone least squares at fixed ``eta``; returns (rss, coefs, knots, upper)."""
    knots, upper = _knots_for(eta, n_knots)
    basis = ISplineBasis(knots, upper, order)
    A = np.c_[np.ones(eta.size), -basis(eta)]
    lb = np.r_[-np.inf, np.zeros(basis.size)]
    sol = optimize.lsq_linear(A, y, bounds=(lb, np.full(A.shape[1], np.inf)), method="bvls",
                              tol=1e-12)
    coef = sol.x.copy()
    coef[1:] = np.maximum(coef[1:], 0.0)
    rss = float(np.sum((y - A @ coef) ** 2))
    return rss, coef, knots, upper


def _fit_semiparametric(template: AddtTemplate, data: AddtDataset) -> FitResult:
    x, _, t, y = data.arrays()
    x_max = float(np.max(x))
    s = x_max - x

    def eta_of(beta):
        return t / np.exp(beta * s)

    if np.unique(eta_of(template.beta_fixed or 0.0)).size < 4:
        raise InsufficientSupportError("semiparametric ADDT fit needs at least 4 distinct transformed times")

    def profile(beta):
        return _spline_fit(eta_of(beta), y, template.n_knots, template.order)[0]

    history = []
    if template.beta_fixed is not None:
        beta, converged = float(template.beta_fixed), True
    else:
        hi = template.beta_upper or 30.0 / max(float(np.max(s)), 1e-12)
        grid = np.linspace(0.0, hi, 121)
        vals = np.array([profile(b) for b in grid])
        k = int(np.argmin(vals))
        lo_b, hi_b = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
        # coordinate search on beta, refitting the spline at every step, until the
        # profiled RSS stops moving
        prev = vals[k]
        beta = grid[k]
        converged = False
        for _ in range(50):
            res = optimize.minimize_scalar(profile, bounds=(lo_b, hi_b), method="bounded",
                                           options={"xatol": 1e-10 * max(1.0, hi)})
            cur = float(res.fun)
            if cur < prev:
                beta = float(res.x)
            history.append(min(cur, prev))
            if abs(prev - cur) <= 1e-8 * max(prev, 1e-300) or cur >= prev:
                converged = True
                break
            prev = cur
            w = 0.5 * (hi_b - lo_b)
            lo_b, hi_b = max(beta - w, 0.0), min(beta + w, hi)
        if beta <= 0.0 or beta >= hi:
            logger.warning("acceleration rate at its search bound (%g)", beta)
            converged = False
    eta = eta_of(beta)
    if np.unique(eta).size < 4:
        raise InsufficientSupportError("semiparametric ADDT fit needs at least 4 distinct transformed times")
    rss, coef, knots, upper = _spline_fit(eta, y, template.n_knots, template.order)
    n = y.size
    sigma = np.sqrt(rss / n)
    ll = -0.5 * n * (_LOG2PI + 2 * np.log(sigma) + 1) if sigma > 0 else np.inf
    k = coef.size + 2
    return FitResult(
        estimates={"beta": float(beta), "sigma": float(sigma)},
        covariance=np.full((2, 2), np.nan), loglik=float(ll), aic=float(2 * k - 2 * ll),
        converged=bool(converged), iterations=len(history), seed=0, model="addt-semiparametric",
        extra={"knots": knots.tolist(), "spline_coefs": coef.tolist(), "x_max": x_max,
               "upper": upper, "order": template.order, "rss": rss, "rss_history": history},
    )


def _resample(data: AddtDataset, rng) -> AddtDataset:
    groups = data.batches()
    pick = rng.integers(0, len(groups), len(groups))
    recs = []
    for j, g in enumerate(pick):
        for i in groups[g]:
            r = data.records[i]
            recs.append(AddtRecord(r.condition, r.raw_condition, r.time, f"{r.batch_id}#{j}", r.response))
    return AddtDataset(tuple(recs))


def _boot_one(template, data, seed, b):
    rng = substream(seed, 0xAD, b)
    tpl = AddtTemplate(kind="semiparametric", n_knots=template.n_knots, order=template.order,
                       beta_fixed=template.beta_fixed, beta_upper=template.beta_upper)
    try:
        f = _fit_semiparametric(tpl, _resample(data, rng))
    except (ValueError, ArithmeticError):
        return [np.nan, np.nan]
    return [f.estimates["beta"], f.estimates["sigma"]]


def addt_bootstrap(template: AddtTemplate, data: AddtDataset, B: int, seed: int = 0,
                   n_jobs: int = 1) -> np.ndarray:
    """Batch-resampling bootstrap of ``(beta, sigma)``; ``B x 2`` array.

    Replicate ``b`` draws from its own substream, so the result does not
    depend on ``n_jobs``.
    """
    if n_jobs > 1:
        from joblib import Parallel, delayed
        out = Parallel(n_jobs=n_jobs)(delayed(_boot_one)(template, data, seed, b) for b in range(B))
    else:
        out = [_boot_one(template, data, seed, b) for b in range(B)]
    return np.asarray(out, float).reshape(B, 2)


def model_from_fit(fit: FitResult):
    """Rebuild the mean model behind an ADDT ``FitResult``."""
    e = fit.estimates
    if fit.model == "addt-parametric":
        return AddtParametricModel(e["beta0"], e["beta1"], e["beta2"], e["sigma"], min(e["rho"], 1 - 1e-12))
    if fit.model == "addt-semiparametric":
        x = fit.extra
        return AddtSemiparametricModel(e["beta"], tuple(x["knots"]), tuple(x["spline_coefs"]),
                                       x["x_max"], e["sigma"], x["upper"], x.get("order", 3))
    raise ValueError(f"not an ADDT fit: {fit.model!r}")


# --------------------------------------------------------------------------
# failure-time distribution
# --------------------------------------------------------------------------

def _model(fit_or_model):
    return model_from_fit(fit_or_model) if isinstance(fit_or_model, FitResult) else fit_or_model


def _level(threshold) -> float:
    if isinstance(threshold, FailureThreshold):
        if threshold.direction != "decreasing":
            raise ValueError("ADDT failure model expects a decreasing threshold")
        return float(threshold.value)
    return float(threshold)


def addt_failure_cdf(fit, threshold, x: float, times) -> CdfCurve:
    """``F(t) = Phi((D0 - D(t, x)) / sigma)`` at stress ``x``."""
    m = _model(fit)
    d0 = _level(threshold)
    times = np.asarray(times, float)
    F = special.ndtr((d0 - m.mean(times, np.full_like(times, x))) / m.sigma)
    return CdfCurve(times, F, extra={"x": float(x), "d0": d0})


def addt_quantile(fit, threshold, x: float, q: float) -> float:
    """Failure-time quantile by bisection on ``log t``."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {q}")
    m = _model(fit)
    d0 = _level(threshold)

    def F(t):
        return float(special.ndtr((d0 - m.mean(np.array([t]), np.array([x]))[0]) / m.sigma))

    if F(0.0) >= q:
        return 0.0
    hi = 1.0
    while F(hi) < q:
        hi *= 10.0
        if hi > 1e300:
            raise NoCrossingError(f"F stays below {q} at stress {x}")
    lo = hi / 10.0
    while lo > 1e-300 and F(lo) >= q:
        lo /= 10.0
    a, b = np.log(lo), np.log(hi)
    while b - a > 1e-12:
        mid = 0.5 * (a + b)
        if F(np.exp(mid)) < q:
            a = mid
        else:
            b = mid
        if abs(F(np.exp(b)) - q) < 1e-10:
            break
    return float(np.exp(b))


# --------------------------------------------------------------------------
# thermal index
# --------------------------------------------------------------------------

@dataclass
class ThermalIndexResult:
    ti_celsius: float
    target_hours: float
    xd: float
    mtf_curve: tuple  # (temps_c, hours)
    method: str = ""
    d0: float = float("nan")

    def to_json(self) -> str:
        return json.dumps({"ti_c": self.ti_celsius, "td_hours": self.target_hours, "xd": self.xd,
                           "method": self.method, "d0": self.d0}, indent=2)

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["temp_c", "mtf_hours"])
        for tc, h in zip(*self.mtf_curve):
            w.writerow([repr(float(tc)), repr(float(h))])
        return buf.getvalue()


def mean_time_to_failure(fit, d0: float, temp_c):
    """``m`` at Celsius temperatures: time for the mean path to reach ``d0``."""
    m = _model(fit)
    x = arrhenius_transform(np.asarray(temp_c, float), "negative")
    return np.asarray(m.time_to_level(d0, x), float)


def thermal_index(fit, threshold=None, target_hours: float = 1e5,
                  temp_range=(-50.0, 400.0), curve_temps=None) -> ThermalIndexResult:
    """Temperature at which the mean path reaches ``threshold`` after ``target_hours``.

    Parameters
    ----------
    fit : FitResult, ADDT model, or callable
        A callable is taken as ``m(x_d)`` directly on the ``1/(T + 273.16)``
        scale; otherwise ``m`` is derived from the fitted mean path.
    threshold : float or FailureThreshold
        Failure level; ignored for a callable ``fit``.
    target_hours : float
        Target life ``t_d``.
    temp_range : (float, float)
        Admissible temperatures in Celsius.
    """
    if not target_hours > 0:
        raise ValueError("target_hours must be positive")
    lo_c, hi_c = temp_range
    x_lo, x_hi = 1.0 / (hi_c + TI_OFFSET), 1.0 / (lo_c + TI_OFFSET)
    if callable(fit) and not isinstance(fit, FitResult):
        m_of_x = fit
        method, d0 = "function", float("nan")
    else:
        d0 = _level(threshold)
        model = _model(fit)
        method = "parametric" if isinstance(model, AddtParametricModel) else "semiparametric"

        def m_of_x(xd):
            return mean_time_to_failure(model, d0, 1.0 / np.asarray(xd, float) - TI_OFFSET)

    def h(xd):
        with np.errstate(divide="ignore"):
            return float(np.log(m_of_x(xd)) - np.log(target_hours))

    a, b = h(x_lo), h(x_hi)
    if not (np.isfinite(a) and np.isfinite(b)) or a * b > 0:
        ends = np.exp(np.array([a, b]) + np.log(target_hours))
        raise ExtrapolationError(
            f"target {target_hours:g} h outside attainable range [{np.nanmin(ends):.6g}, {np.nanmax(ends):.6g}] h "
            f"over {lo_c:g}..{hi_c:g} C", (np.nanmin(ends), np.nanmax(ends)))
    xd = optimize.brentq(h, x_lo, x_hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    if curve_temps is None:
        curve_temps = np.arange(np.ceil(max(lo_c, 0.0)), min(hi_c, 300.0) + 1e-9, 5.0)
    curve_temps = np.asarray(curve_temps, float)
    hours = np.array([float(m_of_x(1.0 / (tc + TI_OFFSET))) for tc in curve_temps])
    return ThermalIndexResult(float(1.0 / xd - TI_OFFSET), float(target_hours), float(xd),
                              (curve_temps, hours), method, d0)


# --------------------------------------------------------------------------
# simulation
# --------------------------------------------------------------------------

def simulate_addt(model: AddtParametricModel, temps_c, times, reps: int, seed: int = 0,
                  baseline: int = 0) -> AddtDataset:
    """Draw an ADDT dataset; each (temperature, time) cell is one batch.

    ``baseline`` extra records at ``t = 0`` form their own batch, tagged
    with the lowest temperature.
    """
    rng = substream(seed, 0xAD, 0xD1)
    recs = []
    sd_b = model.sigma * np.sqrt(model.rho)
    sd_e = model.sigma * np.sqrt(1 - model.rho)
    cells = [(min(temps_c), 0.0, baseline)] if baseline else []
    cells += [(tc, t, reps) for tc in temps_c for t in times]
    for k, (tc, t, n) in enumerate(cells):
        x = arrhenius_transform(tc, "negative")
        mu = float(model.mean(t, x))
        shared = sd_b * rng.standard_normal()
        for e in sd_e * rng.standard_normal(n):
            recs.append(AddtRecord(x, float(tc), float(t), f"b{k}", mu + shared + e))
    return AddtDataset(tuple(recs))
