"""Mixed-effects general path models fitted by maximum likelihood.

Each unit's random-effect integral is evaluated by adaptive Gauss-Hermite
quadrature: the tensor grid is recentred at the unit's conditional mode and
scaled by the Gauss-Newton curvature there. All units are processed at
once on padded ``(n_units, max_obs)`` arrays.
"""
from __future__ import annotations

import functools
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import optimize, special, stats

from .data import FailureThreshold, RmdtDataset, UnitSeries, arrhenius_transform
from .optim import OptimizerOptions, fd_hessian, maximize
from .paths import device_b_value, loglogistic_value, paris_value
from .results import CdfCurve, FitResult, substream

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2 * math.pi)


class QuadratureError(RuntimeError):
    """Conditional-mode search failed for a unit."""

    def __init__(self, unit_id, reason="mode search did not converge"):
        super().__init__(f"unit {unit_id}: {reason}")
        self.unit_id = unit_id


# --------------------------------------------------------------------------
# path families on the fitting scale
# --------------------------------------------------------------------------

def _linear(t, p, x, x0):
    return p["intercept"] + p["slope"] * t


def _linear_lograte(t, p, x, x0):
    return p["intercept"] + np.exp(p["log_slope"]) * t


def _loglogistic(t, p, x, x0):
    return loglogistic_value(t, p["asymptote"], np.exp(p["log_scale"]), np.exp(p["log_shape"]))


def _device_b(t, p, x, x0):
    return device_b_value(t, p["beta1"], p["beta2"], p["activation"], x0, x)


def _paris(t, p, x, x0):
    stress = 1.0 if x is None else x
    return paris_value(t, np.exp(p["log_theta1"]), p["theta2"], np.exp(p["log_initial"]), stress)


FAMILIES = {
    "linear": (("intercept", "slope"), _linear),
    "linear_lograte": (("intercept", "log_slope"), _linear_lograte),
    "loglogistic": (("asymptote", "log_scale", "log_shape"), _loglogistic),
    "device_b": (("beta1", "beta2", "activation"), _device_b),
    "paris": (("log_theta1", "theta2", "log_initial"), _paris),
}


@dataclass(frozen=True)
class Accelerator:
    """Static covariate entering the path through an Arrhenius transform.

    ``baseline_temp`` (Celsius) sets the reference level ``x0`` used by the
    ``device_b`` family.
    """

    covariate: str
    sign: str = "positive"
    baseline_temp: float | None = None

    def transform(self, temp):
        return arrhenius_transform(temp, self.sign)

    @functools.cached_property
    def baseline_x(self):
        return None if self.baseline_temp is None else self.transform(self.baseline_temp)


@dataclass(frozen=True)
class GpmModelSpec:
    """Which family parameters are unit-level random effects.

    Random effects are multivariate normal with unrestricted covariance.
    Family parameters not listed in ``random_params`` are fixed effects.
    """

    family: str
    random_params: tuple[str, ...] = ()
    accelerator: Accelerator | None = None
    quad_order: int = 15

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; known: {sorted(FAMILIES)}")
        rp = tuple(self.random_params)
        object.__setattr__(self, "random_params", rp)
        unknown = set(rp) - set(self.family_params)
        if unknown:
            raise ValueError(f"{sorted(unknown)} are not parameters of {self.family}")
        if len(set(rp)) != len(rp):
            raise ValueError("duplicate random parameter")
        if self.quad_order < 1:
            raise ValueError("quad_order must be positive")
        if self.family == "device_b" and self.accelerator is not None and self.accelerator.baseline_temp is None:
            raise ValueError("device_b needs accelerator.baseline_temp")

    @property
    def family_params(self) -> tuple[str, ...]:
        return FAMILIES[self.family][0]

    @property
    def fixed_params(self) -> tuple[str, ...]:
        return tuple(p for p in self.family_params if p not in self.random_params)

    @property
    def q(self) -> int:
        return len(self.random_params)

    @property
    def param_names(self) -> list[str]:
        rp = self.random_params
        names = list(self.fixed_params)
        names += [f"mu_{r}" for r in rp]
        names += [f"sd_{r}" for r in rp]
        names += [f"corr_{a}_{b}" for a, b in itertools.combinations(rp, 2)]
        names.append("sigma_eps")
        return names

    def to_dict(self) -> dict:
        acc = None
        if self.accelerator is not None:
            acc = {"covariate": self.accelerator.covariate, "sign": self.accelerator.sign,
                   "baseline_temp": self.accelerator.baseline_temp}
        return {"family": self.family, "random_params": list(self.random_params),
                "accelerator": acc, "quad_order": self.quad_order}

    @classmethod
    def from_dict(cls, d: dict) -> "GpmModelSpec":
        acc = d.get("accelerator")
        return cls(d["family"], tuple(d.get("random_params", ())),
                   Accelerator(**acc) if acc else None, d.get("quad_order", 15))

    # -- internal helpers -------------------------------------------------

    def mean(self, t, p, x):
        x0 = None
        if self.accelerator is not None:
            x0 = self.accelerator.baseline_x
        if self.family == "device_b" and x0 is None:
            x0 = 0.0
            x = 0.0
        return FAMILIES[self.family][1](t, p, x, x0)

    def unit_x(self, data: RmdtDataset):
        if self.accelerator is None:
            return None
        return self.accelerator.transform(data.covariate(self.accelerator.covariate))


# --------------------------------------------------------------------------
# parameter transforms
# --------------------------------------------------------------------------

@dataclass
class _Params:
    fixed: dict
    mu: np.ndarray
    chol: np.ndarray  # lower Cholesky factor of the random-effect covariance
    sigma: float

    @property
    def cov(self):
        return self.chol @ self.chol.T


def _unpack(spec: GpmModelSpec, u: np.ndarray) -> _Params:
    nf, q = len(spec.fixed_params), spec.q
    k = 0
    fixed = dict(zip(spec.fixed_params, u[:nf]))
    k = nf
    mu = np.asarray(u[k:k + q], float)
    k += q
    L = np.zeros((q, q))
    L[np.diag_indices(q)] = np.exp(u[k:k + q])
    k += q
    low = np.tril_indices(q, -1)
    L[low] = u[k:k + len(low[0])]
    k += len(low[0])
    return _Params(fixed, mu, L, float(np.exp(u[k])))


def _pack(spec: GpmModelSpec, p: _Params) -> np.ndarray:
    q = spec.q
    L = p.chol
    parts = [np.array([p.fixed[n] for n in spec.fixed_params], float), np.asarray(p.mu, float),
             np.log(np.diag(L)) if q else np.zeros(0), L[np.tril_indices(q, -1)] if q else np.zeros(0),
             np.array([math.log(p.sigma)])]
    return np.concatenate(parts)


def _natural(spec: GpmModelSpec, p: _Params) -> dict:
    out = {n: float(p.fixed[n]) for n in spec.fixed_params}
    rp = spec.random_params
    S = p.cov
    sd = np.sqrt(np.diag(S)) if spec.q else np.zeros(0)
    for r, m in zip(rp, p.mu):
        out[f"mu_{r}"] = float(m)
    for r, s in zip(rp, sd):
        out[f"sd_{r}"] = float(s)
    for (i, a), (j, b) in itertools.combinations(enumerate(rp), 2):
        out[f"corr_{a}_{b}"] = float(S[i, j] / (sd[i] * sd[j]))
    out["sigma_eps"] = p.sigma
    return out


def params_from_natural(spec: GpmModelSpec, theta: dict) -> _Params:
    missing = set(spec.param_names) - set(theta)
    if missing:
        raise ValueError(f"missing parameter(s): {sorted(missing)}")
    rp = spec.random_params
    q = spec.q
    sd = np.array([theta[f"sd_{r}"] for r in rp], float)
    if np.any(sd <= 0):
        raise ValueError("random-effect standard deviations must be positive")
    R = np.eye(q)
    for (i, a), (j, b) in itertools.combinations(enumerate(rp), 2):
        R[i, j] = R[j, i] = theta[f"corr_{a}_{b}"]
    S = R * np.outer(sd, sd)
    try:
        L = np.linalg.cholesky(S) if q else np.zeros((0, 0))
    except np.linalg.LinAlgError:
        raise ValueError("random-effect covariance is not positive definite") from None
    if theta["sigma_eps"] <= 0:
        raise ValueError("sigma_eps must be positive")
    return _Params({n: float(theta[n]) for n in spec.fixed_params},
                   np.array([theta[f"mu_{r}"] for r in rp], float), L, float(theta["sigma_eps"]))


# --------------------------------------------------------------------------
# marginal likelihood
# --------------------------------------------------------------------------

class _Problem:
    """Padded arrays and quadrature grid for one (spec, dataset) pair."""

    def __init__(self, spec: GpmModelSpec, data: RmdtDataset, quad_order: int | None = None):
        self.spec = spec
        self.data = data
        self.ids = data.unit_ids
        self.T, self.Y, self.M = data.padded()
        self.m = self.M.sum(axis=1)
        x = spec.unit_x(data)
        self.x = None if x is None else np.asarray(x, float)[:, None]
        self._b_cache = None
        Q = quad_order or spec.quad_order
        z1, w1 = hermegauss(Q)
        q = spec.q
        if q:
            grid = np.array(list(itertools.product(range(Q), repeat=q)))
            self.z = z1[grid]
            self.logw = np.log(w1)[grid].sum(axis=1) + 0.5 * (self.z ** 2).sum(axis=1)

    def path(self, p: _Params, b, T, x):
        """Path values with random effects ``b`` (..., q) broadcast against T."""
        vals = dict(p.fixed)
        for k, r in enumerate(self.spec.random_params):
            vals[r] = b[..., k][..., None]
        return self.spec.mean(T, vals, x)

    def fixed_loglik(self, p: _Params) -> np.ndarray:
        D = self.path(p, np.zeros((len(self.ids), 0)), self.T, self.x)
        r = np.where(self.M, self.Y - D, 0.0)
        return -0.5 * (r ** 2).sum(axis=1) / p.sigma ** 2 - self.m * (math.log(p.sigma) + 0.5 * LOG_2PI)

    def modes(self, p: _Params, max_iter=100, tol=1e-10):
        """Conditional modes and Gauss-Newton curvature for every unit."""
        n, q = len(self.ids), self.spec.q
        P = np.linalg.inv(p.cov)
        s2 = p.sigma ** 2
        b = np.tile(p.mu, (n, 1))

        def objective(bb):
            D = self.path(p, bb, self.T, self.x)
            r = np.where(self.M, self.Y - D, 0.0)
            d = bb - p.mu
            return 0.5 * (r ** 2).sum(axis=1) / s2 + 0.5 * np.einsum("ni,ij,nj->n", d, P, d), r

        def jacobian(bb):
            J = np.empty(self.T.shape + (q,))
            for k in range(q):
                h = 1e-6 * np.maximum(1.0, np.abs(bb[:, k]))
                e = np.zeros_like(bb)
                e[:, k] = h
                Dp = self.path(p, bb + e, self.T, self.x)
                Dm = self.path(p, bb - e, self.T, self.x)
                J[..., k] = np.where(self.M, (Dp - Dm) / (2 * h[:, None]), 0.0)
            return J

        with np.errstate(all="ignore"):
            f, r = objective(b)
            # warm start from the previous call's modes where that is better
            if self._b_cache is not None:
                fc, rc = objective(self._b_cache)
                use = np.isfinite(fc) & ~(fc > f)
                b[use], f[use], r[use] = self._b_cache[use], fc[use], rc[use]
            done = np.zeros(n, dtype=bool)
            for _ in range(max_iter):
                J = jacobian(b)
                A = np.einsum("nmi,nmj->nij", J, J) / s2 + P
                g = np.einsum("nmi,nm->ni", J, r) / s2 - (b - p.mu) @ P
                step = np.linalg.solve(A, g[..., None])[..., 0]
                # predicted decrease below roundoff: already at the mode
                done |= np.einsum("ni,ni->n", g, step) < 1e-12 * (1.0 + np.abs(f))
                if done.all():
                    break
                step[done] = 0.0
                lam = np.ones(n)
                accepted = np.zeros(n, dtype=bool)
                for _ls in range(30):
                    trial = b + lam[:, None] * step
                    ft, rt = objective(trial)
                    ok = np.isfinite(ft) & (ft <= f + 1e-12 * np.abs(f))
                    new = ok & ~accepted
                    b[new] = trial[new]
                    f[new] = ft[new]
                    r[new] = rt[new]
                    accepted |= ok
                    if accepted.all():
                        break
                    lam = np.where(accepted, lam, lam * 0.5)
                small = np.max(np.abs(lam[:, None] * step) / (1.0 + np.abs(b)), axis=1) < tol
                done |= small | ~accepted
                if done.all():
                    break
            J = jacobian(b)
            A = np.einsum("nmi,nmj->nij", J, J) / s2 + P
        bad = ~np.isfinite(f) | ~np.all(np.isfinite(A), axis=(1, 2)) | ~np.all(np.isfinite(b), axis=1)
        if bad.any():
            raise QuadratureError(self.ids[int(np.argmax(bad))])
        self._b_cache = b.copy()
        return b, A

    def unit_logliks(self, p: _Params) -> np.ndarray:
        if self.spec.q == 0:
            return self.fixed_loglik(p)
        if not np.all(np.isfinite(p.chol)) or np.any(np.diag(p.chol) <= 0):
            raise ValueError("random-effect covariance is not positive definite")
        b_hat, A = self.modes(p)
        try:
            C = np.linalg.cholesky(np.linalg.inv(A))
        except np.linalg.LinAlgError:
            bad = int(np.argmin(np.linalg.eigvalsh(A)[:, 0]))
            raise QuadratureError(self.ids[bad], "non-positive curvature at the mode") from None
        nodes = b_hat[:, None, :] + np.einsum("nij,kj->nki", C, self.z)
        with np.errstate(all="ignore"):
            D = self.path(p, nodes, self.T[:, None, :], None if self.x is None else self.x[:, None, :])
            r = np.where(self.M[:, None, :], self.Y[:, None, :] - D, 0.0)
            ll_obs = -0.5 * (r ** 2).sum(axis=2) / p.sigma ** 2
        ll_obs = ll_obs - self.m[:, None] * (math.log(p.sigma) + 0.5 * LOG_2PI)
        Linv = np.linalg.inv(p.chol)
        d = (nodes - p.mu) @ Linv.T
        logdet_S = 2 * np.log(np.diag(p.chol)).sum()
        ll_prior = -0.5 * (d ** 2).sum(axis=2) - 0.5 * (self.spec.q * LOG_2PI + logdet_S)
        logdet_C = np.log(np.abs(np.diagonal(C, axis1=1, axis2=2))).sum(axis=1)
        terms = self.logw[None, :] + ll_obs + ll_prior
        terms = np.where(np.isfinite(terms), terms, -np.inf)
        out = logdet_C + special.logsumexp(terms, axis=1)
        return out

    def loglik_u(self, u) -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            return float(self.unit_logliks(_unpack(self.spec, np.asarray(u, float))).sum())


def marginal_log_likelihood(spec: GpmModelSpec, theta: dict, data: RmdtDataset,
                            quad_order: int | None = None) -> float:
    """Log marginal likelihood at natural-scale parameters ``theta``.

    ``theta`` is keyed by ``spec.param_names`` (fixed effects, ``mu_*``,
    ``sd_*``, ``corr_*``, ``sigma_eps``).
    """
    p = params_from_natural(spec, theta)
    return float(_Problem(spec, data, quad_order).unit_logliks(p).sum())


# --------------------------------------------------------------------------
# fitting
# --------------------------------------------------------------------------

def _family_guess(spec: GpmModelSpec, data: RmdtDataset) -> dict:
    t = np.concatenate([u.times for u in data.units])
    y = np.concatenate([u.measurements for u in data.units])
    fam = spec.family
    if fam in ("linear", "linear_lograte"):
        slope, intercept = np.polyfit(t, y, 1) if np.ptp(t) > 0 else (0.0, float(np.mean(y)))
        if fam == "linear":
            return {"intercept": intercept, "slope": slope}
        return {"intercept": intercept, "log_slope": math.log(max(slope, 1e-8))}
    tpos = t[t > 0]
    tmed = float(np.median(tpos)) if tpos.size else 1.0
    if fam == "loglogistic":
        ext = y[np.argmax(np.abs(y))]
        return {"asymptote": 1.2 * ext, "log_scale": math.log(tmed), "log_shape": 0.0}
    if fam == "device_b":
        return {"beta1": math.log(1.0 / tmed), "beta2": math.log(1.5 * np.max(np.abs(y)) + 1e-8),
                "activation": 0.5}
    if fam == "paris":
        ypos = y[y > 0]
        lo, hi = float(np.min(ypos)), float(np.max(ypos))
        rate = max(math.log(hi / lo), 1e-3) / (math.pi * max(float(np.max(t)), 1e-8))
        return {"log_theta1": math.log(rate), "theta2": 2.0, "log_initial": math.log(lo)}
    raise ValueError(fam)


def _pooled_fit(spec: GpmModelSpec, data: RmdtDataset, guess: dict):
    names = spec.family_params
    prob = _Problem(GpmModelSpec(spec.family, (), spec.accelerator, spec.quad_order), data)

    def resid(v):
        p = _Params(dict(zip(names, v)), np.zeros(0), np.zeros((0, 0)), 1.0)
        D = prob.path(p, np.zeros((len(prob.ids), 0)), prob.T, prob.x)
        r = np.where(prob.M, prob.Y - D, 0.0)[prob.M]
        return np.where(np.isfinite(r), r, 1e10)

    v0 = np.array([guess[n] for n in names], float)
    sol = optimize.least_squares(resid, v0, method="lm" if len(resid(v0)) >= len(v0) else "trf",
                                 xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=20000)
    rss = float(np.sum(sol.fun ** 2))
    return dict(zip(names, sol.x)), rss, sol


def initial_values(spec: GpmModelSpec, data: RmdtDataset) -> dict:
    """Two-stage starting values on the natural scale.

    A pooled least-squares fit supplies the fixed effects; per-unit
    penalized fits of the random parameters give their mean and covariance.
    """
    pooled, rss, _ = _pooled_fit(spec, data, _family_guess(spec, data))
    sigma0 = math.sqrt(max(rss / data.n_obs, 1e-12))
    theta = {n: pooled[n] for n in spec.fixed_params}
    if spec.q:
        rp = spec.random_params
        mu = np.array([pooled[r] for r in rp])
        wide = _Params(dict(theta), mu, np.diag(10.0 * (np.abs(mu) + 1.0)), sigma0)
        prob = _Problem(spec, data)
        try:
            b, A = prob.modes(wide)
            noise = np.linalg.inv(A).mean(axis=0)
        except QuadratureError:
            b = np.tile(mu, (len(data), 1))
            noise = np.zeros((spec.q, spec.q))
        mu = b.mean(axis=0)
        # between-unit spread net of per-unit estimation noise
        raw = np.atleast_2d(np.cov(b.T)) if len(data) > 1 else np.eye(spec.q)
        var = np.maximum(np.diag(raw) - np.diag(noise), 0.1 * np.diag(raw))
        sd = np.sqrt(var) + 1e-3 * (np.abs(mu) + 1e-3)
        for r, m, s in zip(rp, mu, sd):
            theta[f"mu_{r}"] = float(m)
            theta[f"sd_{r}"] = float(s)
        for (i, a), (j, c) in itertools.combinations(enumerate(rp), 2):
            rho = (raw[i, j] - noise[i, j]) / (sd[i] * sd[j])
            rho = float(np.nan_to_num(rho)) if abs(rho) < 1 else 0.0  # noise-dominated
            theta[f"corr_{a}_{c}"] = float(np.clip(rho, -0.9, 0.9))
        p = params_from_natural(spec, {**theta, "sigma_eps": sigma0})
        D = prob.path(p, b, prob.T, prob.x)
        r = np.where(prob.M, prob.Y - D, 0.0)
        sigma0 = math.sqrt(max(float((r ** 2).sum()) / data.n_obs, 1e-12))
    theta["sigma_eps"] = sigma0
    return theta


def _delta_covariance(fun_u, u, to_natural):
    """Covariance of natural parameters from the Hessian in ``u``."""
    H = fd_hessian(fun_u, u)
    try:
        cov_u = np.linalg.inv(-H)
    except np.linalg.LinAlgError:
        cov_u = np.linalg.pinv(-H)
    base = to_natural(u)
    J = np.empty((base.size, u.size))
    for k in range(u.size):
        h = 1e-6 * max(1.0, abs(u[k]))
        e = np.zeros_like(u)
        e[k] = h
        J[:, k] = (to_natural(u + e) - to_natural(u - e)) / (2 * h)
    cov = J @ cov_u @ J.T
    return 0.5 * (cov + cov.T), H


def fit_gpm(spec: GpmModelSpec, data: RmdtDataset, options: OptimizerOptions | None = None,
            start: dict | None = None) -> FitResult:
    """Maximum-likelihood fit of a mixed-effects general path model.

    Positive quantities are optimized on the log scale and the random-effect
    covariance through its Cholesky factor. With no random parameters the
    model is fixed-effects nonlinear regression and is solved by least
    squares with the error variance profiled out.
    """
    opts = options or OptimizerOptions()
    names = spec.param_names
    # without random effects sigma_eps is profiled out, so an exact fit is allowed
    need = len(spec.family_params) if spec.q == 0 else len(names)
    if data.n_obs < need:
        raise ValueError(f"{data.n_obs} observations for {need} free parameters")
    if spec.q == 0:
        return _fit_fixed(spec, data, opts, start)
    theta0 = dict(start) if start else initial_values(spec, data)
    prob = _Problem(spec, data)
    u0 = _pack(spec, params_from_natural(spec, theta0))
    # simplex search on the Laplace surface, polish on the full quadrature
    laplace = _Problem(spec, data, quad_order=1) if spec.quad_order > 1 else prob
    res = maximize(prob.loglik_u, u0, opts, explore=laplace.loglik_u)
    u = res.x
    to_nat = lambda z: np.array(list(_natural(spec, _unpack(spec, z)).values()))
    cov, H = _delta_covariance(prob.loglik_u, u, to_nat)
    est = _natural(spec, _unpack(spec, u))
    converged = res.converged and bool(np.all(np.isfinite(cov))) and bool(np.all(np.diag(cov) >= 0))
    k = len(names)
    return FitResult(
        estimates=est, covariance=cov, loglik=res.value, aic=2 * k - 2 * res.value,
        converged=converged, iterations=res.iterations, seed=opts.seed, model="gpm",
        extra={"spec": spec.to_dict(), "u": u.tolist(), "grad_norm": res.grad_norm,
               "restarts": [[r, v, ok] for r, v, ok in res.history]},
    )


def _fit_fixed(spec, data, opts, start):
    guess = dict(start) if start else _family_guess(spec, data)
    pooled, rss, sol = _pooled_fit(spec, data, guess)
    N = data.n_obs
    sigma = math.sqrt(rss / N)
    names = spec.param_names
    est = {n: float(pooled[n]) for n in spec.fixed_params}
    est["sigma_eps"] = sigma
    cov = np.zeros((len(names), len(names)))
    if sigma > 0:
        J = sol.jac
        try:
            cov[:-1, :-1] = sigma ** 2 * np.linalg.inv(J.T @ J)
        except np.linalg.LinAlgError:
            cov[:-1, :-1] = sigma ** 2 * np.linalg.pinv(J.T @ J)
        cov[-1, -1] = sigma ** 2 / (2 * N)
        loglik = -0.5 * N * (LOG_2PI + 2 * math.log(sigma) + 1.0)
    else:
        loglik = math.inf
    k = len(names)
    return FitResult(est, cov, loglik, 2 * k - 2 * loglik, bool(sol.success), int(sol.nfev), opts.seed,
                     model="gpm", extra={"spec": spec.to_dict(), "rss": rss})


# --------------------------------------------------------------------------
# failure-time distribution
# --------------------------------------------------------------------------

def failure_cdf_linear(alpha: float, mu: float, sigma: float, threshold, times) -> CdfCurve:
    """Closed-form CDF for ``D(t) = alpha + beta t`` with lognormal rate ``log beta ~ N(mu, sigma^2)``."""
    d0 = threshold.value if isinstance(threshold, FailureThreshold) else float(threshold)
    if d0 <= alpha:
        raise ValueError("threshold must exceed the initial level alpha")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    t = np.asarray(times, float)
    if np.any(t < 0):
        raise ValueError("times must be nonnegative")
    with np.errstate(divide="ignore"):
        z = (np.log(t) - (math.log(d0 - alpha) - mu)) / sigma
    return CdfCurve(t, stats.norm.cdf(z))


def _unit_x_for(spec: GpmModelSpec, covariate):
    if spec.accelerator is None:
        return None
    if covariate is None:
        raise ValueError(f"model has an accelerator; pass the {spec.accelerator.covariate} value")
    return float(spec.accelerator.transform(covariate))


def failure_cdf_mc(fit: FitResult, spec: GpmModelSpec, threshold: FailureThreshold, times,
                   draws: int = 100_000, seed: int = 0, covariate: float | None = None,
                   chunk: int = 50_000) -> CdfCurve:
    """Monte Carlo failure-time CDF ``Pr[D(t) crosses threshold]`` on a time grid.

    Random effects are drawn from the fitted normal distribution. With an
    accelerator, ``covariate`` is the raw stress level (e.g. use
    temperature in Celsius) at which to predict.
    """
    if draws < 10_000:
        raise ValueError("draws must be at least 1e4")
    p = params_from_natural(spec, fit.estimates)
    t = np.asarray(times, float)
    x = _unit_x_for(spec, covariate)
    s = threshold.sign
    rng = substream(seed, 0xCDF)
    hits = np.zeros(t.size)
    done = 0
    while done < draws:
        k = min(chunk, draws - done)
        b = p.mu + rng.standard_normal((k, spec.q)) @ p.chol.T if spec.q else np.zeros((k, 0))
        vals = dict(p.fixed)
        for j, r in enumerate(spec.random_params):
            vals[r] = b[:, j][:, None]
        with np.errstate(all="ignore"):
            D = spec.mean(t[None, :], vals, x)
        D = np.broadcast_to(D, (k, t.size))
        hits += np.count_nonzero(s * D >= s * threshold.value, axis=0)
        done += k
    return CdfCurve(t, hits / draws, extra={"draws": draws, "seed": seed})


def simulate_rmdt(spec: GpmModelSpec, truth: dict, design, seed: int = 0,
                  covariates: dict | None = None) -> RmdtDataset:
    """Simulate a dataset from the model at the design times.

    ``design`` is an :class:`RmdtDataset` (its times, ids and covariates are
    reused) or a sequence of time arrays, one per unit, with per-unit
    covariate values in ``covariates``.
    """
    rp = spec.random_params
    q = spec.q
    sd = np.array([truth[f"sd_{r}"] for r in rp], float)
    mu = np.array([truth[f"mu_{r}"] for r in rp], float)
    R = np.eye(q)
    for (i, a), (j, b) in itertools.combinations(enumerate(rp), 2):
        R[i, j] = R[j, i] = truth[f"corr_{a}_{b}"]
    S = R * np.outer(sd, sd)
    sigma = float(truth["sigma_eps"])
    if sigma < 0 or np.any(sd < 0):
        raise ValueError("standard deviations must be nonnegative")
    if isinstance(design, RmdtDataset):
        ids = design.unit_ids
        tlist = [u.times for u in design.units]
        covs = [dict(u.static_covariates) for u in design.units]
    else:
        tlist = [np.asarray(t, float) for t in design]
        ids = [f"U{i + 1:03d}" for i in range(len(tlist))]
        covariates = covariates or {}
        covs = [{k: float(v[i]) for k, v in covariates.items()} for i in range(len(tlist))]
    rng = substream(seed, 0x51)
    n = len(tlist)
    if q:
        ev, evec = np.linalg.eigh(S)
        if np.any(ev < -1e-12):
            raise ValueError("random-effect covariance is not positive semidefinite")
        A = evec * np.sqrt(np.clip(ev, 0, None))
        B = mu + rng.standard_normal((n, q)) @ A.T
    else:
        B = np.zeros((n, 0))
    fixed = {k: float(truth[k]) for k in spec.fixed_params}
    units = []
    for i in range(n):
        vals = dict(fixed)
        for j, r in enumerate(rp):
            vals[r] = B[i, j]
        x = None
        if spec.accelerator is not None:
            x = spec.accelerator.transform(covs[i][spec.accelerator.covariate])
        D = np.asarray(spec.mean(tlist[i], vals, x), float)
        y = D + sigma * rng.standard_normal(tlist[i].size)
        units.append(UnitSeries(ids[i], tlist[i], y, covs[i]))
    return RmdtDataset(tuple(units))


def _bootstrap_replicate(b, fit, spec, data, threshold, times, seed, draws, covariate, opts):
    sim = simulate_rmdt(spec, fit.estimates, data, seed=int(substream(seed, 0xB0, b).integers(2**63)))
    ropts = OptimizerOptions(restarts=1, maxiter=opts.maxiter, jitter=opts.jitter,
                             polish=opts.polish, fatol=opts.fatol, gtol=opts.gtol, seed=seed + b)
    try:
        refit = fit_gpm(spec, sim, ropts, start=fit.estimates)
    except (ValueError, QuadratureError, np.linalg.LinAlgError):
        return None
    if not refit.converged:
        return None
    return failure_cdf_mc(refit, spec, threshold, times, draws=draws,
                          seed=int(substream(seed, 0xB1, b).integers(2**63)), covariate=covariate).cdf


def bootstrap_ci(fit: FitResult, spec: GpmModelSpec, data: RmdtDataset, threshold: FailureThreshold,
                 times, B: int = 200, level: float = 0.90, seed: int = 0, draws: int = 20_000,
                 covariate: float | None = None, options: OptimizerOptions | None = None,
                 n_jobs: int = 1) -> CdfCurve:
    """Parametric-bootstrap percentile intervals for the failure-time CDF.

    Each replicate simulates a dataset at the observed design from the
    fitted model, refits it (warm-started at the original estimates) and
    evaluates the CDF. Non-converged replicates are dropped and counted.
    Bounds are widened to contain the point curve where needed.
    """
    if B < 200:
        raise ValueError("B must be at least 200")
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    opts = options or OptimizerOptions()
    t = np.asarray(times, float)
    args = (fit, spec, data, threshold, t, seed, draws, covariate, opts)
    if n_jobs == 1:
        reps = [_bootstrap_replicate(b, *args) for b in range(B)]
    else:
        from joblib import Parallel, delayed
        reps = Parallel(n_jobs=n_jobs)(delayed(_bootstrap_replicate)(b, *args) for b in range(B))
    kept = np.array([r for r in reps if r is not None])
    dropped = B - len(kept)
    point = failure_cdf_mc(fit, spec, threshold, t, draws=max(draws, 100_000), seed=seed,
                           covariate=covariate).cdf
    if len(kept) == 0:
        raise RuntimeError("every bootstrap replicate failed to converge")
    a = (1 - level) / 2
    lo = np.minimum(np.quantile(kept, a, axis=0), point)
    hi = np.maximum(np.quantile(kept, 1 - a, axis=0), point)
    extra = {"B": B, "dropped": dropped, "warning": dropped > 0.2 * B, "seed": seed}
    if extra["warning"]:
        logger.warning("%d of %d bootstrap replicates dropped", dropped, B)
    return CdfCurve(t, point, lo, hi, level, extra)
