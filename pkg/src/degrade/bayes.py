"""Bayesian hierarchical degradation models sampled by blocked adaptive Metropolis.

Two models are provided. The coating model is a reparameterized
log-logistic path with a multiplicative unit effect ``exp(w_i)``. The
fatigue model is a Paris-rule path with per-specimen ``(log theta1, theta2)``
drawn from a bivariate normal. ``NormalMeanSpec`` is a one-parameter model
with a conjugate posterior, handy for checking the sampler.

Every model splits its log posterior into a prior on the global
parameters plus one term per unit. Given the globals the unit terms are
independent, so all unit blocks are proposed and accepted in one
vectorized step.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special, stats

from .data import FailureThreshold, RmdtDataset
from .paths import coating_value, paris_crossing_time, paris_value
from .results import CdfCurve, substream

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2 * math.pi)
TARGET_ACCEPT = 0.23


class EmptyConditioningError(ValueError):
    """Every posterior draw puts the unit's failure before the conditioning time."""


# --------------------------------------------------------------------------
# parameter transforms: natural value <- unconstrained u
# --------------------------------------------------------------------------

_TO_NAT = {"id": lambda u: u, "log": np.exp, "neglog": lambda u: -np.exp(u), "atanh": np.tanh}
_TO_U = {"id": lambda v: v, "log": np.log, "neglog": lambda v: np.log(-v), "atanh": np.arctanh}


def _log_jac(kind, u):
    """log |d natural / d u|."""
    if kind == "id":
        return 0.0 * u
    if kind in ("log", "neglog"):
        return u
    return np.log1p(-np.tanh(u) ** 2)


def _in_support(kind, v):
    if kind == "log":
        return v > 0
    if kind == "neglog":
        return v < 0
    if kind == "atanh":
        return abs(v) < 1
    return np.isfinite(v)


def _normal_logpdf(x, mean, var):
    return -0.5 * (LOG_2PI + math.log(var)) - (x - mean) ** 2 / (2 * var)


def _inv_gamma_logpdf(x, a, b):
    return a * math.log(b) - special.gammaln(a) - (a + 1) * math.log(x) - b / x


# --------------------------------------------------------------------------
# model specifications
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NormalMeanSpec:
    """``y_k ~ N(theta, sigma^2)`` with known sigma and prior ``theta ~ N(m0, s0^2)``."""

    sigma: float = 1.0
    prior_mean: float = 0.0
    prior_sd: float = 10.0

    global_names = ("theta",)
    global_kinds = ("id",)
    unit_names = ()

    def bind(self, data) -> "_Bound":
        return _Bound(self, np.asarray(data, float).ravel())

    def analytic_posterior(self, data):
        y = np.asarray(data, float).ravel()
        prec = 1 / self.prior_sd ** 2 + y.size / self.sigma ** 2
        mean = (self.prior_mean / self.prior_sd ** 2 + y.sum() / self.sigma ** 2) / prec
        return mean, math.sqrt(1 / prec)

    def log_prior(self, g, ctx):
        # no units: the whole likelihood sits with the global block
        return _normal_logpdf(g[0], self.prior_mean, self.prior_sd ** 2) + \
            float(np.sum(stats.norm.logpdf(ctx, g[0], self.sigma)))

    def unit_terms(self, g, W, ctx):
        return np.zeros(0)

    def init(self, ctx, rng):
        s = self.sigma / math.sqrt(max(ctx.size, 1))
        return np.array([ctx.mean() + 3 * s * rng.standard_normal()]), np.zeros((0, 0))


@dataclass(frozen=True)
class CoatingModelSpec:
    """Log-logistic coating path ``alpha e^w / (1 + exp(-(log t - mu - x'beta)/gamma))``.

    ``covariates`` names static unit covariates, already transformed by
    the user. Priors: ``N(0, prior_var)`` on ``mu``, each ``beta``,
    ``log(-alpha)`` and ``log(gamma)``; ``IG(ig_shape, ig_scale)`` on the
    standard deviations ``sigma_eps`` and ``sigma_w``.
    """

    covariates: tuple[str, ...] = ()
    prior_var: float = 200.0
    ig_shape: float = 0.001
    ig_scale: float = 0.001

    unit_names = ("w",)

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.prior_var <= 0 or self.ig_shape <= 0 or self.ig_scale <= 0:
            raise ValueError("prior hyperparameters must be positive")

    @property
    def global_names(self):
        return ("alpha", "mu", "gamma") + tuple(f"beta_{c}" for c in self.covariates) + \
            ("sigma_eps", "sigma_w")

    @property
    def global_kinds(self):
        return ("neglog", "id", "log") + ("id",) * len(self.covariates) + ("log", "log")

    def bind(self, data: RmdtDataset) -> "_Bound":
        T, Y, M = data.padded()
        X = np.column_stack([data.covariate(c) for c in self.covariates]) if self.covariates \
            else np.zeros((len(data), 0))
        return _Bound(self, (T, Y, M, X), data.unit_ids)

    def _unpack(self, g):
        p = len(self.covariates)
        return g[0], g[1], g[2], g[3:3 + p], g[3 + p], g[4 + p]

    def log_prior(self, g, ctx):
        alpha, mu, gamma, beta, s_eps, s_w = self._unpack(g)
        if not (alpha < 0 and gamma > 0 and s_eps > 0 and s_w > 0):
            return -np.inf
        v = self.prior_var
        lp = _normal_logpdf(mu, 0, v) + float(np.sum(_normal_logpdf(np.asarray(beta), 0, v)))
        # priors on log(-alpha), log(gamma): change of variables to the natural scale
        lp += _normal_logpdf(math.log(-alpha), 0, v) - math.log(-alpha)
        lp += _normal_logpdf(math.log(gamma), 0, v) - math.log(gamma)
        lp += _inv_gamma_logpdf(s_eps, self.ig_shape, self.ig_scale)
        lp += _inv_gamma_logpdf(s_w, self.ig_shape, self.ig_scale)
        return lp

    def location(self, g, X):
        _, mu, _, beta, _, _ = self._unpack(g)
        return mu + np.asarray(X, float) @ np.asarray(beta, float)

    def unit_terms(self, g, W, ctx):
        T, Y, M, X = ctx
        alpha, _, gamma, _, s_eps, s_w = self._unpack(g)
        loc = self.location(g, X)
        D = coating_value(T, alpha, loc[:, None], gamma, W[:, :1])
        r = np.where(M, Y - D, 0.0)
        m = M.sum(axis=1)
        ll = -0.5 * (r ** 2).sum(axis=1) / s_eps ** 2 - m * (math.log(s_eps) + 0.5 * LOG_2PI)
        return ll + _normal_logpdf(W[:, 0], 0.0, s_w ** 2)

    def init(self, ctx, rng):
        T, Y, M, X = ctx
        p = X.shape[1]
        t, y = T[M], Y[M]
        xrow = np.repeat(X, M.sum(axis=1), axis=0)
        tpos = t > 0

        def resid(v):
            a, mu, lg = -math.exp(v[0]), v[1], v[2]
            loc = mu + xrow @ v[3:3 + p]
            return (y - coating_value(t, a, loc, math.exp(lg)))[tpos]

        amp = float(np.min(y)) if np.min(y) < 0 else -1.0
        v0 = np.concatenate([[math.log(-1.2 * amp), math.log(np.median(t[tpos])), 0.0], np.zeros(p)])
        sol = optimize.least_squares(resid, v0, max_nfev=2000)
        v = sol.x
        s_eps = max(float(np.sqrt(np.mean(sol.fun ** 2))), 1e-3)
        g = np.concatenate([[-math.exp(v[0]), v[1], math.exp(v[2])], v[3:3 + p], [s_eps, 0.1]])
        # disperse chains on the unconstrained scale
        u = _to_u(self, g) + 0.1 * rng.standard_normal(g.size)
        return _to_nat(self, u), 0.05 * rng.standard_normal((T.shape[0], 1))


@dataclass(frozen=True)
class FatigueModelSpec:
    """Hierarchical Paris-rule crack growth with stress fixed at ``stress``.

    Unit parameters are ``(log theta1_i, theta2_i) ~ N((mu_theta1, mu_theta2), Sigma)``
    with ``Sigma`` built from ``sigma_theta1``, ``sigma_theta2`` and ``rho``.
    ``initial`` is the common starting crack length.
    """

    initial: float = 9.0
    stress: float = 1.0
    mu1_prior: tuple[float, float] = (-9.0, 1.0)  # (mean, variance)
    mu2_prior: tuple[float, float] = (2.0, 10.0)
    sd_rate: float = 1.0  # rate of the Exp priors on sigma_theta1, sigma_theta2, sigma_eps

    global_names = ("mu_theta1", "mu_theta2", "sigma_theta1", "sigma_theta2", "rho", "sigma_eps")
    global_kinds = ("id", "id", "log", "log", "atanh", "log")
    unit_names = ("log_theta1", "theta2")

    def bind(self, data: RmdtDataset) -> "_Bound":
        return _Bound(self, data.padded(), data.unit_ids)

    def log_prior(self, g, ctx):
        m1, m2, s1, s2, rho, s_eps = g
        if not (s1 > 0 and s2 > 0 and s_eps > 0 and -1 < rho < 1):
            return -np.inf
        lam = self.sd_rate
        return (_normal_logpdf(m1, *self.mu1_prior) + _normal_logpdf(m2, *self.mu2_prior)
                + 3 * math.log(lam) - lam * (s1 + s2 + s_eps) + math.log(0.5))

    def cov(self, g):
        _, _, s1, s2, rho, _ = g
        return np.array([[s1 ** 2, rho * s1 * s2], [rho * s1 * s2, s2 ** 2]])

    def path(self, W, t):
        return paris_value(t, np.exp(W[..., 0:1]), W[..., 1:2], self.initial, self.stress)

    def unit_terms(self, g, W, ctx):
        T, Y, M = ctx
        s_eps = g[5]
        with np.errstate(all="ignore"):
            D = self.path(W, T)
        r = np.where(M, Y - D, 0.0)
        m = M.sum(axis=1)
        ll = -0.5 * (r ** 2).sum(axis=1) / s_eps ** 2 - m * (math.log(s_eps) + 0.5 * LOG_2PI)
        ll = np.where(np.isfinite(ll), ll, -np.inf)
        # bivariate normal density of (log theta1_i, theta2_i)
        m1, m2, s1, s2, rho, _ = g
        z1, z2 = (W[:, 0] - m1) / s1, (W[:, 1] - m2) / s2
        q = (z1 ** 2 - 2 * rho * z1 * z2 + z2 ** 2) / (1 - rho ** 2)
        return ll - LOG_2PI - math.log(s1 * s2) - 0.5 * math.log1p(-rho ** 2) - 0.5 * q

    def init(self, ctx, rng):
        T, Y, M = ctx
        n = T.shape[0]
        W = np.empty((n, 2))
        for i in range(n):
            t, y = T[i, M[i]], Y[i, M[i]]

            def resid(v):
                with np.errstate(all="ignore"):
                    r = y - paris_value(t, math.exp(v[0]), v[1], self.initial, self.stress)
                return np.where(np.isfinite(r), r, 1e6)

            sol = optimize.least_squares(resid, [self.mu1_prior[0], 2.5], max_nfev=2000)
            W[i] = sol.x
        s_eps = max(float(np.std(np.where(M, Y - self.path(W, T), 0.0)[M])), 1e-3)
        sd = np.maximum(W.std(axis=0), 0.05) if n > 1 else np.array([0.5, 0.2])
        g = np.array([W[:, 0].mean(), W[:, 1].mean(), sd[0], sd[1], 0.0, s_eps])
        u = _to_u(self, g) + 0.1 * rng.standard_normal(6)
        W = W + 0.01 * rng.standard_normal(W.shape)
        return _to_nat(self, u), W


def _to_nat(spec, u):
    return np.array([_TO_NAT[k](x) for k, x in zip(spec.global_kinds, u)], float)


def _to_u(spec, g):
    return np.array([_TO_U[k](x) for k, x in zip(spec.global_kinds, g)], float)


class _Bound:
    """A model specification together with its data arrays."""

    def __init__(self, spec, ctx, ids=()):
        self.spec, self.ctx, self.ids = spec, ctx, tuple(ids)
        self.n_units = len(self.ids)
        self.d = len(spec.unit_names)

    def log_post(self, g, W) -> float:
        lp = self.spec.log_prior(g, self.ctx)
        if not np.isfinite(lp):
            return -np.inf
        terms = self.spec.unit_terms(g, W, self.ctx) if self.n_units else np.zeros(0)
        return float(lp + terms.sum())

    def names(self):
        out = list(self.spec.global_names)
        for uid in self.ids:
            out += [f"{nm}[{uid}]" for nm in self.spec.unit_names]
        return out


def log_posterior(spec, theta, data) -> float:
    """Joint log posterior at the natural-scale vector ``theta``.

    ``theta`` lists the global parameters (``spec.global_names``) followed
    by each unit's parameters in dataset order. Out-of-support values give
    ``-inf``.
    """
    b = spec.bind(data)
    theta = np.asarray(theta, float)
    G = len(spec.global_names)
    if theta.size != G + b.n_units * b.d:
        raise ValueError(f"expected {G + b.n_units * b.d} values, got {theta.size}")
    g = theta[:G]
    if not all(_in_support(k, v) for k, v in zip(spec.global_kinds, g)):
        return -np.inf
    with np.errstate(all="ignore"):
        v = b.log_post(g, theta[G:].reshape(b.n_units, b.d))
    return v if np.isfinite(v) else -np.inf


# --------------------------------------------------------------------------
# sampler
# --------------------------------------------------------------------------

@dataclass
class McmcSettings:
    chains: int = 4
    iters: int = 4000
    warmup: int | None = None  # default iters // 2
    seed: int = 0
    n_jobs: int = 1
    joint: bool | None = None  # extra all-parameter block; default on up to 60 parameters

    @property
    def n_warmup(self) -> int:
        return self.iters // 2 if self.warmup is None else int(self.warmup)


@dataclass(frozen=True)
class PosteriorSamples:
    """Post-warm-up draws of all chains stacked row-wise, natural scale."""

    draws: np.ndarray
    chain_ids: np.ndarray
    names: tuple[str, ...]
    seed: int
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        d = np.asarray(self.draws, float)
        d.setflags(write=False)
        object.__setattr__(self, "draws", d)
        object.__setattr__(self, "names", tuple(self.names))
        if np.isnan(d).any():
            raise ValueError("NaN in posterior draws")

    @property
    def n_chains(self) -> int:
        return int(np.unique(self.chain_ids).size)

    def __getitem__(self, name) -> np.ndarray:
        return self.draws[:, self.names.index(name)]

    def by_chain(self, name) -> np.ndarray:
        """``(chains, draws)`` array of one parameter."""
        col = self[name]
        return np.stack([col[self.chain_ids == c] for c in np.unique(self.chain_ids)])

    def median(self) -> dict:
        return dict(zip(self.names, np.median(self.draws, axis=0).tolist()))

    def to_csv(self) -> str:
        """Long format ``chain,iter,param,value``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["chain", "iter", "param", "value"])
        for c in np.unique(self.chain_ids):
            rows = self.draws[self.chain_ids == c]
            for it, row in enumerate(rows):
                for nm, v in zip(self.names, row):
                    w.writerow([int(c), it, nm, repr(float(v))])
        return buf.getvalue()


def _rm_step(k):
    return 1.0 / (1.0 + k) ** 0.6


def _run_chain(spec, bound: _Bound, iters, warmup, rng, joint=False):
    kinds = spec.global_kinds
    G, n, d = len(kinds), bound.n_units, bound.d
    ctx = bound.ctx
    g0, W = bound.spec.init(ctx, rng)
    u = _to_u(spec, g0)

    def global_lp(uu, W_):
        """(prior + Jacobian, unit terms) on the unconstrained scale."""
        g = _to_nat(spec, uu)
        lp = spec.log_prior(g, ctx)
        if not np.isfinite(lp):
            return -np.inf, None
        lp += float(sum(_log_jac(k, x) for k, x in zip(kinds, uu)))
        terms = spec.unit_terms(g, W_, ctx) if n else np.zeros(0)
        return lp, terms

    with np.errstate(all="ignore"):
        prior, terms = global_lp(u, W)
        cur = prior + terms.sum() if terms is not None else -np.inf
    if not np.isfinite(cur):
        raise ValueError("initial point has zero posterior density")

    # proposal state: scale (log) and Cholesky factor, per block
    log_sg = math.log(2.38 / math.sqrt(G))
    Lg = 0.1 * np.eye(G)
    log_su = np.full(n, math.log(2.38 / math.sqrt(max(d, 1))))
    Lu = np.tile(0.1 * np.eye(d), (n, 1, 1)) if n else np.zeros((0, d, d))
    P = G + n * d
    log_sj = math.log(2.38 / math.sqrt(P))
    Lj = 0.01 * np.eye(P)
    joint = joint and n > 0
    hist_g, hist_w = [], []
    kept = np.empty((iters - warmup, P))
    acc_g = acc_u = acc_j = 0.0

    with np.errstate(all="ignore"):
        for it in range(iters):
            # global block
            prop = u + math.exp(log_sg) * (Lg @ rng.standard_normal(G))
            new_prior, new_terms = global_lp(prop, W)
            new = new_prior + new_terms.sum() if new_terms is not None else -np.inf
            a_g = math.exp(min(0.0, new - cur)) if np.isfinite(new) else 0.0
            if rng.random() < a_g:
                u, cur, prior, terms = prop, new, new_prior, new_terms
            # unit blocks, conditionally independent given the globals
            if n:
                g = _to_nat(spec, u)
                step = np.exp(log_su)[:, None] * np.einsum("nij,nj->ni", Lu, rng.standard_normal((n, d)))
                Wp = W + step
                tp = spec.unit_terms(g, Wp, ctx)
                ratio = np.where(np.isfinite(tp), tp - terms, -np.inf)
                a_u = np.exp(np.minimum(0.0, ratio))
                take = rng.random(n) < a_u
                W = np.where(take[:, None], Wp, W)
                terms = np.where(take, tp, terms)
                cur = prior + terms.sum()
            # joint move over everything; breaks the global/unit coupling
            if joint:
                z = np.concatenate([u, W.ravel()]) + math.exp(log_sj) * (Lj @ rng.standard_normal(P))
                uj, Wj = z[:G], z[G:].reshape(n, d)
                jp, jt = global_lp(uj, Wj)
                new = jp + jt.sum() if jt is not None else -np.inf
                a_j = math.exp(min(0.0, new - cur)) if np.isfinite(new) else 0.0
                if rng.random() < a_j:
                    u, W, cur, prior, terms = uj, Wj, new, jp, jt
            if it < warmup:
                gam = _rm_step(it)
                log_sg += gam * (a_g - TARGET_ACCEPT)
                hist_g.append(u.copy())
                if n:
                    log_su += gam * (a_u - TARGET_ACCEPT)
                    hist_w.append(W.copy())
                if joint:
                    log_sj += gam * (a_j - TARGET_ACCEPT)
                if (it + 1) % 100 == 0 and it + 1 >= 200:
                    # empirical covariance from the second half of the warm-up so far
                    H = np.array(hist_g[len(hist_g) // 2:])
                    C = np.atleast_2d(np.cov(H.T)) + 1e-10 * np.eye(G)
                    Lg = _safe_chol(C, Lg)
                    if n:
                        Hw = np.array(hist_w[len(hist_w) // 2:])
                        for i in range(n):
                            Ci = np.atleast_2d(np.cov(Hw[:, i, :].T)) + 1e-10 * np.eye(d)
                            Lu[i] = _safe_chol(Ci, Lu[i])
                    if joint:
                        Hj = np.concatenate([H, Hw.reshape(len(Hw), -1)], axis=1)
                        Lj = _safe_chol(np.cov(Hj.T) + 1e-10 * np.eye(P), Lj)
            else:
                acc_g += a_g
                if n:
                    acc_u += float(np.mean(a_u))
                if joint:
                    acc_j += a_j
                kept[it - warmup] = np.concatenate([_to_nat(spec, u), W.ravel()])
    m = max(iters - warmup, 1)
    return kept, acc_g / m, (acc_u / m if n else None), (acc_j / m if joint else None)


def _safe_chol(C, fallback):
    try:
        L = np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        return fallback
    return L if np.all(np.isfinite(L)) and np.all(np.diag(L) > 0) else fallback


def run_mcmc(spec, data, settings: McmcSettings | None = None) -> PosteriorSamples:
    """Blocked adaptive random-walk Metropolis.

    Blocks are the global parameters (on the unconstrained scale) and
    each unit's random effects. During warm-up every block's proposal
    scale follows a Robbins-Monro recursion towards 23% acceptance and
    its proposal covariance is refreshed from the warm-up draws every 100
    iterations; after warm-up the proposals are frozen. Small hierarchical
    models add a third, all-parameter block after the other two, since
    global/unit coupling otherwise makes the chains crawl. Chains use
    independent substreams of ``settings.seed``, so results do not depend
    on ``n_jobs``.
    """
    s = settings or McmcSettings()
    W_ = s.n_warmup
    if s.chains < 1 or s.iters <= W_ or W_ < 0:
        raise ValueError("need chains >= 1 and iters > warmup >= 0")
    bound = spec.bind(data)
    n_par = len(spec.global_names) + bound.n_units * bound.d
    joint = n_par <= 60 if s.joint is None else bool(s.joint)
    rngs = [substream(s.seed, 0xBA, c) for c in range(s.chains)]
    if s.n_jobs == 1:
        out = [_run_chain(spec, bound, s.iters, W_, r, joint) for r in rngs]
    else:
        from joblib import Parallel, delayed
        out = Parallel(n_jobs=s.n_jobs)(
            delayed(_run_chain)(spec, bound, s.iters, W_, r, joint) for r in rngs)
    draws = np.concatenate([o[0] for o in out])
    chain_ids = np.repeat(np.arange(s.chains), s.iters - W_)
    acc_g = [o[1] for o in out]
    acc_u = [o[2] for o in out]
    acc_j = [o[3] for o in out]
    rates = acc_g + [a for a in acc_u + acc_j if a is not None]
    low = bool(min(rates) < 0.01)
    if low:
        logger.warning("post-warm-up acceptance below 1%% in at least one block")
    extra = {"acceptance_global": acc_g, "acceptance_units": acc_u, "acceptance_joint": acc_j,
             "low_acceptance": low,
             "iters": s.iters, "warmup": W_, "model": type(spec).__name__}
    if isinstance(spec, CoatingModelSpec):
        extra["unit_covariates"] = dict(zip(bound.ids, bound.ctx[3].tolist()))
    return PosteriorSamples(draws, chain_ids, bound.names(), s.seed, extra)


# --------------------------------------------------------------------------
# convergence diagnostics
# --------------------------------------------------------------------------

def _split(x):
    n = x.shape[1] // 2
    return np.concatenate([x[:, :n], x[:, x.shape[1] - n:]])


def _rank_normalize(x):
    r = stats.rankdata(x, axis=None).reshape(x.shape)
    return stats.norm.ppf((r - 0.375) / (x.size + 0.25))


def _rhat_basic(x):
    m, n = x.shape
    W = x.var(axis=1, ddof=1).mean()
    B = n * x.mean(axis=1).var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else math.inf
    return math.sqrt(((n - 1) / n * W + B / n) / W)


def _ess_basic(x):
    m, n = x.shape
    if n < 4:
        return float(m * n)
    xc = x - x.mean(axis=1, keepdims=True)
    f = np.fft.rfft(xc, n=2 * n, axis=1)
    acov = np.fft.irfft(f * np.conj(f), axis=1)[:, :n] / n
    W = x.var(axis=1, ddof=1).mean()
    var_plus = (n - 1) / n * W + (x.mean(axis=1).var(ddof=1) if m > 1 else 0.0)
    if var_plus <= 0:
        return float(m * n)
    rho = 1 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer's initial positive, monotone sequence
    tau = -1.0
    prev = math.inf
    for t in range(0, n - 1, 2):
        p = rho[t] + rho[t + 1]
        if p < 0:
            break
        p = min(p, prev)
        tau += 2 * p
        prev = p
    return float(m * n / max(tau, 1e-12)) if tau > 0 else float(m * n)


def diagnostics(samples: PosteriorSamples) -> dict:
    """Rank-normalized split R-hat and bulk ESS for every parameter.

    R-hat is the largest of the values on the rank-normalized draws, on
    the rank-normalized folded draws ``|x - median|`` and on the raw
    draws. Rank normalization caps R-hat near 1.8 for two fully separated
    chains; the raw value keeps such gross failures visible.
    """
    if samples.n_chains < 2:
        raise ValueError("diagnostics need at least 2 chains")
    out = {}
    for name in samples.names:
        x = samples.by_chain(name)
        if x.shape[1] < 100:
            raise ValueError("diagnostics need at least 100 draws per chain")
        xs = _split(x)
        z = _rank_normalize(xs)
        zf = _rank_normalize(np.abs(xs - np.median(xs)))
        rhat = max(_rhat_basic(z), _rhat_basic(zf), _rhat_basic(xs))
        out[name] = {"rhat": float(rhat), "ess": _ess_basic(z)}
    return out


# --------------------------------------------------------------------------
# predictions
# --------------------------------------------------------------------------

def _globals(samples, spec):
    return np.column_stack([samples[n] for n in spec.global_names])


def _draw_quantiles(F, level):
    a = (1 - level) / 2
    return np.quantile(F, a, axis=0), np.quantile(F, 1 - a, axis=0)


def posterior_cdf(samples: PosteriorSamples, spec: CoatingModelSpec, covariates, threshold,
                  times, level: float = 0.95) -> CdfCurve:
    """Posterior predictive failure CDF of a new coating unit at ``covariates``.

    Per draw ``F = 1 - Phi(xi_t / sigma_w)`` with
    ``xi_t = log(D0/alpha) + log(1 + exp(-(log t - mu - x'beta)/gamma))``;
    the point curve is the average over draws and the bounds are draw
    quantiles, widened where needed to contain the point curve.
    """
    d0 = threshold.value if isinstance(threshold, FailureThreshold) else float(threshold)
    if d0 >= 0:
        raise ValueError("the coating convention needs a negative threshold")
    t = np.asarray(times, float)
    if np.any(t <= 0):
        raise ValueError("times must be positive")
    x = _covariate_row(spec, covariates)
    G = _globals(samples, spec)
    alpha, gamma, s_w = G[:, 0], G[:, 2], G[:, -1]
    loc = G[:, 1] + G[:, 3:3 + x.size] @ x
    z = (np.log(t)[None, :] - loc[:, None]) / gamma[:, None]
    xi = np.log(d0 / alpha)[:, None] + np.logaddexp(0.0, -z)
    F = special.ndtr(-xi / s_w[:, None])
    point = F.mean(axis=0)
    lo, hi = _draw_quantiles(F, level)
    lo, hi = np.minimum(lo, point), np.maximum(hi, point)
    assert np.all(lo <= point) and np.all(point <= hi)
    return CdfCurve(t, point, lo, hi, level, {"draws": int(F.shape[0])})


def _covariate_row(spec, covariates):
    if isinstance(covariates, dict):
        missing = set(spec.covariates) - set(covariates)
        if missing:
            raise ValueError(f"missing covariate(s) {sorted(missing)}")
        return np.array([float(covariates[c]) for c in spec.covariates])
    x = np.asarray(covariates if covariates is not None else [], float).ravel()
    if x.size != len(spec.covariates):
        raise ValueError(f"expected {len(spec.covariates)} covariate values")
    return x


def crossing_times(samples: PosteriorSamples, spec, threshold, unit=None, covariates=None,
                   seed: int = 0) -> np.ndarray:
    """Per-draw time at which a unit's path reaches the threshold.

    ``unit`` picks an observed unit and uses its sampled random effects;
    ``unit=None`` draws a fresh unit from the hierarchy for every draw.
    Paths that never reach the threshold give ``inf``.
    """
    G = _globals(samples, spec)
    rng = substream(seed, 0xC7)
    k = G.shape[0]
    if isinstance(spec, CoatingModelSpec):
        d0 = threshold.value if isinstance(threshold, FailureThreshold) else float(threshold)
        if unit is None:
            w = G[:, -1] * rng.standard_normal(k)
            x = _covariate_row(spec, covariates)
        else:
            w = samples[f"w[{unit}]"]
            x = _covariate_row(spec, covariates) if covariates is not None else \
                _unit_covariates(samples, spec, unit)
        loc = G[:, 1] + G[:, 3:3 + x.size] @ x
        ratio = d0 / (G[:, 0] * np.exp(w))
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.exp(loc + G[:, 2] * np.log(ratio / (1 - ratio)))
        return np.where((ratio > 0) & (ratio < 1), t, np.inf)
    if isinstance(spec, FatigueModelSpec):
        level = threshold.value if isinstance(threshold, FailureThreshold) else float(threshold)
        if unit is None:
            W = np.empty((k, 2))
            for j in range(k):
                W[j] = rng.multivariate_normal(G[j, :2], spec.cov(G[j]))
        else:
            W = np.column_stack([samples[f"log_theta1[{unit}]"], samples[f"theta2[{unit}]"]])
        with np.errstate(all="ignore"):
            t = paris_crossing_time(np.exp(W[:, 0]), W[:, 1], spec.initial, level, spec.stress)
        return np.where(np.isfinite(t) & (t >= 0), t, np.nan) if level > spec.initial else np.zeros(k)
    raise TypeError(f"no crossing rule for {type(spec).__name__}")


def _unit_covariates(samples, spec, unit):
    cov = samples.extra.get("unit_covariates", {})
    if spec.covariates and unit not in cov:
        raise ValueError(f"covariates of unit {unit} unknown; pass covariates=")
    return np.asarray(cov.get(unit, []), float)


def cycles_to_threshold(samples: PosteriorSamples, spec: FatigueModelSpec, threshold: float = 30.0,
                        new_unit: bool = True, unit=None, seed: int = 0) -> np.ndarray:
    """Crossing cycles of the Paris path at ``threshold``, one per posterior draw.

    Draws whose crossing cannot be computed come back as NaN and are
    counted in the log.
    """
    if not new_unit and unit is None:
        raise ValueError("pass unit= or new_unit=True")
    t = crossing_times(samples, spec, threshold, None if new_unit else unit, seed=seed)
    bad = int(np.isnan(t).sum())
    if bad:
        logger.warning("%d of %d draws gave no crossing", bad, t.size)
    return t


def rul_distribution(samples: PosteriorSamples, spec, unit, t0: float, s_grid, threshold,
                     covariates=None, seed: int = 0) -> CdfCurve:
    """Remaining-useful-life CDF ``rho(s) = Pr[T <= t0 + s | T > t0]``.

    Given a draw the path is deterministic, so the conditional probability
    is an average of indicators over the draws with ``T > t0``; the others
    are excluded and counted in ``extra["excluded"]``. ``unit=None`` uses a
    fresh unit from the hierarchy.
    """
    s = np.asarray(s_grid, float)
    if np.any(s < 0):
        raise ValueError("s_grid must be nonnegative")
    T = crossing_times(samples, spec, threshold, unit, covariates, seed)
    T = T[~np.isnan(T)]
    alive = T > t0
    if not alive.any():
        raise EmptyConditioningError(f"every draw puts unit {unit} past the threshold by t0={t0}")
    Ta = T[alive]
    F = (Ta[None, :] <= t0 + s[:, None]).mean(axis=1)
    return CdfCurve(s, F, extra={"t0": t0, "unit": unit, "used": int(alive.sum()),
                                 "excluded": int((~alive).sum())})
