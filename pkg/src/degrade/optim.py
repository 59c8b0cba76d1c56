"""Likelihood maximization shared by the fitting modules.

Nelder-Mead with random restarts, then BFGS driven by central
finite-difference gradients. Objectives are maximized; outside the valid
domain they may return ``-inf`` or raise ``ValueError``, ``ArithmeticError``
or ``RuntimeError``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

logger = logging.getLogger(__name__)

PENALTY = 1e300


@dataclass
class OptimizerOptions:
    restarts: int = 5
    maxiter: int = 20000
    jitter: float = 0.3
    polish: bool = True
    fatol: float = 1e-6
    gtol: float = 1e-4
    fd_step: float = 1e-5
    seed: int = 0


@dataclass
class OptimResult:
    x: np.ndarray
    value: float
    converged: bool
    iterations: int
    grad_norm: float
    history: list = field(default_factory=list)


def _safe(fun):
    def wrapped(x):
        try:
            v = fun(x)
        except (FloatingPointError, ValueError, ArithmeticError, RuntimeError,
                np.linalg.LinAlgError):
            return -np.inf
        return v if np.isfinite(v) else -np.inf
    return wrapped


def fd_gradient(fun, x, step=1e-5):
    """Central-difference gradient with relative step ``step * max(1, |x_i|)``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def fd_hessian(fun, x, step=1e-4):
    """Central-difference Hessian, symmetrized."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = step * np.maximum(1.0, np.abs(x))
    f0 = fun(x)
    H = np.empty((n, n))
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        fp, fm = fun(x + ei), fun(x - ei)
        H[i, i] = (fp - 2 * f0 + fm) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(n)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (
                fun(x + ei + ej) - fun(x + ei - ej) - fun(x - ei + ej) + fun(x - ei - ej)
            ) / (4 * h[i] * h[j])
    return H


def maximize(fun, x0, options: OptimizerOptions | None = None, explore=None) -> OptimResult:
    """Maximize ``fun`` from ``x0``.

    Restart ``r > 0`` starts from ``x0`` plus Gaussian jitter of scale
    ``options.jitter``, drawn from a generator seeded by ``options.seed``.
    The simplex phase runs on ``explore`` when given (a cheaper surrogate
    of ``fun``); the best simplex point is then polished with BFGS on
    ``fun``. Each restart runs a budget-capped simplex followed by BFGS on
    the same surface; the best restart is polished on ``fun``. The fit
    counts as converged when the final gradient norm of ``fun`` is below
    ``gtol``.
    """
    opts = options or OptimizerOptions()
    f_target = _safe(fun)
    f = _safe(explore) if explore is not None else f_target
    x0 = np.asarray(x0, dtype=float)
    rng = np.random.default_rng(np.random.SeedSequence(opts.seed, spawn_key=(0x0917,)))

    def neg(x):
        v = f(x)
        return PENALTY if not np.isfinite(v) else -v

    def grad_neg(z):
        return -fd_gradient(f, z, opts.fd_step)

    best = None
    total_iter = 0
    history = []
    budget = min(opts.maxiter, 60 * x0.size)
    for r in range(max(1, opts.restarts)):
        start = x0 if r == 0 else x0 + opts.jitter * rng.standard_normal(x0.size)
        if not np.isfinite(f(start)):
            history.append((r, -np.inf, False))
            continue
        # coarse simplex to get into the basin, then quasi-Newton to the top
        nm_opts = {"maxiter": budget, "maxfev": budget, "xatol": 1e-6,
                   "fatol": opts.fatol, "adaptive": x0.size > 4}
        res = optimize.minimize(neg, start, method="Nelder-Mead", options=nm_opts)
        total_iter += res.nit
        qn = optimize.minimize(neg, res.x, jac=grad_neg, method="BFGS",
                               options={"gtol": opts.gtol, "maxiter": 500})
        total_iter += qn.nit
        if np.isfinite(qn.fun) and qn.fun <= res.fun:
            res = qn
        ok = bool(res.fun < PENALTY)
        history.append((r, -res.fun, ok))
        if ok and (best is None or res.fun < best[0].fun):
            best = (res, ok)
    if best is None:
        return OptimResult(x0, -np.inf, False, total_iter, np.inf, history)
    res, simplex_ok = best
    x = res.x
    value = f_target(x)

    def neg_target(z):
        v = f_target(z)
        return PENALTY if not np.isfinite(v) else -v

    if opts.polish:
        def grad(z):
            return -fd_gradient(f_target, z, opts.fd_step)
        pol = optimize.minimize(neg_target, x, jac=grad, method="BFGS",
                                options={"gtol": opts.gtol * 0.1, "maxiter": 500})
        total_iter += pol.nit
        if np.isfinite(pol.fun) and -pol.fun >= value:
            x, value = pol.x, -pol.fun
    g = fd_gradient(f_target, x, opts.fd_step)
    gnorm = float(np.linalg.norm(g))
    # BFGS can stall on line-search roundoff just short of the gate; finish with Newton
    for _ in range(3 if opts.polish and np.isfinite(value) else 0):
        if gnorm < opts.gtol:
            break
        H = fd_hessian(f_target, x)
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.linalg.eigvalsh(0.5 * (H + H.T)) < 0):
            break
        for lam in (1.0, 0.5, 0.25, 0.125):
            v = f_target(x + lam * step)
            if v >= value:
                x, value = x + lam * step, v
                break
        else:
            break
        g = fd_gradient(f_target, x, opts.fd_step)
        gnorm = float(np.linalg.norm(g))
    converged = simplex_ok and np.isfinite(value) and gnorm < opts.gtol
    return OptimResult(np.asarray(x), float(value), bool(converged), int(total_iter), gnorm, history)
