"""Wiener, gamma and inverse Gaussian degradation processes.

All three use the power-law trend ``mu(t) = (t / alpha2) ** alpha1``.
Increment laws over an interval with trend increment ``dm``:

* wiener: ``N(dm, sigma**2 * dm)``
* gamma: ``Gamma(shape=dm, scale=sigma)``
* inverse_gaussian: ``IG(mean=dm, shape=sigma * dm**2)``
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .data import FailureThreshold, RmdtDataset, UnitSeries, ValidationError
from .optim import OptimizerOptions, maximize
from .results import CdfCurve, FitResult, substream

PROCESSES = ("wiener", "gamma", "inverse_gaussian")
LOG_2PI = math.log(2 * math.pi)


class DegenerateIncrementError(ValueError):
    """An observation interval has zero trend increment."""


@dataclass(frozen=True)
class SpModelSpec:
    process: str
    alpha1: float = 1.0
    alpha2: float = 1.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.process not in PROCESSES:
            raise ValueError(f"unknown process {self.process!r}; known: {PROCESSES}")
        for k in ("alpha1", "alpha2", "sigma"):
            v = getattr(self, k)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{k} must be positive, got {v}")

    def trend(self, t):
        t = np.asarray(t, float)
        return (t / self.alpha2) ** self.alpha1

    def with_params(self, alpha1, alpha2, sigma) -> "SpModelSpec":
        return SpModelSpec(self.process, float(alpha1), float(alpha2), float(sigma))

    def to_dict(self) -> dict:
        return {"process": self.process, "alpha1": self.alpha1, "alpha2": self.alpha2,
                "sigma": self.sigma}

    @classmethod
    def from_dict(cls, d: dict) -> "SpModelSpec":
        return cls(d["process"], float(d.get("alpha1", 1.0)), float(d.get("alpha2", 1.0)),
                   float(d.get("sigma", 1.0)))


# --------------------------------------------------------------------------
# inverse Gaussian helpers, stable in the tails
# --------------------------------------------------------------------------

def ig_logpdf(x, mean, shape):
    x, mean, shape = np.broadcast_arrays(*(np.asarray(a, float) for a in (x, mean, shape)))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 0.5 * (np.log(shape) - LOG_2PI - 3 * np.log(x)) - shape * (x - mean) ** 2 / (2 * mean ** 2 * x)
    return np.where(x > 0, out, -np.inf)


def ig_cdf(x, mean, shape):
    """``Phi(a) + exp(2 shape / mean) Phi(-b)`` with the exponential folded into log space."""
    x, mean, shape = np.broadcast_arrays(*(np.asarray(a, float) for a in (x, mean, shape)))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(shape / x)
        a = r * (x / mean - 1.0)
        b = r * (x / mean + 1.0)
        out = special.ndtr(a) + np.exp(2 * shape / mean + special.log_ndtr(-b))
    out = np.where(x > 0, out, 0.0)
    return np.clip(out, 0.0, 1.0)


# --------------------------------------------------------------------------
# likelihood
# --------------------------------------------------------------------------

def _increments(data: RmdtDataset):
    """Per-unit ``(unit_id, t_prev, t, dy)`` with ``(0, 0)`` prepended when t starts after 0."""
    out = []
    for u in data.units:
        t, y = u.times, u.measurements
        if t[0] > 0:
            t = np.concatenate([[0.0], t])
            y = np.concatenate([[0.0], y])
        out.append((u.unit_id, t[:-1], t[1:], np.diff(y)))
    return out


def _check_increments(spec: SpModelSpec, incs):
    if spec.process == "wiener":
        return
    for uid, t0, t1, dy in incs:
        neg = np.flatnonzero(dy < 0)
        if neg.size:
            k = neg[0]
            raise ValidationError(f"unit {uid}: negative increment {dy[k]:.6g} on ({t0[k]:g}, {t1[k]:g}] "
                                  f"is impossible under the {spec.process} process")


def _logdens(process, dy, dm, sigma):
    if process == "wiener":
        v = sigma ** 2 * dm
        return -0.5 * (LOG_2PI + np.log(v)) - (dy - dm) ** 2 / (2 * v)
    if process == "gamma":
        return stats.gamma.logpdf(dy, dm, scale=sigma)
    return ig_logpdf(dy, dm, sigma * dm ** 2)


def _stack(spec, incs):
    t0 = np.concatenate([i[1] for i in incs])
    t1 = np.concatenate([i[2] for i in incs])
    dy = np.concatenate([i[3] for i in incs])
    return t0, t1, dy


def _loglik_stacked(spec: SpModelSpec, t0, t1, dy, ids=None) -> float:
    dm = spec.trend(t1) - spec.trend(t0)
    bad = np.flatnonzero(~(dm > 0))
    if bad.size:
        k = bad[0]
        who = f"unit {ids[k]}: " if ids is not None else ""
        raise DegenerateIncrementError(f"{who}trend increment is zero on ({t0[k]:g}, {t1[k]:g}]")
    return float(np.sum(_logdens(spec.process, dy, dm, spec.sigma)))


def sp_increment_loglik(spec: SpModelSpec, data: RmdtDataset) -> float:
    """Sum of increment log-densities over all units and intervals.

    Each unit's series is taken to start at ``(t, y) = (0, 0)``; a unit
    whose first time is already 0 uses its first reading as the base.
    """
    incs = _increments(data)
    _check_increments(spec, incs)
    ids = [uid for uid, _, _, dy in incs for _ in range(dy.size)]
    return _loglik_stacked(spec, *_stack(spec, incs), ids=ids)


def fit_sp(spec: SpModelSpec, data: RmdtDataset, options: OptimizerOptions | None = None) -> FitResult:
    """Maximum likelihood over ``(alpha1, alpha2, sigma)``, all on the log scale.

    ``spec`` supplies the process and the starting values. Standard
    errors come from the finite-difference Hessian mapped back to the
    natural scale by the delta method.
    """
    opts = options or OptimizerOptions()
    incs = _increments(data)
    _check_increments(spec, incs)
    t0, t1, dy = _stack(spec, incs)
    if dy.size < 3:
        raise ValueError(f"need at least 3 increments, got {dy.size}")

    def ll(u):
        s = spec.with_params(*np.exp(u))
        return _loglik_stacked(s, t0, t1, dy)

    u0 = np.log(_start(spec, data))
    res = maximize(ll, u0, opts)
    from .gpm import _delta_covariance
    cov, _ = _delta_covariance(ll, res.x, np.exp)
    a1, a2, sg = np.exp(res.x)
    est = {"alpha1": float(a1), "alpha2": float(a2), "sigma": float(sg)}
    converged = res.converged and bool(np.all(np.isfinite(cov))) and bool(np.all(np.diag(cov) >= 0))
    return FitResult(est, cov, res.value, 6 - 2 * res.value, converged, res.iterations, opts.seed,
                     model="sp", extra={"process": spec.process, "grad_norm": res.grad_norm,
                                        "restarts": [[r, v, ok] for r, v, ok in res.history]})


def _start(spec, data):
    """Log-log regression of cumulative level on time; the template's values otherwise."""
    t = np.concatenate([u.times for u in data.units])
    y = np.concatenate([u.measurements - (u.measurements[0] if u.times[0] == 0 else 0.0)
                        for u in data.units])
    a1, a2, sg = spec.alpha1, spec.alpha2, spec.sigma
    ok = (t > 0) & (y > 0)
    if ok.sum() >= 2 and np.ptp(np.log(t[ok])) > 0:
        # log y ~ a1 log t - a1 log a2 (gamma adds log sigma; absorbed into a2)
        slope, icpt = np.polyfit(np.log(t[ok]), np.log(y[ok]), 1)
        if slope > 0:
            a1 = float(slope)
            a2 = float(math.exp(-icpt / slope))
    return np.array([a1, a2, sg])


# --------------------------------------------------------------------------
# failure-time distribution and simulation
# --------------------------------------------------------------------------

def sp_failure_cdf(spec: SpModelSpec, threshold, times) -> CdfCurve:
    """First-passage CDF of the level ``threshold`` (a number or FailureThreshold)."""
    d0 = threshold.value if isinstance(threshold, FailureThreshold) else float(threshold)
    if not d0 > 0:
        raise ValueError("threshold must be positive")
    t = np.asarray(times, float)
    m = spec.trend(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        if spec.process == "wiener":
            F = ig_cdf(m, d0, d0 ** 2 / spec.sigma ** 2)
        elif spec.process == "gamma":
            F = special.gammaincc(m, d0 / spec.sigma)
        else:
            F = 1.0 - ig_cdf(d0, m, spec.sigma * m ** 2)
    F = np.where(m > 0, F, 0.0)
    return CdfCurve(t, F, extra={"process": spec.process, "d0": d0})


def _draw_increments(spec: SpModelSpec, dm, rng, size):
    if spec.process == "wiener":
        return dm + spec.sigma * np.sqrt(dm) * rng.standard_normal(size)
    if spec.process == "gamma":
        return rng.gamma(np.broadcast_to(dm, size), spec.sigma)
    return rng.wald(np.broadcast_to(dm, size), np.broadcast_to(spec.sigma * dm ** 2, size))


def _check_grid(grid):
    g = np.asarray(grid, float)
    if g.ndim != 1 or g.size < 2 or g[0] != 0 or np.any(np.diff(g) <= 0):
        raise ValueError("grid must start at 0 and be strictly increasing")
    return g


def simulate_sp_path(spec: SpModelSpec, grid, seed: int = 0, unit_id="U001") -> UnitSeries:
    """One path observed on ``grid`` (which must start at 0)."""
    g = _check_grid(grid)
    rng = substream(seed, 0x5D)
    dm = np.diff(spec.trend(g))
    y = np.concatenate([[0.0], np.cumsum(_draw_increments(spec, dm, rng, dm.shape))])
    return UnitSeries(unit_id, g, y)


def simulate_sp_paths(spec: SpModelSpec, grid, n: int, seed: int = 0, chunk: int = 10_000):
    """``(n, len(grid))`` array of paths, generated in fixed-size chunks.

    Chunk ``c`` draws from its own substream, so the result does not
    depend on how chunks are scheduled.
    """
    g = _check_grid(grid)
    dm = np.diff(spec.trend(g))
    out = np.zeros((n, g.size))
    for c, start in enumerate(range(0, n, chunk)):
        k = min(chunk, n - start)
        rng = substream(seed, 0x5E, c)
        out[start:start + k, 1:] = np.cumsum(_draw_increments(spec, dm, rng, (k, dm.size)), axis=1)
    return out


def empirical_first_passage(spec: SpModelSpec, threshold: float, grid, n: int, seed: int = 0,
                            bridge: bool = True, chunk: int = 10_000) -> CdfCurve:
    """Fraction of simulated paths that have reached ``threshold`` by each grid time.

    Gamma and IG paths are monotone, so a grid reading above the level
    means the level was crossed. Wiener paths can cross and come back
    between readings; with ``bridge`` that event is added by drawing from
    the Brownian-bridge crossing probability
    ``exp(-2 (d0 - y_a)(d0 - y_b) / (sigma^2 dm))`` on each interval.
    """
    g = _check_grid(grid)
    d0 = float(threshold)
    dm = np.diff(spec.trend(g))
    hit_count = np.zeros(g.size)
    for c, start in enumerate(range(0, n, chunk)):
        k = min(chunk, n - start)
        rng = substream(seed, 0x5F, c)
        y = np.zeros((k, g.size))
        y[:, 1:] = np.cumsum(_draw_increments(spec, dm, rng, (k, dm.size)), axis=1)
        hit = y >= d0
        if bridge and spec.process == "wiener":
            ya, yb = y[:, :-1], y[:, 1:]
            with np.errstate(over="ignore"):
                p = np.exp(-2 * np.maximum(d0 - ya, 0) * np.maximum(d0 - yb, 0) / (spec.sigma ** 2 * dm))
            hit[:, 1:] |= rng.random((k, dm.size)) < p
        hit_count += np.logical_or.accumulate(hit, axis=1).sum(axis=0)
    return CdfCurve(g, hit_count / n, extra={"paths": n, "seed": seed, "bridge": bridge})
