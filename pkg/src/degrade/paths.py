"""Parametric degradation paths and first-crossing solvers.

The formula functions (``linear_value``, ``paris_value`` ...) are plain
vectorized numpy code and broadcast over all arguments; the fitting
modules call them directly with parameter arrays. The dataclasses wrap
one parameter set each and add crossing-time inversion and JSON round-trip.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from .data import CovariateHistory, FailureThreshold

SQRT_PI = math.sqrt(math.pi)


class SingularityError(ArithmeticError):
    """Paris path evaluated past its finite-time blow-up."""

    def __init__(self, blowup_time: float):
        super().__init__(f"Paris path blows up at t = {blowup_time:.6g}")
        self.blowup_time = blowup_time


# --------------------------------------------------------------------------
# vectorized formulas
# --------------------------------------------------------------------------

def linear_value(t, intercept, slope):
    return intercept + slope * t


def paris_value(t, theta1, theta2, initial, stress=1.0):
    """Closed-form solution of dD/dt = theta1 * (x sqrt(pi D))**theta2.

    Returns ``inf`` past the blow-up time when ``theta2 > 2``.
    """
    t, theta1, theta2, initial, stress = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (t, theta1, theta2, initial, stress)))
    k = 1.0 - theta2 / 2.0
    c = theta1 * (stress * SQRT_PI) ** theta2
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # D(0)^k + k c t = D(0)^k (1 + u);  D = D(0) exp(log1p(u) / k)
        u = k * c * t * initial ** (-k)
        safe_k = np.where(k == 0.0, 1.0, k)
        general = initial * np.exp(np.log1p(u) / safe_k)
        general = np.where(u <= -1.0, np.inf, general)
        expo = initial * np.exp(c * t)
    out = np.where(k == 0.0, expo, general)
    return out if out.ndim else float(out)


def paris_blowup_time(theta1, theta2, initial, stress=1.0) -> float:
    if theta2 <= 2:
        return math.inf
    k = 1.0 - theta2 / 2.0
    c = theta1 * (stress * SQRT_PI) ** theta2
    return -(initial ** k) / (k * c)


def paris_crossing_time(theta1, theta2, initial, level, stress=1.0):
    """Time at which the Paris path from ``initial`` reaches ``level`` (> initial)."""
    theta1, theta2, initial, level, stress = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (theta1, theta2, initial, level, stress)))
    c = theta1 * (stress * SQRT_PI) ** theta2
    k = 1.0 - theta2 / 2.0
    lr = np.log(level / initial)
    safe_k = np.where(k == 0.0, 1.0, k)
    # (level^k - D0^k) / (k c), written via expm1 for k near 0
    general = initial ** k * np.expm1(k * lr) / (safe_k * c)
    out = np.where(k == 0.0, lr / c, general)
    return out if out.ndim else float(out)


def loglogistic_value(t, asymptote, scale, shape):
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        r = np.where(t > 0, (np.maximum(t, 1e-300) / scale) ** (-1.0 / shape), np.inf)
    out = asymptote / (1.0 + r)
    return out if np.ndim(out) else float(out)


def device_b_value(t, beta1, beta2, activation, baseline_x, x):
    rate = np.exp(beta1 + activation * (baseline_x - x))
    return -np.exp(beta2) * (-np.expm1(-rate * t))


def coating_value(t, asymptote, location, gamma, w=0.0):
    """Reparameterized log-logistic path ``a e^w / (1 + exp(-(log t - mu)/gamma))``.

    ``location`` is the unit location ``mu + x'beta``.
    """
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        z = (np.log(np.maximum(t, 1e-300)) - location) / gamma
        out = asymptote * np.exp(w) / (1.0 + np.exp(-z))
    out = np.where(t > 0, out, 0.0 * out)
    return out if np.ndim(out) else float(out)


# --------------------------------------------------------------------------
# path objects
# --------------------------------------------------------------------------

class _Path:
    family: str = ""

    def evaluate(self, t):
        raise NotImplementedError

    def __call__(self, t):
        return self.evaluate(t)

    @property
    def direction(self) -> str:
        raise NotImplementedError

    @property
    def t_max(self) -> float:
        return math.inf

    def _crossing(self, level: float):
        """Analytic crossing time, ``None`` if never crossed, NotImplemented for bisection."""
        return NotImplemented

    def to_dict(self) -> dict:
        return {"family": self.family, "params": asdict(self)}


@dataclass(frozen=True)
class LinearPath(_Path):
    intercept: float
    slope: float
    family = "linear"

    def evaluate(self, t):
        _check_time(t)
        return linear_value(np.asarray(t, float), self.intercept, self.slope) if np.ndim(t) else \
            float(linear_value(t, self.intercept, self.slope))

    @property
    def direction(self):
        if self.slope == 0:
            raise ValueError("linear path with zero slope has no direction")
        return "increasing" if self.slope > 0 else "decreasing"

    def _crossing(self, level):
        return (level - self.intercept) / self.slope


@dataclass(frozen=True)
class ParisPath(_Path):
    theta1: float
    theta2: float
    initial: float
    stress: float = 1.0
    family = "paris"

    def __post_init__(self):
        if self.theta1 <= 0:
            raise ValueError("theta1 must be positive")
        if self.initial <= 0:
            raise ValueError("initial level must be positive")
        if self.stress <= 0:
            raise ValueError("stress must be positive")

    @property
    def blowup_time(self) -> float:
        return paris_blowup_time(self.theta1, self.theta2, self.initial, self.stress)

    def evaluate(self, t):
        _check_time(t)
        if np.max(t) >= self.blowup_time:
            raise SingularityError(self.blowup_time)
        return paris_value(t, self.theta1, self.theta2, self.initial, self.stress)

    @property
    def direction(self):
        return "increasing"

    def _crossing(self, level):
        return float(paris_crossing_time(self.theta1, self.theta2, self.initial, level, self.stress))


@dataclass(frozen=True)
class LogLogisticPath(_Path):
    asymptote: float
    scale: float
    shape: float
    family = "loglogistic"

    def __post_init__(self):
        if self.scale <= 0 or self.shape <= 0:
            raise ValueError("scale and shape must be positive")

    def evaluate(self, t):
        _check_time(t)
        return loglogistic_value(t, self.asymptote, self.scale, self.shape)

    @property
    def direction(self):
        if self.asymptote == 0:
            raise ValueError("zero asymptote")
        return "increasing" if self.asymptote > 0 else "decreasing"

    def _crossing(self, level):
        ratio = level / self.asymptote
        if not 0 < ratio < 1:
            return None
        return self.scale * (1.0 / ratio - 1.0) ** (-self.shape)


@dataclass(frozen=True)
class DeviceBPath(_Path):
    beta1: float
    beta2: float
    activation: float
    baseline_x: float
    x: float
    family = "device_b"

    def evaluate(self, t):
        _check_time(t)
        out = device_b_value(np.asarray(t, float), self.beta1, self.beta2, self.activation,
                             self.baseline_x, self.x)
        return out if np.ndim(out) else float(out)

    @property
    def direction(self):
        return "decreasing"

    def _crossing(self, level):
        p = -level / math.exp(self.beta2)
        if p >= 1:
            return None
        rate = math.exp(self.beta1 + self.activation * (self.baseline_x - self.x))
        return -math.log1p(-p) / rate


@dataclass(frozen=True)
class CoatingPath(_Path):
    asymptote: float
    mu: float
    coef: tuple[float, ...]
    gamma: float
    w: float = 0.0
    covariates: tuple[float, ...] = ()
    family = "coating"

    def __post_init__(self):
        object.__setattr__(self, "coef", tuple(float(c) for c in self.coef))
        object.__setattr__(self, "covariates", tuple(float(c) for c in self.covariates))
        if self.asymptote >= 0:
            raise ValueError("coating asymptote must be negative")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if len(self.coef) != len(self.covariates):
            raise ValueError("coef and covariates differ in length")

    @property
    def location(self) -> float:
        return self.mu + float(np.dot(self.coef, self.covariates)) if self.coef else self.mu

    def evaluate(self, t):
        _check_time(t)
        return coating_value(t, self.asymptote, self.location, self.gamma, self.w)

    @property
    def direction(self):
        return "decreasing"

    def _crossing(self, level):
        ratio = level / (self.asymptote * math.exp(self.w))
        if not 0 < ratio < 1:
            return None
        return math.exp(self.location + self.gamma * math.log(ratio / (1.0 - ratio)))


# covariate effect functions f(x; params), params as a sequence of reals
EFFECTS: dict[str, Callable] = {
    "linear": lambda x, p: p[0] * x,
    "power": lambda x, p: p[0] * np.power(x, p[1]),
    "exp": lambda x, p: np.exp(p[0] + p[1] * x),
}


@dataclass(frozen=True)
class CumulativeExposurePath(_Path):
    """``beta0 + sum_l int_0^t f_l(x_l(s); beta_l) ds + unit_shift``.

    ``effects`` pairs each history (same order) with an entry of
    :data:`EFFECTS` and its parameters.
    """

    beta0: float
    effects: tuple[tuple[str, tuple[float, ...]], ...]
    histories: tuple[CovariateHistory, ...]
    unit_shift: float = 0.0
    family = "cumulative_exposure"

    def __post_init__(self):
        effects = tuple((str(n), tuple(float(v) for v in p)) for n, p in self.effects)
        object.__setattr__(self, "effects", effects)
        object.__setattr__(self, "histories", tuple(self.histories))
        if len(effects) != len(self.histories):
            raise ValueError("one effect per covariate history required")
        for name, _ in effects:
            if name not in EFFECTS:
                raise ValueError(f"unknown effect {name!r}; known: {sorted(EFFECTS)}")
        for h in self.histories:
            if h.times[0] > 0:
                raise ValueError(f"history {h.name} starts after time 0")

    @property
    def t_max(self):
        return min(float(h.times[-1]) for h in self.histories)

    def _integral(self, h: CovariateHistory, name, params, t):
        f = EFFECTS[name]
        grid = h.times
        fv = f(h.values, params)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (fv[1:] + fv[:-1]) * np.diff(grid))])

        def from_start(u):
            # trapezoid on the grid plus the partial panel ending at u
            k = np.clip(np.searchsorted(grid, u, side="right") - 1, 0, grid.size - 1)
            fu = f(np.interp(u, grid, h.values), params)
            return cum[k] + 0.5 * (fv[k] + fu) * (u - grid[k])

        t = np.atleast_1d(np.asarray(t, float))
        return from_start(t) - from_start(np.zeros(1))

    def evaluate(self, t):
        _check_time(t)
        if np.max(t) > self.t_max:
            raise ValueError(f"evaluation time beyond covariate history (t_max = {self.t_max})")
        total = np.full(np.shape(np.atleast_1d(t)), self.beta0 + self.unit_shift)
        for h, (name, params) in zip(self.histories, self.effects):
            total = total + self._integral(h, name, params, t)
        return total if np.ndim(t) else float(total[0])

    @property
    def direction(self):
        probe = self.evaluate(np.array([0.0, self.t_max]))
        return "decreasing" if probe[1] < probe[0] else "increasing"

    def to_dict(self):
        return {
            "family": self.family,
            "params": {
                "beta0": self.beta0,
                "effects": [[n, list(p)] for n, p in self.effects],
                "histories": [
                    {"unit_id": h.unit_id, "name": h.name, "times": h.times.tolist(),
                     "values": h.values.tolist()} for h in self.histories],
                "unit_shift": self.unit_shift,
            },
        }


FAMILIES = {cls.family: cls for cls in
            (LinearPath, ParisPath, LogLogisticPath, DeviceBPath, CoatingPath, CumulativeExposurePath)}


def path_from_dict(block: dict) -> _Path:
    """Inverse of ``path.to_dict()`` (the ``{"family": ..., "params": ...}`` block)."""
    try:
        cls = FAMILIES[block["family"]]
    except KeyError:
        raise ValueError(f"unknown path family {block.get('family')!r}") from None
    params = dict(block["params"])
    allowed = {f.name for f in fields(cls)}
    unknown = set(params) - allowed
    if unknown:
        raise ValueError(f"unknown parameter(s) for {cls.family}: {sorted(unknown)}")
    if cls is CumulativeExposurePath:
        params["histories"] = tuple(CovariateHistory(**h) for h in params["histories"])
        params["effects"] = tuple((n, tuple(p)) for n, p in params["effects"])
    return cls(**params)


def _check_time(t):
    if np.any(np.asarray(t) < 0):
        raise ValueError("time must be nonnegative")


def _bisect(g, lo, hi, rtol=1e-10):
    """Smallest root of increasing g on [lo, hi] with g(lo) < 0 <= g(hi)."""
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if g(mid) >= 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= rtol * hi:
            break
    return hi


def first_crossing_time(path: _Path, threshold: FailureThreshold) -> float | None:
    """First time the path reaches the threshold, or ``None`` if it never does.

    The path's direction must match ``threshold.direction``; a decreasing
    path with a decreasing threshold is handled as the negated problem.
    """
    if path.direction != threshold.direction:
        raise ValueError(
            f"{path.family} path is {path.direction} but the threshold is {threshold.direction}")
    s = threshold.sign
    level = threshold.value
    if s * path.evaluate(0.0) >= s * level:
        return 0.0
    t = path._crossing(level)
    if t is not NotImplemented:
        return None if t is None or not math.isfinite(t) else float(t)

    def g(u):
        return s * (path.evaluate(u) - level)

    t_max = path.t_max
    hi = min(1.0, t_max)
    while g(hi) < 0:
        if hi >= t_max or hi > 1e300:
            return None
        hi = min(2.0 * hi, t_max)
    return float(_bisect(g, 0.0, hi))
