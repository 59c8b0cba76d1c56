"""Kaplan-Meier estimate and equal-precision simultaneous bands.

Soft-failure times come from the observed paths: the first threshold
crossing, linearly interpolated between the bracketing readings. Units
that never cross are right-censored at their last reading.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special
from scipy.stats import norm

from .data import FailureThreshold, RmdtDataset, canonicalize_direction
from .results import CdfCurve


def extract_soft_failures(data: RmdtDataset, threshold) -> list[tuple[float, bool]]:
    """Per-unit ``(time, failed)`` from observed paths."""
    if not isinstance(threshold, FailureThreshold):
        threshold = FailureThreshold(float(threshold))
    data, threshold = canonicalize_direction(data, threshold)
    d0 = threshold.value
    out = []
    for u in data.units:
        t, y = u.times, u.measurements
        hit = np.flatnonzero(y >= d0)
        if hit.size == 0:
            out.append((float(t[-1]), False))
            continue
        k = int(hit[0])
        if k == 0:
            out.append((float(t[0]), True))
            continue
        t0, t1, y0, y1 = t[k - 1], t[k], y[k - 1], y[k]
        out.append((float(t0 + (d0 - y0) * (t1 - t0) / (y1 - y0)), True))
    return out


@dataclass
class EventTable:
    times: np.ndarray
    failures: np.ndarray
    at_risk: np.ndarray
    censored: np.ndarray

    @classmethod
    def from_events(cls, events) -> "EventTable":
        ev = list(events)
        if not ev:
            raise ValueError("no events")
        t = np.array([e[0] for e in ev], float)
        f = np.array([bool(e[1]) for e in ev])
        times = np.unique(t)
        idx = np.searchsorted(times, t)
        d = np.bincount(idx, f.astype(float), times.size).astype(int)
        c = np.bincount(idx, (~f).astype(float), times.size).astype(int)
        # failures at a tied time are counted before the censorings there
        at_risk = t.size - np.r_[0, np.cumsum(d + c)[:-1]]
        return cls(times, d, at_risk, c)


def _surv(tab: EventTable):
    Y, d = tab.at_risk.astype(float), tab.failures.astype(float)
    S = np.cumprod(1.0 - d / Y)
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(d > 0, d / (Y * (Y - d)), 0.0)
    gw = np.cumsum(term)
    return S, gw


def kaplan_meier(events) -> CdfCurve:
    """Product-limit estimate, returned as ``1 - S`` at the distinct times.

    ``extra`` holds the survival values and the Greenwood variance.
    """
    tab = events if isinstance(events, EventTable) else EventTable.from_events(events)
    S, gw = _surv(tab)
    with np.errstate(invalid="ignore"):
        var = S ** 2 * gw
    return CdfCurve(tab.times, 1.0 - S, extra={"survival": S, "greenwood_var": var,
                                                "at_risk": tab.at_risk, "failures": tab.failures})


def ep_tail_probability(c: float, a: float, b: float) -> float:
    """Approximate ``P(sup_{a<=u<=b} |B0(u)| / sqrt(u(1-u)) > c)`` for a Brownian bridge."""
    phi = norm.pdf(c)
    return 4 * phi / c + phi * (c - 1 / c) * np.log(b * (1 - a) / (a * (1 - b)))


def ep_critical_value(a: float, b: float, level: float = 0.95) -> float:
    """Equal-precision critical value for variance-ratio range ``[a, b]``.

    Never below the pointwise normal quantile, so the band always contains
    the pointwise interval.
    """
    if not 0 < a < b < 1:
        raise ValueError(f"need 0 < a < b < 1, got a={a}, b={b}")
    alpha = 1.0 - level
    z = norm.ppf(1 - alpha / 2)
    f = lambda c: ep_tail_probability(c, a, b) - alpha
    if f(z) <= 0:
        return float(z)
    return float(optimize.brentq(f, z, 50.0, xtol=1e-12))


@dataclass
class SurvivalBand:
    times: np.ndarray
    km: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    critical_value: float
    var_range: tuple

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "km", "lower", "upper"])
        for row in zip(self.times, self.km, self.lower, self.upper):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def _band(s, g, c, transform):
    """Band around survival ``s`` with Greenwood sum ``g`` and critical value ``c``."""
    if transform == "linear":
        se = s * np.sqrt(g)
        return s - c * se, s + c * se
    if transform == "arcsine":
        with np.errstate(divide="ignore", invalid="ignore"):
            half = 0.5 * c * np.sqrt(g) * np.sqrt(s / (1 - s))
        half = np.where(s >= 1, 0.0, half)
        mid = np.arcsin(np.sqrt(s))
        lo = np.sin(np.maximum(0.0, mid - half)) ** 2
        hi = np.sin(np.minimum(np.pi / 2, mid + half)) ** 2
        return lo, hi
    if transform == "loglog":
        with np.errstate(divide="ignore", invalid="ignore"):
            theta = np.exp(c * np.sqrt(g) / np.log(s))
        theta = np.where(s >= 1, 1.0, theta)
        return s ** (1 / theta), s ** theta
    raise ValueError(f"unknown band transform {transform!r}")


def nair_scb(events, level: float = 0.95, t_range=None, transform: str = "loglog") -> SurvivalBand:
    """Equal-precision simultaneous band for the survival function.

    Parameters
    ----------
    events : sequence of (time, failed) or EventTable
    level : float
        Simultaneous coverage.
    t_range : (float, float), optional
        Band range. Defaults to first failure through the last time with
        finite Greenwood variance and positive survival.
    transform : {"loglog", "arcsine", "linear"}
        Scale on which the band is symmetric. ``"linear"`` is
        ``S +/- c * se``, which undercovers in samples of about a hundred;
        the log-minus-log and arcsine-square-root versions stay close to
        nominal there.

    Returns
    -------
    SurvivalBand
        Step values at ``t_L`` and every distinct time inside the range,
        band clipped to ``[0, 1]``.
    """
    tab = events if isinstance(events, EventTable) else EventTable.from_events(events)
    S, gw = _surv(tab)
    n = int(tab.at_risk[0])
    ok = np.isfinite(gw) & (S > 0)
    if t_range is None:
        fail_t = tab.times[tab.failures > 0]
        if fail_t.size == 0:
            raise ValueError("no failures: band undefined")
        t_range = (fail_t[0], tab.times[ok][-1])
    tL, tU = map(float, t_range)
    if not tL < tU:
        raise ValueError("t_range must be increasing")

    def at(t):
        k = np.searchsorted(tab.times, t, side="right") - 1
        if k < 0:
            return 1.0, 0.0
        return S[k], gw[k]

    s_lo, g_lo = at(tL)
    s_hi, g_hi = at(tU)
    if not (np.isfinite(g_hi) and s_hi > 0):
        raise ValueError("Greenwood variance not finite over the requested range")
    a = n * g_lo / (1 + n * g_lo)
    b = n * g_hi / (1 + n * g_hi)
    if not (a > 0 and b > a):
        raise ValueError("degenerate variance over range: no failures inside it")
    c = ep_critical_value(a, b, level)
    inside = (tab.times > tL) & (tab.times <= tU)
    times = np.r_[tL, tab.times[inside]]
    sv = np.array([at(t)[0] for t in times])
    gv = np.array([at(t)[1] for t in times])
    lo, hi = _band(sv, gv, c, transform)
    lower = np.clip(lo, 0.0, 1.0)
    upper = np.clip(hi, 0.0, 1.0)
    return SurvivalBand(times, sv, lower, upper, level, c, (float(a), float(b)))


def pointwise_band(events, times, level: float = 0.95, transform: str = "loglog"):
    """Pointwise Greenwood interval for ``S`` at ``times`` on the band's scale."""
    tab = events if isinstance(events, EventTable) else EventTable.from_events(events)
    S, gw = _surv(tab)
    k = np.searchsorted(tab.times, np.asarray(times, float), side="right") - 1
    s = np.where(k >= 0, S[np.maximum(k, 0)], 1.0)
    g = np.where(k >= 0, gw[np.maximum(k, 0)], 0.0)
    lo, hi = _band(s, g, special.ndtri(0.5 + level / 2), transform)
    return np.clip(lo, 0, 1), np.clip(hi, 0, 1)
