"""Fit and curve result containers with their JSON/CSV serializations."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``; same inputs, same stream."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)))


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _num(x) -> str:
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else repr(float(x))


@dataclass
class FitResult:
    """Point estimates with inverse-observed-information covariance.

    ``estimates`` is ordered like the rows of ``covariance``. ``extra``
    carries model-specific metadata (family, restart history, ...).
    """

    estimates: dict
    covariance: np.ndarray
    loglik: float
    aic: float
    converged: bool
    iterations: int
    seed: int
    model: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        return list(self.estimates)

    @property
    def se(self) -> dict:
        d = np.sqrt(np.clip(np.diag(self.covariance), 0, None)) if self.covariance.size else []
        return dict(zip(self.estimates, (float(v) for v in d)))

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "estimates": {k: float(v) for k, v in self.estimates.items()},
            "se": self.se,
            "covariance": np.asarray(self.covariance, float).tolist(),
            "loglik": float(self.loglik),
            "aic": float(self.aic),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "seed": int(self.seed),
            "extra": _jsonable(self.extra),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False, allow_nan=True)

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        return cls(
            estimates=dict(d["estimates"]),
            covariance=np.asarray(d["covariance"], float).reshape(len(d["estimates"]), -1)
            if d["estimates"] else np.zeros((0, 0)),
            loglik=d["loglik"], aic=d["aic"], converged=d["converged"],
            iterations=d["iterations"], seed=d["seed"], model=d.get("model", ""),
            extra=d.get("extra", {}),
        )

    @classmethod
    def from_json(cls, text: str) -> "FitResult":
        return cls.from_dict(json.loads(text))


@dataclass
class CdfCurve:
    times: np.ndarray
    cdf: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    level: float | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        self.cdf = np.asarray(self.cdf, float)
        if self.lower is not None:
            self.lower = np.asarray(self.lower, float)
        if self.upper is not None:
            self.upper = np.asarray(self.upper, float)

    def to_csv(self, header=("time", "cdf", "lower", "upper")) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        lo = self.lower if self.lower is not None else [None] * self.times.size
        up = self.upper if self.upper is not None else [None] * self.times.size
        for row in zip(self.times, self.cdf, lo, up):
            w.writerow([_num(v) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CdfCurve":
        rows = list(csv.reader(io.StringIO(text)))[1:]
        col = lambda k: np.array([float(r[k]) if r[k] else np.nan for r in rows])
        lo, up = col(2), col(3)
        return cls(col(0), col(1), None if np.all(np.isnan(lo)) else lo,
                   None if np.all(np.isnan(up)) else up)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj
