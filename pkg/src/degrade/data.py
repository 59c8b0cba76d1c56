"""Dataset containers, CSV ingestion and stress transforms.

All containers are frozen dataclasses holding numpy arrays; treat them as
read-only after construction.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

KELVIN_OFFSET = 273.15
EV_CONSTANT = 11605.0  # 1 / Boltzmann constant in K/eV


class SchemaError(ValueError):
    """A required column is missing or a header is malformed."""


class ValidationError(ValueError):
    """Parsed values violate a container invariant."""


@dataclass(frozen=True)
class FailureThreshold:
    """Soft-failure level together with the direction of degradation."""

    value: float
    direction: str = "increasing"

    def __post_init__(self):
        if self.direction not in ("increasing", "decreasing"):
            raise ValueError(f"direction must be 'increasing' or 'decreasing', got {self.direction!r}")
        if not math.isfinite(self.value):
            raise ValueError("threshold value must be finite")

    @property
    def sign(self) -> float:
        """+1 when failure means reaching the level from below, -1 otherwise."""
        return 1.0 if self.direction == "increasing" else -1.0

    def flipped(self) -> "FailureThreshold":
        other = "decreasing" if self.direction == "increasing" else "increasing"
        return FailureThreshold(-self.value, other)


@dataclass(frozen=True, eq=False)
class UnitSeries:
    unit_id: str
    times: np.ndarray
    measurements: np.ndarray
    static_covariates: Mapping[str, float] = field(default_factory=dict)
    start_time: float | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        y = np.asarray(self.measurements, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "measurements", y)
        object.__setattr__(self, "static_covariates", dict(self.static_covariates))
        if t.ndim != 1 or t.size < 1:
            raise ValidationError(f"unit {self.unit_id}: need at least one observation")
        if y.shape != t.shape:
            raise ValidationError(f"unit {self.unit_id}: times and measurements differ in length")
        if np.any(np.diff(t) <= 0):
            raise ValidationError(f"unit {self.unit_id}: times must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise ValidationError(f"unit {self.unit_id}: non-finite values")

    def __len__(self):
        return self.times.size

    def __eq__(self, other):
        if not isinstance(other, UnitSeries):
            return NotImplemented
        return (
            self.unit_id == other.unit_id
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.measurements, other.measurements)
            and self.static_covariates == other.static_covariates
            and self.start_time == other.start_time
        )


@dataclass(frozen=True)
class RmdtDataset:
    units: tuple[UnitSeries, ...]
    time_unit: str = "time"
    response_unit: str = "response"

    def __post_init__(self):
        units = tuple(self.units)
        object.__setattr__(self, "units", units)
        if not units:
            raise ValidationError("dataset has no units")
        ids = [u.unit_id for u in units]
        if len(set(ids)) != len(ids):
            raise ValidationError("unit ids must be unique")

    def __len__(self):
        return len(self.units)

    def __iter__(self):
        return iter(self.units)

    def __getitem__(self, unit_id: str) -> UnitSeries:
        for u in self.units:
            if u.unit_id == unit_id:
                return u
        raise KeyError(unit_id)

    @property
    def unit_ids(self) -> list[str]:
        return [u.unit_id for u in self.units]

    @property
    def n_obs(self) -> int:
        return sum(len(u) for u in self.units)

    def covariate(self, name: str) -> np.ndarray:
        """Per-unit values of a static covariate."""
        try:
            return np.array([u.static_covariates[name] for u in self.units], dtype=float)
        except KeyError:
            raise KeyError(f"covariate {name!r} missing on at least one unit") from None

    def padded(self):
        """Return (times, responses, mask) arrays of shape (n_units, max_m).

        Padding cells carry time 0, response 0 and mask False.
        """
        m = max(len(u) for u in self.units)
        n = len(self.units)
        t = np.zeros((n, m))
        y = np.zeros((n, m))
        mask = np.zeros((n, m), dtype=bool)
        for i, u in enumerate(self.units):
            k = len(u)
            t[i, :k] = u.times
            y[i, :k] = u.measurements
            mask[i, :k] = True
        return t, y, mask


@dataclass(frozen=True)
class AddtRecord:
    condition: float
    raw_condition: float
    time: float
    batch_id: str
    response: float

    def __post_init__(self):
        if self.time < 0:
            raise ValidationError(f"negative time {self.time}")


@dataclass(frozen=True)
class AddtDataset:
    records: tuple[AddtRecord, ...]

    def __post_init__(self):
        recs = tuple(self.records)
        object.__setattr__(self, "records", recs)
        if not recs:
            raise ValidationError("ADDT dataset is empty")

    def __len__(self):
        return len(self.records)

    @property
    def baseline_records(self) -> tuple[AddtRecord, ...]:
        return tuple(r for r in self.records if r.time == 0)

    def arrays(self):
        """(condition, raw_condition, time, response) as float arrays."""
        c = np.array([r.condition for r in self.records])
        raw = np.array([r.raw_condition for r in self.records])
        t = np.array([r.time for r in self.records])
        y = np.array([r.response for r in self.records])
        return c, raw, t, y

    def batches(self) -> list[np.ndarray]:
        """Index arrays of records sharing (condition, time, batch)."""
        groups: dict[tuple, list[int]] = {}
        for k, r in enumerate(self.records):
            groups.setdefault((r.condition, r.time, r.batch_id), []).append(k)
        return [np.array(v) for v in groups.values()]


@dataclass(frozen=True, eq=False)
class CovariateHistory:
    unit_id: str
    name: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        if t.shape != v.shape or t.ndim != 1 or t.size < 1:
            raise ValidationError(f"history {self.unit_id}/{self.name}: times and values differ in length")
        if np.any(np.diff(t) <= 0):
            raise ValidationError(f"history {self.unit_id}/{self.name}: times must be strictly increasing")


def arrhenius_transform(temp_c, sign: str = "positive"):
    """Arrhenius-transformed temperature ``±11605 / (temp_c + 273.15)``.

    ``sign="negative"`` gives the convention where larger values mean more
    stress. Works elementwise on arrays.
    """
    if sign not in ("positive", "negative"):
        raise ValueError(f"sign must be 'positive' or 'negative', got {sign!r}")
    temp = np.asarray(temp_c, dtype=float)
    if np.any(temp <= -KELVIN_OFFSET):
        raise ValueError("temperature at or below absolute zero")
    x = EV_CONSTANT / (temp + KELVIN_OFFSET)
    if sign == "negative":
        x = -x
    return float(x) if np.ndim(x) == 0 else x


def canonicalize_direction(data, threshold: FailureThreshold):
    """Negate responses and threshold when degradation is decreasing.

    Returns ``(data, threshold)`` with ``threshold.direction == "increasing"``.
    Applying it to the output with the flipped threshold restores the input.
    """
    if threshold.direction == "increasing":
        return data, threshold
    if isinstance(data, RmdtDataset):
        units = tuple(replace(u, measurements=-u.measurements) for u in data.units)
        out = replace(data, units=units)
    elif isinstance(data, AddtDataset):
        out = AddtDataset(tuple(replace(r, response=-r.response) for r in data.records))
    else:
        raise TypeError(f"cannot canonicalize {type(data).__name__}")
    return out, threshold.flipped()


# --------------------------------------------------------------------------
# CSV readers / writers
# --------------------------------------------------------------------------

def _parse_float(token: str, where: str) -> float | None:
    token = token.strip()
    if token == "":
        return None
    try:
        value = float(token)
    except ValueError:
        raise ValidationError(f"{where}: cannot parse {token!r} as a number") from None
    if not math.isfinite(value):
        raise ValidationError(f"{where}: non-finite token {token!r}")
    return value


def _read_rows(path, required: Iterable[str], schema: Mapping[str, str] | None):
    """Yield (line number, row dict keyed by canonical names)."""
    schema = dict(schema or {})
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty file")
        header = [h.strip() for h in reader.fieldnames]
        # schema maps canonical name -> column name in the file
        rename = {schema.get(c, c): c for c in required}
        missing = [c for c, col in ((c, schema.get(c, c)) for c in required) if col not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        for lineno, row in enumerate(reader, start=2):
            row = {k.strip(): (v if v is not None else "") for k, v in row.items() if k is not None}
            yield lineno, {rename.get(k, k): v for k, v in row.items()}, header, rename


def load_rmdt(path, schema: Mapping[str, str] | None = None, *, time_unit="time",
              response_unit="response") -> RmdtDataset:
    """Read a long-format RMDT CSV (``unit_id,time,response[,covariates...]``).

    ``schema`` maps the canonical names ``unit_id``, ``time`` and
    ``response`` to the column names actually used in the file. Remaining
    columns become static covariates; a ``start_time`` column, if present,
    sets the unit's field start offset. Rows with an empty response are
    dropped.
    """
    required = ("unit_id", "time", "response")
    rows: dict[str, list] = {}
    covars: dict[str, dict[str, float]] = {}
    starts: dict[str, float | None] = {}
    dropped = 0
    for lineno, row, header, rename in _read_rows(path, required, schema):
        where = f"{path}:{lineno}"
        uid = row["unit_id"].strip()
        t = _parse_float(row["time"], where)
        if t is None:
            raise ValidationError(f"{where}: empty time")
        y = _parse_float(row["response"], where)
        if y is None:
            dropped += 1
            continue
        rows.setdefault(uid, []).append((t, y))
        extra = {k: v for k, v in row.items() if k not in required}
        if "start_time" in extra:
            starts[uid] = _parse_float(extra.pop("start_time"), where)
        cov = {k: _parse_float(v, where) for k, v in extra.items()}
        cov = {k: v for k, v in cov.items() if v is not None}
        prev = covars.setdefault(uid, cov)
        if prev != cov:
            raise ValidationError(f"{where}: static covariates change within unit {uid}")
    if dropped:
        logger.info("dropped %d row(s) with empty response from %s", dropped, path)
    units = []
    for uid, obs in rows.items():
        obs.sort(key=lambda p: p[0])
        t = np.array([p[0] for p in obs])
        if np.any(np.diff(t) == 0):
            raise ValidationError(f"unit {uid}: duplicate measurement times")
        units.append(UnitSeries(uid, t, np.array([p[1] for p in obs]), covars.get(uid, {}),
                                starts.get(uid)))
    return RmdtDataset(tuple(units), time_unit, response_unit)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_rmdt(data: RmdtDataset, path) -> None:
    """Write ``data`` in the RMDT CSV layout read by :func:`load_rmdt`."""
    cov_names = sorted({k for u in data.units for k in u.static_covariates})
    has_start = any(u.start_time is not None for u in data.units)
    header = ["unit_id", "time", "response"] + cov_names + (["start_time"] if has_start else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for u in data.units:
            tail = [_fmt(u.static_covariates[c]) if c in u.static_covariates else "" for c in cov_names]
            if has_start:
                tail.append("" if u.start_time is None else _fmt(u.start_time))
            for t, y in zip(u.times, u.measurements):
                w.writerow([u.unit_id, _fmt(t), _fmt(y)] + tail)


def load_addt(path, schema: Mapping[str, str] | None = None, *, sign: str = "negative") -> AddtDataset:
    """Read an ADDT CSV (``condition_c,time,response[,batch]``).

    ``condition_c`` is the raw temperature in Celsius; the transformed
    stress is ``arrhenius_transform(condition_c, sign)``. Without a batch
    column every record is its own batch.
    """
    required = ("condition_c", "time", "response")
    records = []
    dropped = 0
    for lineno, row, header, rename in _read_rows(path, required, schema):
        where = f"{path}:{lineno}"
        temp = _parse_float(row["condition_c"], where)
        t = _parse_float(row["time"], where)
        y = _parse_float(row["response"], where)
        if temp is None or t is None:
            raise ValidationError(f"{where}: empty condition or time")
        if y is None:
            dropped += 1
            continue
        if t < 0:
            raise ValidationError(f"{where}: negative time {t}")
        batch = row.get("batch", "").strip() or f"row{lineno}"
        records.append(AddtRecord(arrhenius_transform(temp, sign), temp, t, batch, y))
    if dropped:
        logger.info("dropped %d row(s) with empty response from %s", dropped, path)
    return AddtDataset(tuple(records))


def write_addt(data: AddtDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["condition_c", "time", "response", "batch"])
        for r in data.records:
            w.writerow([_fmt(r.raw_condition), _fmt(r.time), _fmt(r.response), r.batch_id])


def load_covariates(path) -> list[CovariateHistory]:
    """Read a long covariate CSV (``unit_id,time,name,value``)."""
    required = ("unit_id", "time", "name", "value")
    series: dict[tuple[str, str], list] = {}
    for lineno, row, header, rename in _read_rows(path, required, None):
        where = f"{path}:{lineno}"
        t = _parse_float(row["time"], where)
        v = _parse_float(row["value"], where)
        if t is None or v is None:
            raise ValidationError(f"{where}: empty time or value")
        series.setdefault((row["unit_id"].strip(), row["name"].strip()), []).append((t, v))
    out = []
    for (uid, name), obs in series.items():
        obs.sort(key=lambda p: p[0])
        out.append(CovariateHistory(uid, name, [p[0] for p in obs], [p[1] for p in obs]))
    return out


def rmdt_from_arrays(unit_ids: Sequence, times: Sequence, responses: Sequence,
                     covariates: Mapping[str, Sequence] | None = None) -> RmdtDataset:
    """Build a dataset from flat long-format arrays (one entry per observation)."""
    unit_ids = [str(u) for u in unit_ids]
    times = np.asarray(times, float)
    responses = np.asarray(responses, float)
    covariates = {k: np.asarray(v, float) for k, v in (covariates or {}).items()}
    order: dict[str, list[int]] = {}
    for k, u in enumerate(unit_ids):
        order.setdefault(u, []).append(k)
    units = []
    for u, idx in order.items():
        idx = np.array(idx)
        idx = idx[np.argsort(times[idx], kind="stable")]
        cov = {name: float(v[idx[0]]) for name, v in covariates.items()}
        units.append(UnitSeries(u, times[idx], responses[idx], cov))
    return RmdtDataset(tuple(units))
