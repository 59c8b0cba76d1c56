import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from degrade.data import (AddtDataset, FailureThreshold, RmdtDataset, SchemaError, UnitSeries,
                          ValidationError, arrhenius_transform, canonicalize_direction, load_addt,
                          load_covariates, load_rmdt, rmdt_from_arrays, write_addt, write_rmdt)


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_rmdt_single_unit(tmp_path):
    p = _write(tmp_path, "a.csv", "unit_id,time,response\nA,0,1.0\nA,1,1.5\nA,2,2.0\n")
    d = load_rmdt(p)
    assert len(d) == 1 and len(d["A"]) == 3


def test_load_rmdt_interleaved_sorted(tmp_path):
    p = _write(tmp_path, "a.csv", "unit_id,time,response\nA,2,3\nB,1,1\nA,1,2\nB,0,0\n")
    d = load_rmdt(p)
    assert d.unit_ids == ["A", "B"]
    assert np.array_equal(d["A"].times, [1, 2]) and np.array_equal(d["B"].times, [0, 1])


def test_load_rmdt_missing_response(tmp_path):
    p = _write(tmp_path, "a.csv", "unit_id,time\nA,0\n")
    with pytest.raises(SchemaError, match="response"):
        load_rmdt(p)


def test_load_rmdt_duplicate_times_names_unit(tmp_path):
    p = _write(tmp_path, "a.csv", "unit_id,time,response\nQ7,1,0\nQ7,1,2\n")
    with pytest.raises(ValidationError, match="Q7"):
        load_rmdt(p)


def test_load_rmdt_rejects_nonfinite(tmp_path):
    p = _write(tmp_path, "a.csv", "unit_id,time,response\nA,0,nan\n")
    with pytest.raises(ValidationError):
        load_rmdt(p)


def test_load_rmdt_drops_empty_response(tmp_path):
    p = _write(tmp_path, "a.csv", "unit_id,time,response\nA,0,1\nA,1,\nA,2,3\n")
    assert len(load_rmdt(p)["A"]) == 2


def test_schema_column_map_and_covariates(tmp_path):
    p = _write(tmp_path, "a.csv", "id,hours,y,temp\nA,0,1,150\nA,1,2,150\n")
    d = load_rmdt(p, {"unit_id": "id", "time": "hours", "response": "y"})
    assert d["A"].static_covariates == {"temp": 150.0}


def test_load_addt_baseline_and_singletons(tmp_path):
    rows = "".join(f"50,0,{4 + 0.01 * k}\n" for k in range(8)) + "60,100,3.9\n60,100,3.8\n"
    d = load_addt(_write(tmp_path, "b.csv", "condition_c,time,response\n" + rows))
    assert len(d.baseline_records) == 8
    assert len(d.batches()) == len(d)


def test_load_addt_negative_time(tmp_path):
    with pytest.raises(ValidationError):
        load_addt(_write(tmp_path, "b.csv", "condition_c,time,response\n50,-1,3\n"))


def test_addt_roundtrip(tmp_path):
    p = _write(tmp_path, "b.csv", "condition_c,time,response,batch\n50,0,4,a\n70,10,3.5,b\n70,10,3.4,b\n")
    d = load_addt(p)
    write_addt(d, tmp_path / "c.csv")
    assert load_addt(tmp_path / "c.csv") == d
    assert [len(b) for b in d.batches()] == [1, 2]


def test_arrhenius_values():
    assert arrhenius_transform(195.0) == pytest.approx(24.789, abs=5e-4)
    assert arrhenius_transform(80.0) == pytest.approx(32.861, abs=5e-4)
    with pytest.raises(ValueError):
        arrhenius_transform(-273.15)


@given(st.floats(-273.0, 1000.0), st.floats(-273.0, 1000.0))
def test_arrhenius_sign_and_monotone(a, b):
    assert arrhenius_transform(a, "negative") == -arrhenius_transform(a)
    if a < b:
        assert arrhenius_transform(a) >= arrhenius_transform(b)


def test_canonicalize():
    d = rmdt_from_arrays(["A", "A"], [1, 2], [-0.1, -0.3])
    thr = FailureThreshold(-0.45, "decreasing")
    c, t = canonicalize_direction(d, thr)
    assert np.allclose(c["A"].measurements, [0.1, 0.3]) and t.value == 0.45 and t.direction == "increasing"
    back, t2 = canonicalize_direction(c, FailureThreshold(0.45, "increasing").flipped())
    assert t2 == FailureThreshold(0.45, "increasing")
    same, t3 = canonicalize_direction(c, t)
    assert same is c and t3 is t


def test_canonicalize_involution_exact():
    d = rmdt_from_arrays(["A", "A", "B"], [1, 2, 1], [0.1234567, -3.3, 7.0])
    thr = FailureThreshold(2.0, "decreasing")
    c, t = canonicalize_direction(d, thr)
    back, _ = canonicalize_direction(c, t.flipped())
    assert back == d


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.floats(-1e6, 1e6, allow_nan=False)), min_size=1, max_size=20))
def test_rmdt_roundtrip(tmp_path_factory, rows):
    ids = [f"U{u}" for u, _ in rows]
    times = list(range(len(rows)))
    d = rmdt_from_arrays(ids, times, [y for _, y in rows])
    p = tmp_path_factory.mktemp("rt") / "d.csv"
    write_rmdt(d, p)
    assert load_rmdt(p) == d


def test_unit_series_validation():
    with pytest.raises(ValidationError):
        UnitSeries("A", [1, 1], [0, 0])
    with pytest.raises(ValidationError):
        UnitSeries("A", [1, 2], [0])
    with pytest.raises(ValidationError):
        RmdtDataset((UnitSeries("A", [1], [0]), UnitSeries("A", [2], [0])))


def test_covariate_history_loader(tmp_path):
    p = _write(tmp_path, "c.csv", "unit_id,time,name,value\nA,1,uv,2\nA,0,uv,1\n")
    (h,) = load_covariates(p)
    assert np.array_equal(h.times, [0, 1]) and np.array_equal(h.values, [1, 2])
