import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from degrade.cli import build_parser, main
from degrade.results import FitResult

FIX = Path(__file__).parent / "fixtures"


def _cfg(tmp_path, name="c.json", **body):
    p = tmp_path / name
    p.write_text(json.dumps(body))
    return p


def _run(cmd, cfg, out, *extra):
    return main([cmd, "--config", str(cfg), "--out", str(out), *extra])


@pytest.fixture
def linear_cfg(tmp_path):
    shutil.copy(FIX / "linear_rmdt.csv", tmp_path)
    shutil.copy(FIX / "fit_linear.json", tmp_path)
    return tmp_path / "fit_linear.json"


def test_fit_fixture(linear_cfg, tmp_path, capsys):
    assert _run("fit", linear_cfg, tmp_path / "o") == 0
    fit = FitResult.from_json((tmp_path / "o" / "fit.json").read_text())
    assert fit.converged and fit.estimates["mu_slope"] == pytest.approx(0.5, abs=0.05)
    manifest = json.loads((tmp_path / "o" / "run.json").read_text())
    assert manifest["converged"] and manifest["artifacts"] == ["fit.json"]
    assert "converged=True" in capsys.readouterr().out


def test_conflicting_blocks(tmp_path, capsys):
    cfg = _cfg(tmp_path, seed=1, data={"rmdt": "x.csv"}, gpm={"family": "linear"}, sp={"process": "gamma"})
    assert _run("fit", cfg, tmp_path / "o") == 2
    err = capsys.readouterr().err
    assert "gpm" in err and "sp" in err and "conflicting" in err


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = _cfg(tmp_path, seed=1, gpm={"family": "linear"}, colour="red")
    assert _run("fit", cfg, tmp_path / "o") == 2
    assert "colour" in capsys.readouterr().err


def test_seed_required_for_stochastic(tmp_path, capsys):
    cfg = _cfg(tmp_path, data={"rmdt": "x.csv"}, gpm={"family": "linear"})
    assert _run("fit", cfg, tmp_path / "o") == 2
    assert "seed" in capsys.readouterr().err


def test_seed_range(linear_cfg, tmp_path):
    assert _run("fit", linear_cfg, tmp_path / "o", "--seed", str(2 ** 64)) == 2


def test_missing_data_file_is_invalid(tmp_path):
    cfg = _cfg(tmp_path, seed=1, data={"rmdt": "missing.csv"}, gpm={"family": "linear"})
    assert _run("fit", cfg, tmp_path / "o") == 2


def test_command_mismatch(linear_cfg, tmp_path):
    assert _run("simulate", linear_cfg, tmp_path / "o") == 2


def test_km_no_seed_needed(tmp_path):
    (tmp_path / "d.csv").write_text("unit_id,time,response\n" + "".join(
        f"U{i},{t},{0.1 * (i + 1) * t}\n" for i in range(8) for t in range(1, 6)))
    cfg = _cfg(tmp_path, data={"rmdt": "d.csv"}, threshold={"value": 1.0})
    assert _run("km", cfg, tmp_path / "o") == 0
    lines = (tmp_path / "o" / "band.csv").read_text().splitlines()
    assert lines[0] == "time,km,lower,upper"
    assert (tmp_path / "o" / "km.csv").read_text().startswith("time,cdf,lower,upper")


def test_simulate_then_fit_sp(tmp_path):
    sim = _cfg(tmp_path, "sim.json", seed=5, sp={"process": "gamma"},
               simulate={"truth": {"alpha1": 1.2, "alpha2": 2.0, "sigma": 0.3}, "units": 30,
                         "times": {"start": 0, "stop": 10, "num": 11}})
    assert _run("simulate", sim, tmp_path / "s") == 0
    fit = _cfg(tmp_path, "fit.json", seed=5, sp={"process": "gamma"},
               data={"rmdt": "s/data.csv"}, threshold={"value": 3.0},
               options={"times": [1, 2, 5, 10]})
    assert _run("predict-cdf", fit, tmp_path / "p") == 0
    cdf = np.loadtxt(tmp_path / "p" / "cdf.csv", delimiter=",", skiprows=1, usecols=(0, 1))
    assert np.all(np.diff(cdf[:, 1]) >= 0)


def test_ti_requires_addt(linear_cfg, tmp_path):
    cfg = json.loads(linear_cfg.read_text())
    cfg.pop("command")
    p = _cfg(tmp_path, "ti.json", **cfg)
    assert _run("ti", p, tmp_path / "o") == 2


def test_nonconvergence_exit_3(tmp_path):
    (tmp_path / "d.csv").write_text("unit_id,time,response\n" + "".join(
        f"U{i},{t},{0.1 * t + 0.01 * ((i * 7 + t * 3) % 5)}\n" for i in range(5) for t in range(1, 5)))
    cfg = _cfg(tmp_path, seed=1, data={"rmdt": "d.csv"},
               gpm={"family": "linear", "random_params": ["intercept", "slope"]},
               options={"optimizer": {"restarts": 1, "maxiter": 1, "polish": False}})
    code = _run("fit", cfg, tmp_path / "o")
    assert code == 3
    assert json.loads((tmp_path / "o" / "run.json").read_text())["converged"] is False
    assert (tmp_path / "o" / "fit.json").exists()


def test_threads_env_fallback(linear_cfg, tmp_path, monkeypatch):
    monkeypatch.setenv("DEGRADE_THREADS", "zero")
    assert _run("fit", linear_cfg, tmp_path / "o") == 2
    monkeypatch.setenv("DEGRADE_THREADS", "2")
    assert _run("fit", linear_cfg, tmp_path / "o") == 0


def test_parser_commands():
    p = build_parser()
    for c in ("fit", "predict-cdf", "rul", "ti", "km", "simulate"):
        assert p.parse_args([c, "--config", "x"]).command == c
    with pytest.raises(SystemExit):
        p.parse_args(["plot", "--config", "x"])
