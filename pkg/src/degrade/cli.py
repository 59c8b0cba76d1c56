"""Command-line front end: ``degrade <command> --config run.json``.

One JSON config describes a run: data files, exactly one model block
(``gpm``, ``sp``, ``addt`` or ``bayes``), the threshold, options and the
seed. ``--seed`` and ``--out`` override the config. Exit status is 0 on
success, 2 on invalid input and 3 when a fit does not converge (outputs
are still written, flagged ``"converged": false``).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import addt as addt_mod
from . import bayes, gpm, nonparam, sp
from .data import (FailureThreshold, RmdtDataset, SchemaError, UnitSeries, ValidationError,
                   arrhenius_transform, load_addt, load_rmdt, write_addt, write_rmdt)
from .optim import OptimizerOptions
from .results import CdfCurve, FitResult, atomic_write_text

logger = logging.getLogger("degrade")

COMMANDS = ("fit", "predict-cdf", "rul", "ti", "km", "simulate")
MODEL_BLOCKS = ("gpm", "sp", "addt", "bayes")
EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 2, 3

_num = {"type": "number"}
_grid = {"oneOf": [
    {"type": "array", "items": _num, "minItems": 1},
    {"type": "object", "additionalProperties": False, "required": ["start", "stop", "num"],
     "properties": {"start": _num, "stop": _num, "num": {"type": "integer", "minimum": 1}}},
]}


def _obj(props, required=()):
    return {"type": "object", "additionalProperties": False, "properties": props,
            "required": list(required)}


SCHEMA = _obj({
    "command": {"enum": list(COMMANDS)},
    "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
    "data": _obj({
        "rmdt": {"type": "string"}, "addt": {"type": "string"},
        "schema": {"type": "object", "additionalProperties": {"type": "string"}},
        "sign": {"enum": ["positive", "negative"]},
        "time_unit": {"type": "string"},
    }),
    "fit_result": {"type": "string"},
    "gpm": _obj({
        "family": {"type": "string"},
        "random_params": {"type": "array", "items": {"type": "string"}},
        "accelerator": _obj({"covariate": {"type": "string"}, "sign": {"enum": ["positive", "negative"]},
                             "baseline_temp": _num}, ["covariate"]),
        "quad_order": {"type": "integer", "minimum": 1},
        "start": {"type": "object", "additionalProperties": _num},
    }, ["family"]),
    "sp": _obj({"process": {"enum": list(sp.PROCESSES)}, "alpha1": _num, "alpha2": _num,
                "sigma": _num}, ["process"]),
    "addt": _obj({"kind": {"enum": ["parametric", "semiparametric"]},
                  "n_knots": {"type": "integer", "minimum": 1}, "order": {"type": "integer", "minimum": 1},
                  "bootstrap": {"type": "integer", "minimum": 0}, "beta_fixed": _num}),
    "bayes": _obj({
        "model": {"enum": ["coating", "fatigue"]},
        "chains": {"type": "integer", "minimum": 1}, "iters": {"type": "integer", "minimum": 2},
        "warmup": {"type": "integer", "minimum": 0}, "seed": {"type": "integer", "minimum": 0},
        "joint": {"type": "boolean"},
        "covariates": {"type": "array", "items": {"type": "string"}},
        "initial": _num, "stress": _num,
        "priors": {"type": "object", "additionalProperties": {}},
    }, ["model"]),
    "threshold": _obj({"value": _num, "direction": {"enum": ["increasing", "decreasing"]}}, ["value"]),
    "options": _obj({
        "times": _grid, "draws": {"type": "integer", "minimum": 10000},
        "bootstrap": {"type": "integer", "minimum": 0}, "level": {"type": "number", "exclusiveMinimum": 0,
                                                                  "exclusiveMaximum": 1},
        "covariate": _num,
        "covariates": {"oneOf": [{"type": "object", "additionalProperties": _num},
                                 {"type": "array", "items": _num}]},
        "optimizer": _obj({"restarts": {"type": "integer", "minimum": 1}, "maxiter": {"type": "integer", "minimum": 1},
                           "jitter": _num, "gtol": _num, "fatol": _num, "polish": {"type": "boolean"}}),
        "unit": {"type": "string"}, "t0": _num, "s_grid": _grid, "new_unit": {"type": "boolean"},
        "target_hours": {"type": "number", "exclusiveMinimum": 0},
        "temp_range": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
        "curve_temps": _grid,
        "t_range": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
        "band_transform": {"enum": ["loglog", "arcsine", "linear"]},
    }),
    "simulate": _obj({
        "truth": {"type": "object", "additionalProperties": _num},
        "units": {"type": "integer", "minimum": 1}, "times": _grid,
        "covariates": {"type": "object", "additionalProperties": {"type": "array", "items": _num}},
        "temps": {"type": "array", "items": _num, "minItems": 1},
        "reps": {"type": "integer", "minimum": 1}, "baseline": {"type": "integer", "minimum": 0},
    }),
    "output": _obj({"dir": {"type": "string"}}),
})

# commands that draw random numbers and therefore need a seed
STOCHASTIC = {"fit", "predict-cdf", "rul", "ti", "simulate"}


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# config handling
# --------------------------------------------------------------------------

def load_config(path, command: str, seed=None, out=None) -> dict:
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config {where}: {exc.message}") from None
    if cfg.get("command", command) != command:
        raise ConfigError(f"config is for {cfg['command']!r}, not {command!r}")
    present = [b for b in MODEL_BLOCKS if b in cfg]
    if len(present) > 1:
        raise ConfigError(f"conflicting model blocks: {' and '.join(present)}; give exactly one")
    if seed is not None:
        cfg["seed"] = int(seed)
    if out is not None:
        cfg.setdefault("output", {})["dir"] = str(out)
    if command in STOCHASTIC and "seed" not in cfg:
        raise ConfigError(f"{command} needs a seed (config 'seed' or --seed)")
    base = Path(path).resolve().parent
    for key in ("rmdt", "addt"):
        if key in cfg.get("data", {}):
            cfg["data"][key] = str((base / cfg["data"][key]).resolve())
    if "fit_result" in cfg:
        cfg["fit_result"] = str((base / cfg["fit_result"]).resolve())
    cfg["_out"] = Path(cfg.get("output", {}).get("dir", "out"))
    return cfg


def _model_block(cfg) -> str:
    for b in MODEL_BLOCKS:
        if b in cfg:
            return b
    raise ConfigError("config needs one model block: gpm, sp, addt or bayes")


def _grid_values(spec, name="times"):
    if spec is None:
        raise ConfigError(f"options.{name} is required")
    if isinstance(spec, dict):
        return np.linspace(spec["start"], spec["stop"], spec["num"])
    return np.asarray(spec, float)


def _threshold(cfg) -> FailureThreshold:
    if "threshold" not in cfg:
        raise ConfigError("threshold block is required")
    t = cfg["threshold"]
    return FailureThreshold(float(t["value"]), t.get("direction", "increasing"))


def _optimizer(cfg) -> OptimizerOptions:
    o = dict(cfg.get("options", {}).get("optimizer", {}))
    return OptimizerOptions(seed=int(cfg["seed"]) % 2 ** 32, **o)


def _rmdt(cfg) -> RmdtDataset:
    d = cfg.get("data", {})
    if "rmdt" not in d:
        raise ConfigError("data.rmdt is required")
    return load_rmdt(d["rmdt"], d.get("schema"), time_unit=d.get("time_unit", "time"))


def _addt(cfg):
    d = cfg.get("data", {})
    if "addt" not in d:
        raise ConfigError("data.addt is required")
    return load_addt(d["addt"], d.get("schema"), sign=d.get("sign", "negative"))


def _gpm_spec(block) -> gpm.GpmModelSpec:
    return gpm.GpmModelSpec.from_dict({k: v for k, v in block.items() if k != "start"})


def _bayes_spec(block):
    pri = dict(block.get("priors", {}))
    if block["model"] == "coating":
        return bayes.CoatingModelSpec(tuple(block.get("covariates", ())), **pri)
    kw = {k: block[k] for k in ("initial", "stress") if k in block}
    for k in ("mu1_prior", "mu2_prior"):
        if k in pri:
            pri[k] = tuple(pri[k])
    return bayes.FatigueModelSpec(**kw, **pri)


# --------------------------------------------------------------------------
# pipelines
# --------------------------------------------------------------------------

class Run:
    def __init__(self, cfg: dict, threads: int):
        self.cfg = cfg
        self.threads = threads
        self.out = cfg["_out"]
        self.opt = cfg.get("options", {})
        self.written: list[Path] = []
        self.converged = True

    def write(self, name: str, text: str):
        p = self.out / name
        atomic_write_text(p, text)
        self.written.append(p)

    # -- fitting ---------------------------------------------------------

    def fit_model(self):
        """Fit (or load) the configured model; writes fit.json."""
        cfg = self.cfg
        block = _model_block(cfg)
        if "fit_result" in cfg and block != "bayes":
            fit = FitResult.from_json(Path(cfg["fit_result"]).read_text(encoding="utf-8"))
            return block, fit
        seed = int(cfg["seed"])
        if block == "gpm":
            spec = _gpm_spec(cfg["gpm"])
            fit = gpm.fit_gpm(spec, _rmdt(cfg), _optimizer(cfg), start=cfg["gpm"].get("start"))
        elif block == "sp":
            spec = sp.SpModelSpec.from_dict(cfg["sp"])
            fit = sp.fit_sp(spec, _rmdt(cfg), _optimizer(cfg))
        elif block == "addt":
            tpl = addt_mod.AddtTemplate(**cfg["addt"])
            fit = addt_mod.fit_addt(tpl, _addt(cfg), _optimizer(cfg), n_jobs=self.threads)
        else:
            return block, self._mcmc(seed)
        self.converged &= bool(fit.converged)
        self.write("fit.json", fit.to_json() + "\n")
        return block, fit

    def _mcmc(self, seed):
        b = self.cfg["bayes"]
        spec = _bayes_spec(b)
        settings = bayes.McmcSettings(chains=b.get("chains", 4), iters=b.get("iters", 4000),
                                      warmup=b.get("warmup"), seed=b.get("seed", seed),
                                      n_jobs=self.threads, joint=b.get("joint"))
        samples = bayes.run_mcmc(spec, _rmdt(self.cfg), settings)
        diag = bayes.diagnostics(samples) if samples.n_chains >= 2 else {}
        rhat = max((d["rhat"] for d in diag.values()), default=float("nan"))
        ok = bool(diag) and rhat < 1.05 and not samples.extra["low_acceptance"]
        self.converged &= ok
        summary = {
            "model": f"bayes-{b['model']}", "estimates": samples.median(),
            "diagnostics": diag, "max_rhat": rhat, "converged": ok, "seed": settings.seed,
            "acceptance_global": samples.extra["acceptance_global"],
            "low_acceptance": samples.extra["low_acceptance"],
        }
        self.write("fit.json", json.dumps(summary, indent=2) + "\n")
        self.write("draws.csv", samples.to_csv())
        return spec, samples

    # -- commands --------------------------------------------------------

    def cmd_fit(self):
        block, fit = self.fit_model()
        return f"fit: {block} converged={self.converged}"

    def cmd_predict_cdf(self):
        block, fit = self.fit_model()
        thr = _threshold(self.cfg)
        times = _grid_values(self.opt.get("times"))
        seed = int(self.cfg["seed"])
        level = self.opt.get("level", 0.90)
        if block == "gpm":
            spec = gpm.GpmModelSpec.from_dict(fit.extra["spec"]) if "spec" in fit.extra \
                else _gpm_spec(self.cfg["gpm"])
            cov = self.opt.get("covariate")
            B = self.opt.get("bootstrap", 0)
            if B:
                curve = gpm.bootstrap_ci(fit, spec, _rmdt(self.cfg), thr, times, B=B, level=level, seed=seed,
                                         covariate=cov, options=_optimizer(self.cfg), n_jobs=self.threads)
            else:
                curve = gpm.failure_cdf_mc(fit, spec, thr, times, draws=self.opt.get("draws", 100_000),
                                           seed=seed, covariate=cov)
        elif block == "sp":
            spec = sp.SpModelSpec(self.cfg["sp"]["process"]).with_params(
                fit.estimates["alpha1"], fit.estimates["alpha2"], fit.estimates["sigma"])
            curve = sp.sp_failure_cdf(spec, thr, times)
        elif block == "addt":
            temp = self.opt.get("covariate")
            if temp is None:
                raise ConfigError("options.covariate (temperature in C) is required for ADDT prediction")
            curve = addt_mod.addt_failure_cdf(fit, thr.value, arrhenius_transform(temp, "negative"), times)
        else:
            spec, samples = fit
            if isinstance(spec, bayes.CoatingModelSpec):
                curve = bayes.posterior_cdf(samples, spec, self.opt.get("covariates"), thr, times,
                                            level=self.opt.get("level", 0.95))
            else:
                T = bayes.cycles_to_threshold(samples, spec, thr.value, seed=seed)
                T = T[~np.isnan(T)]
                curve = CdfCurve(times, (T[None, :] <= times[:, None]).mean(axis=1))
        self.write("cdf.csv", curve.to_csv())
        return f"predict-cdf: {block} {times.size} times converged={self.converged}"

    def cmd_rul(self):
        if _model_block(self.cfg) != "bayes":
            raise ConfigError("rul needs a bayes model block")
        _, (spec, samples) = self.fit_model()
        thr = _threshold(self.cfg)
        if "t0" not in self.opt:
            raise ConfigError("options.t0 is required")
        curve = bayes.rul_distribution(samples, spec, self.opt.get("unit"), float(self.opt["t0"]),
                                       _grid_values(self.opt.get("s_grid"), "s_grid"), thr,
                                       covariates=self.opt.get("covariates"), seed=int(self.cfg["seed"]))
        self.write("rul.csv", curve.to_csv())
        return f"rul: unit={self.opt.get('unit')} used={curve.extra['used']} excluded={curve.extra['excluded']}"

    def cmd_ti(self):
        if _model_block(self.cfg) != "addt":
            raise ConfigError("ti needs an addt model block")
        _, fit = self.fit_model()
        thr = _threshold(self.cfg)
        kw = {}
        if "temp_range" in self.opt:
            kw["temp_range"] = tuple(self.opt["temp_range"])
        if "curve_temps" in self.opt:
            kw["curve_temps"] = _grid_values(self.opt["curve_temps"], "curve_temps")
        res = addt_mod.thermal_index(fit, thr.value, self.opt.get("target_hours", 1e5), **kw)
        self.write("ti.json", res.to_json() + "\n")
        self.write("mtf.csv", res.curve_csv())
        return f"ti: {res.method} TI={res.ti_celsius:.2f} C converged={self.converged}"

    def cmd_km(self):
        events = nonparam.extract_soft_failures(_rmdt(self.cfg), _threshold(self.cfg))
        km = nonparam.kaplan_meier(events)
        self.write("km.csv", km.to_csv())
        nfail = sum(f for _, f in events)
        msg = f"km: {len(events)} units, {nfail} failures"
        if nfail:
            tr = self.opt.get("t_range")
            band = nonparam.nair_scb(events, self.opt.get("level", 0.95), tuple(tr) if tr else None,
                                     self.opt.get("band_transform", "loglog"))
            self.write("band.csv", band.to_csv())
            msg += f", band critical value {band.critical_value:.4f}"
        return msg

    def cmd_simulate(self):
        cfg = self.cfg
        sim = cfg.get("simulate")
        if sim is None:
            raise ConfigError("simulate block is required")
        block = _model_block(cfg)
        seed = int(cfg["seed"])
        if block == "gpm":
            spec = _gpm_spec(cfg["gpm"])
            n = sim.get("units", 10)
            times = _grid_values(sim.get("times"))
            covs = {k: np.asarray(v, float) for k, v in sim.get("covariates", {}).items()}
            for k, v in covs.items():
                if v.size != n:
                    raise ConfigError(f"simulate.covariates.{k} needs {n} values")
            try:
                data = gpm.simulate_rmdt(spec, sim.get("truth", {}), [times] * n, seed=seed, covariates=covs)
            except KeyError as exc:
                raise ConfigError(f"simulate.truth is missing {exc}") from None
            self._write_rmdt(data)
            return f"simulate: gpm {n} units"
        if block == "sp":
            spec = sp.SpModelSpec.from_dict({**cfg["sp"], **sim.get("truth", {})})
            n = sim.get("units", 10)
            grid = _grid_values(sim.get("times"))
            Y = sp.simulate_sp_paths(spec, grid, n, seed=seed)
            units = tuple(UnitSeries(f"U{i + 1:03d}", grid, Y[i]) for i in range(n))
            self._write_rmdt(RmdtDataset(units))
            return f"simulate: sp {spec.process} {n} units"
        if block == "addt":
            truth = sim.get("truth", {})
            try:
                model = addt_mod.AddtParametricModel(**truth)
            except TypeError as exc:
                raise ConfigError(f"simulate.truth: {exc}") from None
            if "temps" not in sim:
                raise ConfigError("simulate.temps is required")
            data = addt_mod.simulate_addt(model, sim["temps"], _grid_values(sim.get("times")),
                                          sim.get("reps", 4), seed=seed, baseline=sim.get("baseline", 0))
            tmp = self.out / ".data.csv.tmp"
            tmp.parent.mkdir(parents=True, exist_ok=True)
            write_addt(data, tmp)
            os.replace(tmp, self.out / "data.csv")
            self.written.append(self.out / "data.csv")
            return f"simulate: addt {len(data)} records"
        raise ConfigError("simulate supports gpm, sp and addt blocks")

    def _write_rmdt(self, data):
        self.out.mkdir(parents=True, exist_ok=True)
        tmp = self.out / ".data.csv.tmp"
        write_rmdt(data, tmp)
        os.replace(tmp, self.out / "data.csv")
        self.written.append(self.out / "data.csv")


def _threads(arg) -> int:
    if arg is not None:
        return max(1, int(arg))
    env = os.environ.get("DEGRADE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"DEGRADE_THREADS must be an integer, got {env!r}") from None
    return 1


def run(command: str, config_path, seed=None, out=None, threads=None) -> int:
    """Execute one command; returns the exit status."""
    try:
        cfg = load_config(config_path, command, seed, out)
        job = Run(cfg, _threads(threads))
        msg = getattr(job, "cmd_" + command.replace("-", "_"))()
        # the manifest flags every artifact of the run, CSVs included
        job.write("run.json", json.dumps({
            "command": command, "seed": cfg.get("seed"), "converged": bool(job.converged),
            "artifacts": sorted(p.name for p in job.written),
        }, indent=2) + "\n")
    except (ConfigError, ValidationError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, KeyError, TypeError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(msg)
    if not job.converged:
        print("warning: fit did not converge; outputs carry converged=false", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="degrade", description="Degradation modeling runs from a JSON config.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory (default from config, else ./out)")
    p.add_argument("--threads", type=int, help="worker processes; falls back to $DEGRADE_THREADS, then 1")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_INVALID
    return run(args.command, args.config, args.seed, args.out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
