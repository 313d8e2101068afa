"""Command-line entry point: ``sdefit --config run.json [overrides]``.

The config is one JSON object::

    {
      "command": "simulate" | "estimate-drift" | "estimate-diffusion" | "experiment",
      "model": {"name": "ou1d", "params": {...}},
      "io": {"input": "record.csv", "output": "out/"},
      "simulate": {"epsilon": 0.02, "gap_exponent": 1.5, "substeps": 16,
                   "seed": 0, "clock": "original", "method": "auto"},
      "estimate": {"vartheta": null, "method": "auto", "time_scale": 1.0},
      "plan": {"kind": "clt", "epsilon_grid": [...], "gap_exponent": 1.5,
               "replications": 400, "estimator": "drift_linear", "seed_base": 0}
    }

Exit codes: 0 success, 2 configuration or validation error, 3 numerical
failure. The fully resolved config is written to ``<output>/resolved_config.json``.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys

import numpy as np

from .asymptotics import ou_coefficients
from .core import DiscreteRecord, ScalingRegime, eval_a
from .drift import PenaltySpec
from .estimators import AMLEDriftEstimator, QVDiffusionEstimator
from .exceptions import ConfigError, NumericalError, SDEFitError, ValidationError
from .experiment import ESTIMATORS, ExperimentPlan, run_clt, run_consistency
from .models import build_model
from .simulate import SimConfig, euler_maruyama, exact_ou

COMMANDS = ("simulate", "estimate-drift", "estimate-diffusion", "experiment")

SIM_DEFAULTS = {"epsilon": 0.02, "gap_exponent": 1.5, "substeps": 16, "seed": 0,
                "clock": "original", "method": "auto"}
EST_DEFAULTS = {"vartheta": None, "method": "auto", "time_scale": 1.0, "penalty": None,
                "tol": 1e-8, "max_iter": 50}
PLAN_DEFAULTS = {"kind": "clt", "epsilon_grid": [0.02, 0.005], "gap_exponent": 1.5,
                 "replications": 400, "estimator": "drift_linear", "seed_base": 0,
                 "use_exact_ou": True, "substeps": 16, "x0": None,
                 "allow_regime_violation": False, "oracle_vartheta": False,
                 "penalty": None, "fast_path": True, "bootstrap": 200, "stationary_n": 20000}


def _parser():
    p = argparse.ArgumentParser(prog="sdefit", description="Calibrate parametric SDEs from discrete data.")
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="override simulate.seed and plan.seed_base")
    p.add_argument("--out", help="override io.output")
    p.add_argument("--epsilon", type=float, help="override simulate.epsilon / plan.epsilon_grid")
    p.add_argument("--gap-exponent", type=float, help="override the gap exponent")
    p.add_argument("--replications", type=int, help="override plan.replications")
    p.add_argument("--threads", type=int, help="worker threads for experiments (default: all cores)")
    return p


def _section(cfg, key, defaults):
    block = cfg.get(key, {})
    if block is None:
        block = {}
    if not isinstance(block, dict):
        raise ConfigError(key, "must be a mapping")
    for k in block:
        if k not in defaults:
            raise ConfigError(f"{key}.{k}", "unknown key")
    out = dict(defaults)
    out.update(block)
    return out


def resolve(cfg, args):
    """Apply defaults and command-line overrides; returns a new dict."""
    if not isinstance(cfg, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    cfg = copy.deepcopy(cfg)
    for key in cfg:
        if key not in ("command", "model", "io", "simulate", "estimate", "plan", "threads"):
            raise ConfigError(key, "unknown top-level key")
    command = cfg.get("command")
    if command not in COMMANDS:
        raise ConfigError("command", f"must be one of {', '.join(COMMANDS)}")
    model = cfg.get("model")
    if not isinstance(model, dict) or "name" not in model:
        raise ConfigError("model.name", "model block with a name is required")
    for k in model:
        if k not in ("name", "params"):
            raise ConfigError(f"model.{k}", "unknown key")
    model.setdefault("params", {})
    io = _section(cfg, "io", {"input": None, "output": None})
    out = {"command": command, "model": model, "io": io}
    if command == "simulate":
        out["simulate"] = _section(cfg, "simulate", SIM_DEFAULTS)
    elif command.startswith("estimate"):
        out["estimate"] = _section(cfg, "estimate", EST_DEFAULTS)
    else:
        out["plan"] = _section(cfg, "plan", PLAN_DEFAULTS)
    threads = cfg.get("threads")
    if args.threads is not None:
        threads = args.threads
    if threads is None:
        threads = os.cpu_count() or 1
    if not isinstance(threads, int) or threads < 1:
        raise ConfigError("threads", "must be a positive integer")
    out["threads"] = threads
    if args.out is not None:
        io["output"] = args.out
    if args.seed is not None:
        if "simulate" in out:
            out["simulate"]["seed"] = args.seed
        if "plan" in out:
            out["plan"]["seed_base"] = args.seed
    if args.epsilon is not None:
        if "simulate" in out:
            out["simulate"]["epsilon"] = args.epsilon
        if "plan" in out:
            out["plan"]["epsilon_grid"] = [args.epsilon]
    if args.gap_exponent is not None:
        for key in ("simulate", "plan"):
            if key in out:
                out[key]["gap_exponent"] = args.gap_exponent
    if args.replications is not None and "plan" in out:
        out["plan"]["replications"] = args.replications
    if not io.get("output"):
        raise ConfigError("io.output", "an output directory is required (or pass --out)")
    return out


def _num(block, key, prefix, kind=float):
    try:
        return kind(block[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{prefix}.{key}", f"must be {kind.__name__}") from None


def _penalty(spec, key):
    if spec is None:
        return None
    if not isinstance(spec, dict):
        raise ConfigError(key, "must be a mapping with alpha and p")
    try:
        return PenaltySpec(float(spec.get("alpha", 1.0)), float(spec.get("p", 2.0)))
    except (TypeError, ValueError, ValidationError) as exc:
        raise ConfigError(key, str(exc)) from None


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, allow_nan=False)
        fh.write("\n")


def _cmd_simulate(cfg, model, theta0, x0, out_dir):
    s = cfg["simulate"]
    eps = _num(s, "epsilon", "simulate")
    gamma = _num(s, "gap_exponent", "simulate")
    try:
        regime = ScalingRegime.from_exponent(eps, gamma)
        sim = SimConfig(x0, regime, _num(s, "substeps", "simulate", int), _num(s, "seed", "simulate", int),
                        s["clock"])
    except (ValidationError, ValueError) as exc:
        raise ConfigError("simulate", str(exc)) from None
    method = s["method"]
    if method not in ("auto", "exact", "euler"):
        raise ConfigError("simulate.method", "must be auto, exact or euler")
    if method == "exact" or (method == "auto" and model.ou is not None):
        if model.ou is None:
            raise ConfigError("simulate.method", "exact simulation needs an OU model")
        g, H = ou_coefficients(model, theta0.mu)
        rec = exact_ou(g, H, eval_a(model, theta0.vartheta, np.zeros(model.dim_state)), sim)
    else:
        rec = euler_maruyama(model, theta0, sim)
    rec.to_csv(os.path.join(out_dir, "record.csv"))
    _write_json(os.path.join(out_dir, "simulation.json"),
                {"epsilon": regime.epsilon, "gap": regime.gap, "m": regime.m, "clock": s["clock"],
                 "time_scale": rec.time_scale})


def _load_record(cfg):
    path = cfg["io"].get("input")
    if not path:
        raise ConfigError("io.input", "an input CSV is required")
    if not os.path.isfile(path):
        raise ConfigError("io.input", f"file not found: {path}")
    ts = _num(cfg["estimate"], "time_scale", "estimate")
    return DiscreteRecord.from_csv(path, ts)


def _cmd_estimate_drift(cfg, model, theta0, x0, out_dir):
    e = cfg["estimate"]
    rec = _load_record(cfg)
    vt = e["vartheta"]
    if vt is not None:
        try:
            vt = np.atleast_2d(np.asarray(vt, dtype=float))
        except (TypeError, ValueError):
            raise ConfigError("estimate.vartheta", "must be a numeric matrix") from None
    est = AMLEDriftEstimator(model, vt, e["method"], _penalty(e["penalty"], "estimate.penalty"),
                             _num(e, "tol", "estimate"), _num(e, "max_iter", "estimate", int))
    est.fit(rec)
    out = est.fit_result_.to_dict()
    out["vartheta"] = est.vartheta_.tolist()
    out["method"] = est.method_
    _write_json(os.path.join(out_dir, "drift_fit.json"), out)


def _cmd_estimate_diffusion(cfg, model, theta0, x0, out_dir):
    rec = _load_record(cfg)
    est = QVDiffusionEstimator(model).fit(rec)
    _write_json(os.path.join(out_dir, "diffusion_fit.json"), est.fit_result_.to_dict())


def _cmd_experiment(cfg, model, theta0, x0, out_dir):
    p = cfg["plan"]
    if p["kind"] not in ("clt", "consistency"):
        raise ConfigError("plan.kind", "must be clt or consistency")
    if p["estimator"] not in ESTIMATORS:
        raise ConfigError("plan.estimator", f"must be one of {', '.join(ESTIMATORS)}")
    try:
        grid = [float(v) for v in p["epsilon_grid"]]
    except (TypeError, ValueError):
        raise ConfigError("plan.epsilon_grid", "must be a list of numbers") from None
    try:
        plan = ExperimentPlan(
            model, theta0, grid, _num(p, "gap_exponent", "plan"), _num(p, "replications", "plan", int),
            p["estimator"], _num(p, "seed_base", "plan", int), bool(p["use_exact_ou"]),
            _num(p, "substeps", "plan", int), p["x0"] if p["x0"] is not None else tuple(x0),
            bool(p["allow_regime_violation"]), bool(p["oracle_vartheta"]),
            _penalty(p["penalty"], "plan.penalty"), bool(p["fast_path"]), _num(p, "bootstrap", "plan", int),
            _num(p, "stationary_n", "plan", int), cfg["model"]["name"], cfg["model"]["params"])
        plan.check_regime(p["kind"])
    except ConfigError:
        raise
    except ValidationError as exc:
        raise ConfigError("plan", str(exc)) from None
    run = run_clt if p["kind"] == "clt" else run_consistency
    report = run(plan, threads=cfg["threads"])
    report.write(out_dir)


HANDLERS = {
    "simulate": _cmd_simulate,
    "estimate-drift": _cmd_estimate_drift,
    "estimate-diffusion": _cmd_estimate_diffusion,
    "experiment": _cmd_experiment,
}


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError("--config", f"cannot read {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"invalid JSON: {exc}") from None
        cfg = resolve(raw, args)
        model, theta0, x0 = build_model(cfg["model"]["name"], cfg["model"]["params"])
        out_dir = cfg["io"]["output"]
        try:
            os.makedirs(out_dir, exist_ok=True)
        except OSError as exc:
            raise ConfigError("io.output", f"cannot create {out_dir}: {exc.strerror}") from None
        # threads never change results, but are logged so the run is self-describing
        _write_json(os.path.join(out_dir, "resolved_config.json"), cfg)
        HANDLERS[cfg["command"]](cfg, model, theta0, x0, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except SDEFitError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
