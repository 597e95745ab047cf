"""Command-line entry point: ``thermobench {generate,identify,compare,mpc}``.

Exit codes: 0 success, 1 numerical failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import pipeline as pl
from .datadriven import DataDrivenModel
from .errors import ConfigurationError, IdentifiabilityError, NumericalError, PreconditionError
from .mpc import MpcConfig
from .optim import thread_cap
from .rcnet.model import RcModel
from .timeseries import to_datetime, write_csv

MODEL_FILES = {"a": "model_a.json", "b": "model_b.json"}


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(json.loads(pl.canonical_json(obj)), fh, indent=2, sort_keys=True)


def _write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def _header(cfg: pl.PipelineConfig, command: str) -> dict:
    return {"command": command, "config_digest": cfg.digest(), "seed": cfg.seed}


def _which(which: str) -> list[str]:
    return ["a", "b"] if which == "both" else [which]


def _load_model(out: str, key: str):
    path = os.path.join(out, MODEL_FILES[key])
    if not os.path.exists(path):
        raise ConfigurationError(f"model file not found: {path} (run 'identify' first)")
    with open(path) as fh:
        doc = json.load(fh)
    return DataDrivenModel.from_dict(doc) if key == "a" else RcModel.from_dict(doc)


# --------------------------------------------------------------------------
# commands


def cmd_generate(cfg: pl.PipelineConfig, out: str) -> dict:
    if cfg.scenario is None:
        raise ConfigurationError("generate needs a 'scenario' in the config")
    data, truth = pl.load_data(cfg)
    write_csv(data, os.path.join(out, "dataset.csv"))
    doc = _header(cfg, "generate")
    doc["ground_truth"] = truth.to_dict()
    doc["scenario"] = cfg.scenario.to_dict()
    _write_json(os.path.join(out, "ground_truth.json"), doc)
    return {"rows": len(data), "zones": data.n_zones}


def cmd_identify(cfg: pl.PipelineConfig, out: str, which: str = "both") -> dict:
    data, _ = pl.load_data(cfg)
    split = pl.split_data(data, cfg)
    models, report = {}, _header(cfg, "identify")
    report["dropped_weeks"] = [to_datetime(int(t)).isoformat() for t in split.dropped_weeks]
    for key in _which(which):
        if key == "a":
            m = pl.identify_model_a(split, data, cfg)
            m.save(os.path.join(out, MODEL_FILES["a"]))
            report["model_a"] = {"A": m.A, "B": m.B, "C": m.C, "spectral_radius": m.spectral_radius(),
                                 "bandwidths": m.metadata.get("bandwidths")}
            if m.n == 1:
                eq = pl.lumped_equation(m)
                report["model_a"]["equation"] = eq
                print(eq)
        else:
            m, fit = pl.identify_model_b(split, data, cfg)
            m.save(os.path.join(out, MODEL_FILES["b"]))
            report["model_b"] = {"gamma": fit.gamma.to_dict(), "sse": fit.sse, "start_sse": fit.start_sse,
                                 "windows": fit.n_windows, "evaluations": fit.nls.evaluations}
        models[key] = m
    table = pl.rms_table(models, data, split, cfg.rms_horizon, cfg.kalman)
    report["rms"] = table
    rows = pl.format_rms_table(table, data.zone_names)
    _write_rows(os.path.join(out, "rms_table.csv"), rows)
    _write_json(os.path.join(out, "identification_report.json"), report)
    for r in rows:
        print("  ".join(f"{c:>8}" for c in r))
    return report


def cmd_compare(cfg: pl.PipelineConfig, out: str, which: str = "both") -> dict:
    data, _ = pl.load_data(cfg)
    split = pl.split_data(data, cfg)
    models = {k: _load_model(out, k) for k in _which(which)}
    season, week = pl.mpc_week(split, cfg.mpc_season)
    res = pl.week_comparison(models, data, week, season, cfg.kalman)
    rows = [["timestamp", "zone", "measured"] + list(models)]
    for k, t in enumerate(res["timestamps"]):
        for z, name in enumerate(data.zone_names):
            rows.append([to_datetime(int(t)).isoformat(), name, f"{res['measured'][k, z]:.6f}"]
                        + [f"{res[m][k, z]:.6f}" for m in models])
    _write_rows(os.path.join(out, "compare_trajectories.csv"), rows)
    report = _header(cfg, "compare")
    report["season"] = str(season)
    report["week_start"] = to_datetime(int(week.timestamps[0])).isoformat()
    report["rms"] = {m: dict(zip(data.zone_names, r)) for m, r in res["rms"].items()}
    report["rms_mean"] = {m: float(np.mean(r)) for m, r in res["rms"].items()}
    if "a" in models and "b" in models:
        report["rms_delta_b_minus_a"] = {z: res["rms"]["b"][i] - res["rms"]["a"][i]
                                         for i, z in enumerate(data.zone_names)}
        report["b_not_worse_than_a"] = report["rms_mean"]["b"] <= report["rms_mean"]["a"]
    report["table"] = pl.rms_table(models, data, split, cfg.rms_horizon, cfg.kalman)
    _write_json(os.path.join(out, "compare_report.json"), report)
    for m, v in report["rms_mean"].items():
        print(f"model {m}: mean open-loop RMS {v:.4f}")
    return report


def cmd_mpc(cfg: pl.PipelineConfig, out: str, which: str = "both", mode: str = "open") -> dict:
    data, truth = pl.load_data(cfg)
    split = pl.split_data(data, cfg)
    season, week = pl.mpc_week(split, cfg.mpc_season)
    summaries = {}
    for key in _which(which):
        model = _load_model(out, key)
        run = pl.run_control(model, data, week, season, cfg, mode, truth)
        run.meta.update(_header(cfg, "mpc"))
        run.meta.update({"model": key, "mode": mode, "season": str(season)})
        stem = os.path.join(out, f"mpc_{key}_{mode}")
        run.write_csv(stem + ".csv")
        s = run.summary()
        s.update(run.meta)
        _write_json(stem + ".json", s)
        summaries[key] = s
        print(f"model {key} ({mode}): cost {s['total_cost']:.3f}, violation minutes "
              f"{s['violation_minutes']}, mean solve {s['solve_time_mean'] * 1e3:.1f} ms")
    return summaries


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thermobench", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("generate", "identify", "compare", "mpc"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="pipeline config JSON")
        s.add_argument("--seed", type=int, default=None, help="override the config seed")
        s.add_argument("--out", default=".", help="output directory")
        if name != "generate":
            s.add_argument("--which", choices=("a", "b", "both"), default="both")
        if name == "mpc":
            s.add_argument("--mode", choices=("open", "plant"), default="open")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = pl.PipelineConfig.load(args.config).with_seed(args.seed)
        os.makedirs(args.out, exist_ok=True)
        os.environ.setdefault("THERMOBENCH_THREADS", str(thread_cap()))
        if args.command == "generate":
            cmd_generate(cfg, args.out)
        elif args.command == "identify":
            cmd_identify(cfg, args.out, args.which)
        elif args.command == "compare":
            cmd_compare(cfg, args.out, args.which)
        else:
            cmd_mpc(cfg, args.out, args.which, args.mode)
    except PreconditionError as exc:
        print(f"precondition error: {exc}", file=sys.stderr)
        return 2
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except IdentifiabilityError as exc:
        cols = ", ".join(map(str, exc.columns)) or "unknown"
        print(f"identifiability error: {exc} (columns: {cols})", file=sys.stderr)
        print("hint: add excitation experiments that move the listed inputs, lengthen the "
              "training data, or tighten the priors on those coefficients", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
