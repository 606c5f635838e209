"""Command-line entry point.

Subcommands: synth, train, predict, eval, sweep, thm.  Every option can also
come from a ``--config`` file holding ``key=value`` lines ('#' starts a
comment); keys are option names with '-' or '_'.  Flags given on the command
line override the file.  Exit codes: 0 success, 1 invalid input or config,
2 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import evalbench, io, solver
from .baselines import BaselineKind, predict_baseline, train_baseline
from .core import HyperParams, split_train_test
from .synthgen import GenSpec, generate

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class ConfigError(ValueError):
    pass


def _floats(s: str) -> list[float]:
    return [float(v) for v in str(s).replace(";", ",").split(",") if v.strip()]


def _ints(s: str) -> list[int]:
    return [int(float(v)) for v in _floats(s)]


def read_config(path) -> dict:
    conf = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        conf[key.replace("-", "_")] = val
    return conf


# option name -> (type, default); None default means required when used
GEN_OPTS = {
    "process": (str, "ar1"), "seed": (int, 0), "T_blocks": (int, 300), "repeat": (int, 96),
    "K": (int, 15), "D": (int, 3), "sigma": (float, 0.01),
}
HYPER_OPTS = {
    "rounds": (int, 1000), "lambda": (float, 10.0), "learning_rate": (float, 0.01),
    "max_depth": (int, 3), "tree_reg": (float, 1.0), "min_gain": (float, 0.0),
    "block_len": (int, 96), "pd_floor": (float, 1e-6), "refresh_every": (int, 1), "seed": (int, 0),
}
COMMAND_OPTS = {
    "synth": {**GEN_OPTS, "out": (str, None)},
    "train": {**HYPER_OPTS, "data": (str, None), "method": (str, "solarboost"),
              "train_len": (int, 0), "out": (str, None)},
    "predict": {"model": (str, None), "data": (str, None), "start": (int, 0), "out": (str, None),
                "seed": (int, 0)},
    "eval": {"model": (str, None), "data": (str, None), "start": (int, 0), "out": (str, None),
             "seed": (int, 0)},
    "sweep": {**HYPER_OPTS, "param": (str, None), "values": (str, None), "data": (str, None),
              "train_len": (int, None), "out": (str, None)},
    "thm": {**GEN_OPTS, **HYPER_OPTS, "experiment": (str, None), "out": (str, "."),
            "sigmas": (str, "0,0.01,0.02"), "seeds": (str, "0,1,2"), "test_blocks": (int, 20),
            "noise_levels": (str, "0.05,0.1"), "spreads": (str, "0.1,1.0"),
            "bound_K": (float, None), "sigma_c": (float, None), "M": (float, None), "r": (float, None),
            "epsilon": (float, None), "C_t": (float, None), "sigma_f": (float, None)},
}


def resolve(command: str, args: argparse.Namespace) -> dict:
    spec = COMMAND_OPTS[command]
    conf = read_config(args.config) if getattr(args, "config", None) else {}
    unknown = sorted(set(conf) - set(spec))
    if unknown:
        raise ConfigError(f"unknown config keys for '{command}': {', '.join(unknown)}")
    out = {}
    for key, (typ, default) in spec.items():
        val = getattr(args, key, None)
        if val is None:
            val = conf.get(key, default)
        if val is None:
            if command == "thm" and key not in ("experiment",):
                out[key] = None
                continue
            raise ConfigError(f"'{command}' needs --{key.replace('_', '-')}")
        try:
            out[key] = typ(val)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {val!r}") from exc
    return out


def hyper_from(o: dict) -> HyperParams:
    return HyperParams(
        lam=o["lambda"], n_rounds=o["rounds"], learning_rate=o["learning_rate"], max_depth=o["max_depth"],
        tree_reg=o["tree_reg"], min_gain=o["min_gain"], block_len=o["block_len"],
        pd_floor=o["pd_floor"], seed=o["seed"], capacity_refresh_every=o["refresh_every"],
    )


def spec_from(o: dict) -> GenSpec:
    return GenSpec(o["T_blocks"], o["repeat"], o["K"], o["D"], o["sigma"], o["process"].lower(), o["seed"])


def write_rows(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(evalbench.rows_to_csv(rows))


def cmd_synth(o: dict) -> int:
    spec = spec_from(o)
    io.save_dataset(generate(spec), o["out"], spec)
    return EXIT_OK


def _train_part(ds, train_len: int):
    if train_len and train_len < ds.T:
        return split_train_test(ds, train_len)[0]
    return ds


def cmd_train(o: dict) -> int:
    ds = _train_part(io.load_dataset(o["data"]), o["train_len"])
    hyper = hyper_from(o)
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    method = o["method"].lower()
    if method == "solarboost":
        rows = []
        model = solver.train(ds, hyper, lambda n, obj, r: rows.append((n, obj, r)))
        with open(out / "train_log.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["round", "true_objective", "train_rmse"])
            w.writerows((n, repr(obj), repr(r)) for n, obj, r in rows)
    else:
        try:
            kind = BaselineKind(method)
        except ValueError:
            raise ConfigError(f"unknown method {method!r}") from None
        model = train_baseline(kind, ds, hyper)
    io.save_model(model, out / "model.json")
    return EXIT_OK


def _eval_part(o: dict):
    model = io.load_model(o["model"])
    ds = io.load_dataset(o["data"])
    if o["start"]:
        ds = split_train_test(ds, o["start"])[1]
    if ds.K != model.grid_count or ds.D != model.feature_dim:
        raise ValueError(
            f"dataset (K={ds.K}, D={ds.D}) does not match model (K={model.grid_count}, D={model.feature_dim})"
        )
    return model, ds


def cmd_predict(o: dict) -> int:
    model, ds = _eval_part(o)
    if isinstance(model, solver.SolarBoostModel):
        pred = solver.predict(model, ds.features, ds.totals)
    else:
        caps = None if ds.truth_capacities is None else ds.truth_capacities.values
        pred = predict_baseline(model, ds.features, ds.totals, caps)
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "predictions.csv",
               [{"t": o["start"] + t, "Y_hat": float(p)} for t, p in enumerate(pred)])
    return EXIT_OK


def cmd_eval(o: dict) -> int:
    model, ds = _eval_part(o)
    metrics = evalbench.evaluate_model(model, ds)
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "metrics.csv", [{"metric": k, "value": float(v)} for k, v in metrics.items()])
    return EXIT_OK


def cmd_sweep(o: dict) -> int:
    ds = io.load_dataset(o["data"])
    values = _floats(o["values"]) if o["param"] == "lambda" else _ints(o["values"])
    rows = evalbench.sweep(o["param"], values, ds, hyper_from(o), o["train_len"])
    write_rows(Path(o["out"]) / f"sweep_{o['param']}.csv", rows)
    return EXIT_OK


def cmd_thm(o: dict) -> int:
    exp = o["experiment"]
    if exp == "bound":
        need = ["bound_K", "sigma_c", "M", "r", "epsilon", "C_t", "sigma_f"]
        missing = [k for k in need if o[k] is None]
        if missing:
            raise ConfigError("thm bound needs " + ", ".join("--" + k.replace("_", "-") for k in missing))
        n = evalbench.thm1_sample_bound(*(o[k] for k in need))
        print("undefined" if n is None else repr(n))
        return EXIT_OK
    spec, hyper, seeds = spec_from(o), hyper_from(o), _ints(o["seeds"])
    if exp == "drift":
        rows = evalbench.thm1_drift_experiment(spec, _floats(o["sigmas"]), hyper, seeds, o["test_blocks"])
    elif exp == "variance":
        rows = evalbench.thm2_variance_experiment(spec, _floats(o["noise_levels"]), _floats(o["spreads"]), seeds)
    else:
        raise ConfigError(f"unknown thm experiment {exp!r} (bound, drift, variance)")
    write_rows(Path(o["out"]) / f"thm_{exp}.csv", rows)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "train": cmd_train, "predict": cmd_predict,
    "eval": cmd_eval, "sweep": cmd_sweep, "thm": cmd_thm,
}


def _add_opts(p: argparse.ArgumentParser, opts: dict, skip=()) -> None:
    for key, (typ, _) in opts.items():
        if key in skip:
            continue
        flags = ["--" + key.replace("_", "-")]
        if "_" in key:
            flags.append("--" + key)
        if key == "bound_K":
            flags = ["--bound-K", "--bound-k"]
        p.add_argument(*flags, dest=key, type=str if typ is str else typ, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="solarboost", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in COMMAND_OPTS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        if name == "thm":
            p.add_argument("experiment", nargs="?", default=None, choices=["bound", "drift", "variance"])
            _add_opts(p, opts, skip=("experiment",))
        else:
            _add_opts(p, opts)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve(args.command, args)
        return COMMANDS[args.command](opts)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
