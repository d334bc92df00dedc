"""``nnmpc`` command line.

Exit codes: 0 ok, 2 configuration/usage, 3 I/O or malformed data,
4 training failure, 5 solver failure.

Every command writes ``config.snapshot`` into its output directory.  Output
directories given as relative paths (and the per-command defaults) are
placed under ``$NNMPC_OUTPUT_ROOT`` when that variable is set.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .config import (experiment_from_parser, load_plant_config, mpc_from_parser,
                     plant_from_parser, read_parser, snapshot, training_from_parser)
from .data import (ENERGY_LAGS, ZONE_LAGS, chronological_split, excitation_schedule,
                   load_csv, make_lagged_samples, parse_target, write_csv, write_manifest)
from .errors import (ConfigurationError, IngestionError, InvalidInputError, SerializationError,
                     SolverError, TrainingError)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_TRAINING, EXIT_SOLVER = 0, 2, 3, 4, 5
OUTPUT_ROOT_ENV = "NNMPC_OUTPUT_ROOT"


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors share the configuration exit code
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _out_dir(arg, default: str) -> Path:
    path = Path(arg if arg else default)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_snapshot(parser, out: Path, args, command: str):
    overrides = {k: v for k, v in vars(args).items() if k not in ("func",)}
    overrides["command"] = command
    (out / "config.snapshot").write_text(snapshot(parser, overrides))


def _override(parser, section: str, key: str, value):
    """Fold a command-line flag into the parser so the snapshot reproduces it."""
    if value is not None:
        parser[section][key] = str(value)


def _lagspec(target: str):
    return ENERGY_LAGS if parse_target(target)[0] == "energy" else ZONE_LAGS


def _targets(spec: str, n_zones: int) -> list[str]:
    if spec == "all":
        return ["energy"] + [f"zone:{j}" for j in range(1, n_zones + 1)]
    parse_target(spec, n_zones)
    return [spec]


def _load_frame(path):
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"data file not found: {p}")
    return load_csv(p)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_excite(args) -> int:
    from .plant import initial_state, simulate, synth_weather
    parser = read_parser(args.config)
    _override(parser, "training", "days", args.days)
    _override(parser, "seeds", "excitation", args.seed)
    plant = plant_from_parser(parser)
    days = training_from_parser(parser).days
    seed = plant.excitation_seed
    if days < 1:
        raise ConfigurationError("--days must be >= 1")
    out = _out_dir(args.out, "excite")
    weather = synth_weather(seed, days, plant.weather, plant.ts)
    schedule = excitation_schedule(seed, plant.n_zones, days, plant.ts)
    frame = simulate(plant.zones, plant.power, weather, schedule, len(weather) * plant.ts,
                     dt=plant.dt, ts=plant.ts, start=plant.start,
                     state=initial_state(plant.n_zones, plant.init_zone_temp,
                                         plant.init_wall_temp),
                     sensor_period=plant.sensor_period)
    write_csv(frame, out / "data.csv")
    _write_snapshot(parser, out, args, "excite")
    print(f"wrote {len(frame)} rows to {out / 'data.csv'}")
    return EXIT_OK


def cmd_train(args) -> int:
    from . import nn
    from .mpc import model_filename
    parser = read_parser(args.config)
    _override(parser, "seeds", "training", args.seed)
    settings = training_from_parser(parser)
    seed = plant_from_parser(parser).training_seed
    frame = _load_frame(args.data)
    targets = _targets(args.target, frame.n_zones)
    out = _out_dir(args.out, "models")
    tcfg = nn.TrainConfig(learning_rate=settings.learning_rate, batch_size=settings.batch_size,
                          max_epochs=settings.max_epochs, patience=settings.patience, seed=seed)
    for target in targets:
        data = make_lagged_samples(frame, _lagspec(target), target)
        fit_part, held_out = chronological_split(data, 1.0 - settings.validation_fraction)
        hidden = settings.hidden_energy if target == "energy" else settings.hidden_zone
        model, history = nn.train(fit_part, hidden=hidden, config=tcfg)
        name = model_filename(target)
        nn.save(model, out / name)
        stem = name.removesuffix(".model.json")
        write_manifest(data, out / f"{stem}.manifest.csv")
        report = nn.evaluate(model, held_out)
        summary = report.summary() | {"epochs": len(history)}
        (out / f"{stem}.eval.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        print(f"{target}: MAE {report.mae:.4g} (persistence {report.persistence_mae:.4g}), "
              f"p95 {report.p95:.4g} (persistence {report.persistence_p95:.4g}), "
              f"{len(history)} epochs")
    _write_snapshot(parser, out, args, "train")
    return EXIT_OK


def cmd_validate(args) -> int:
    from . import nn
    from .mpc import model_filename
    from .plotting import plot_error_density
    parser = read_parser(args.config)
    frame = _load_frame(args.data)
    mdir = Path(args.models)
    if not mdir.is_dir():
        raise FileNotFoundError(f"model directory not found: {mdir}")
    out = _out_dir(args.out, "validate")
    rows = []
    found = 0
    for target in _targets("all", frame.n_zones):
        path = mdir / model_filename(target)
        if not path.exists():
            continue
        found += 1
        model = nn.load(path)
        if model.target_id != target:
            raise InvalidInputError(f"{path.name} holds a model for {model.target_id}")
        data = make_lagged_samples(frame, model.lagspec, target)
        rep = nn.evaluate(model, data)
        stem = path.name.removesuffix(".model.json")
        rows.append({"target": target, "predictor": "model", "n": rep.n, "mae": rep.mae,
                     "rmse": rep.rmse, "p95": rep.p95})
        rows.append({"target": target, "predictor": "persistence", "n": rep.n,
                     "mae": rep.persistence_mae, "rmse": rep.persistence_rmse,
                     "p95": rep.persistence_p95})
        pd.DataFrame({"bin_lo": rep.hist_edges[:-1], "bin_hi": rep.hist_edges[1:],
                      "model_count": rep.hist_model,
                      "persistence_count": rep.hist_persistence}).to_csv(
            out / f"{stem}.hist.csv", index=False)
        plot_error_density(rep.hist_edges, rep.hist_model, rep.hist_persistence, target,
                           out / f"{stem}.hist.png")
    if not found:
        raise FileNotFoundError(f"no model files in {mdir}")
    table = pd.DataFrame(rows)
    table.to_csv(out / "validation.csv", index=False)
    print(table.to_string(index=False))
    _write_snapshot(parser, out, args, "validate")
    return EXIT_OK


def cmd_run(args) -> int:
    from .experiment import Baseline, MPCMin, MPCTracking, run_experiment, write_run
    from .mpc import ModelSet
    parser = read_parser(args.config)
    _override(parser, "experiment", "days", args.days)
    _override(parser, "experiment", "seed", args.seed)
    plant = plant_from_parser(parser)
    exp = experiment_from_parser(parser)
    days, seed = exp.days, exp.seed
    if days < 1:
        raise ConfigurationError("--days must be >= 1")
    n = plant.n_zones
    models = None
    if args.controller == "baseline":
        mcfg = mpc_from_parser(parser, n)
        ctl = Baseline((exp.baseline_setpoint,) * n, mcfg.u_min, mcfg.u_max)
    else:
        if not args.models:
            raise ConfigurationError(f"--models is required for {args.controller}")
        mdir = Path(args.models)
        if not mdir.is_dir():
            raise FileNotFoundError(f"model directory not found: {mdir}")
        models = ModelSet.from_dir(mdir, n)
        mcfg = mpc_from_parser(parser, n)
        ctl = (MPCMin if args.controller == "mpc-min" else MPCTracking).from_config(mcfg)
    out = _out_dir(args.out, f"run-{args.controller}")
    snap = snapshot(parser, {k: v for k, v in vars(args).items() if k != "func"}
                    | {"command": "run"})
    run = run_experiment(plant, ctl, models, days=days, seed=seed,
                         warmup_setpoint=exp.baseline_setpoint, config_snapshot=snap)
    write_run(run, out, (exp.comfort_min, exp.comfort_max))
    m = json.loads((out / "metrics.json").read_text())
    msg = (f"{ctl.name}: pooled mean {m['pooled_mean']:.3f} std {m['pooled_std']:.3f} degC, "
           f"energy {m['energy_kwh']:.2f} kWh, below {m['below_degh']:.2f} degC*h")
    if run.solve_times:
        msg += f", median solve {np.median(run.solve_times):.2f} s over {len(run.solve_times)}"
    print(msg)
    return EXIT_OK


def _weather_distributions(fa, fb, bins: int = 20) -> pd.DataFrame:
    parts = []
    for i, sig in enumerate(("t_out", "humidity", "solar")):
        a, b = fa.weather()[:, i], fb.weather()[:, i]
        lo, hi = min(a.min(), b.min()), max(a.max(), b.max())
        edges = np.linspace(lo, hi if hi > lo else lo + 1.0, bins + 1)
        parts.append(pd.DataFrame({"signal": sig, "bin_lo": edges[:-1], "bin_hi": edges[1:],
                                   "count_a": np.histogram(a, edges)[0],
                                   "count_b": np.histogram(b, edges)[0]}))
    return pd.concat(parts, ignore_index=True)


def cmd_report(args) -> int:
    from .experiment import compare, read_run
    from .plotting import plot_cumulative, plot_temperatures, plot_weather
    parser = read_parser(args.config)
    exp = experiment_from_parser(parser)
    plant = plant_from_parser(parser)
    for d in (args.run_a, args.run_b):
        if not Path(d).is_dir():
            raise FileNotFoundError(f"run directory not found: {d}")
    run_a, run_b = read_run(args.run_a, plant.ts), read_run(args.run_b, plant.ts)
    bounds = (exp.comfort_min, exp.comfort_max)
    report, series = compare(run_a, run_b, bounds)
    labels = [run_a.controller or "a", run_b.controller or "b"]
    if labels[0] == labels[1]:
        labels = [f"{labels[0]} (a)", f"{labels[1]} (b)"]
    report["labels"] = labels
    out = _out_dir(args.out, "report")
    (out / "comparison.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    series = series.assign(timestamp=run_a.frame.df["timestamp"].dt.strftime("%Y-%m-%dT%H:%M:%SZ"))
    series.to_csv(out / "cumulative_energy.csv", index=False)
    temps = pd.DataFrame({"timestamp": series["timestamp"]})
    for label, run in zip(labels, (run_a, run_b)):
        T = run.frame.zone_temps()
        temps[f"{label}_mean"] = T.mean(axis=1)
        temps[f"{label}_min"] = T.min(axis=1)
        temps[f"{label}_max"] = T.max(axis=1)
    temps.to_csv(out / "temperatures.csv", index=False)
    dist = _weather_distributions(run_a.frame, run_b.frame)
    dist.to_csv(out / "weather_distributions.csv", index=False)
    plot_temperatures(temps, labels, bounds, out / "temperatures.png")
    plot_cumulative(series, labels, out / "cumulative_energy.png")
    plot_weather(dist, labels, out / "weather_distributions.png")
    _write_snapshot(parser, out, args, "report")
    ratio = report["pooled_std_ratio"]
    print(f"energy {labels[1]} vs {labels[0]}: {report['energy_delta_kwh']:+.2f} kWh "
          f"({report['energy_delta_pct']:+.2f} %); pooled std ratio "
          + ("n/a" if ratio is None else f"{ratio:.3f}"))
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nnmpc", description="Neural-network MPC for a simulated multi-zone building.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="INI file overriding the packaged defaults")
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("excite", help="simulate random-excitation training data")
    common(sp)
    sp.add_argument("--days", type=int, help="simulated days (default [training] days)")
    sp.add_argument("--seed", type=int, help="weather and schedule seed")
    sp.set_defaults(func=cmd_excite)

    sp = sub.add_parser("train", help="train one model or all of them")
    common(sp)
    sp.add_argument("--data", required=True, help="frame CSV from 'excite'")
    sp.add_argument("--target", default="all", help="energy, zone:<j> or all")
    sp.add_argument("--seed", type=int, help="initialisation/shuffle seed")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("validate", help="compare trained models with persistence")
    common(sp)
    sp.add_argument("--data", required=True, help="frame CSV to evaluate on")
    sp.add_argument("--models", required=True, help="directory with *.model.json")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("run", help="closed-loop experiment")
    common(sp)
    sp.add_argument("--controller", required=True, choices=["baseline", "mpc-min", "mpc-tracking"])
    sp.add_argument("--models", help="directory with *.model.json (MPC controllers)")
    sp.add_argument("--days", type=int)
    sp.add_argument("--seed", type=int, help="weather seed")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("report", help="compare two run directories")
    common(sp)
    sp.add_argument("--run-a", required=True)
    sp.add_argument("--run-b", required=True)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, InvalidInputError) as exc:
        code, err = EXIT_CONFIG, exc
    except (IngestionError, SerializationError, OSError) as exc:
        code, err = EXIT_IO, exc
    except TrainingError as exc:
        code, err = EXIT_TRAINING, exc
    except SolverError as exc:
        code, err = EXIT_SOLVER, exc
    print(f"nnmpc {args.command}: error: {err}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
