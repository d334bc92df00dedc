"""Closed-loop experiments: Baseline, MPC-min and MPC-tracking on the simulator.

A run directory holds

* ``frame.csv``       the simulated log (same schema as training data)
* ``solves.jsonl``    one diagnostic record per MPC solve (empty for Baseline)
* ``config.snapshot`` the effective INI configuration
* ``metrics.json``    :class:`MetricsReport` as JSON

Solve wall times are kept on the in-memory artifact only, so everything
written to disk is a deterministic function of config, models and seed.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from .config import PlantConfig
from .data import TimeSeriesFrame, load_csv, write_csv
from .errors import ConfigurationError, InvalidInputError, SerializationError
from .mpc import HorizonHistory, MPCConfig, ModelSet, solve
from .plant import Plant, initial_state, synth_weather


@dataclass(frozen=True)
class Baseline:
    fixed_setpoints: tuple[float, ...] = (25.0,) * 10
    u_min: float = 22.0
    u_max: float = 28.0
    name = "baseline"

    def __post_init__(self):
        sp = np.asarray(self.fixed_setpoints, float)
        if np.any(sp < self.u_min) or np.any(sp > self.u_max):
            raise ConfigurationError("baseline setpoints must lie in [u_min, u_max]")


@dataclass(frozen=True)
class MPCMin:
    cfg: MPCConfig
    name = "mpc-min"

    def __post_init__(self):
        if (self.cfg.lambda_E, self.cfg.lambda_T) != (1.0, 0.0):
            raise ConfigurationError("MPC-min requires lambda_E=1, lambda_T=0")

    @classmethod
    def from_config(cls, cfg: MPCConfig) -> "MPCMin":
        return cls(replace(cfg, lambda_E=1.0, lambda_T=0.0))


@dataclass(frozen=True)
class MPCTracking:
    cfg: MPCConfig
    name = "mpc-tracking"

    def __post_init__(self):
        if (self.cfg.lambda_E, self.cfg.lambda_T) != (0.0, 1.0):
            raise ConfigurationError("MPC-tracking requires lambda_E=0, lambda_T=1")
        if any(r != 25.0 for r in self.cfg.t_ref):
            raise ConfigurationError("MPC-tracking tracks t_ref=25 in every zone")

    @classmethod
    def from_config(cls, cfg: MPCConfig) -> "MPCTracking":
        return cls(replace(cfg, lambda_E=0.0, lambda_T=1.0, t_ref=(25.0,) * cfg.n_zones))


ControllerKind = Union[Baseline, MPCMin, MPCTracking]


@dataclass
class RunArtifact:
    frame: TimeSeriesFrame
    solves: list[dict]
    controller: str
    seed: int
    config_snapshot: str = ""
    solve_times: list[float] = field(default_factory=list)


def run_experiment(plant: PlantConfig, controller: ControllerKind, models: ModelSet | None = None,
                   days: int = 3, seed: int = 7, weather=None,
                   warmup_setpoint: float = 25.0, config_snapshot: str = "",
                   progress=None) -> RunArtifact:
    """Simulate ``days`` of closed-loop operation.

    MPC controllers hold ``warmup_setpoint`` until every lag buffer is
    full, then re-solve every ``control_period_steps`` samples and actuate
    the rounded first input in between.
    """
    n = plant.n_zones
    ts = plant.ts
    if weather is None:
        weather = synth_weather(seed, days, plant.weather, ts)
    n_rows = int(round(days * 86400 / ts))
    if len(weather) < n_rows:
        raise InvalidInputError("weather series is shorter than the run")
    is_mpc = not isinstance(controller, Baseline)
    if is_mpc:
        if models is None:
            raise ConfigurationError(f"controller {controller.name} needs trained models")
        cfg = controller.cfg
        if cfg.n_zones != n or models.n_zones != n:
            raise ConfigurationError("MPC config, models and plant disagree on zone count")
        depth = models.history_depth
        base_sp = np.full(n, float(warmup_setpoint))
    else:
        base_sp = np.asarray(controller.fixed_setpoints, float)
        if base_sp.shape != (n,):
            raise ConfigurationError(f"baseline needs {n} setpoints")

    sim = Plant(plant.zones, plant.power,
                initial_state(n, plant.init_zone_temp, plant.init_wall_temp),
                ts=ts, dt=plant.dt, sensor_period=plant.sensor_period)
    W = weather.as_array()[:n_rows]
    t_meas = np.empty((n_rows, n))
    sp_log = np.empty((n_rows, n))
    comp = np.zeros(n_rows, dtype=int)
    energy = np.empty(n_rows)
    stamps = pd.Timestamp(plant.start) + pd.to_timedelta(np.arange(n_rows) * ts, unit="s")
    solves, times = [], []
    sp = base_sp
    warm = None
    for k in range(n_rows):
        t_meas[k] = sim.measure()
        if is_mpc and k >= depth - 1 and (k - depth + 1) % cfg.control_period_steps == 0:
            hist = HorizonHistory(W[k - depth + 1:k + 1], t_meas[k - depth + 1:k + 1],
                                  sp_log[k - depth + 1:k], comp[k - depth + 1:k].astype(float),
                                  energy[k - depth + 1:k], sim.state.split_on, index=k)
            t0 = time.perf_counter()
            sol = solve(cfg, models, hist, warm_start=warm)
            times.append(time.perf_counter() - t0)
            warm = sol.u_cont
            sp = sol.u_int.astype(float)
            solves.append(sol.record(stamps[k].strftime("%Y-%m-%dT%H:%M:%SZ")))
            if progress is not None:
                progress(k, n_rows, sol)
        res = sim.advance(sp, weather[k])
        sp_log[k] = sp
        comp[k] = res.comp_mode
        energy[k] = res.energy
    frame = TimeSeriesFrame.from_arrays(plant.start, ts, W, t_meas, sp_log, comp, energy)
    return RunArtifact(frame, solves, controller.name, seed, config_snapshot, times)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    controller: str
    rows: int
    hours: float
    zone_mean: list[float]
    zone_std: list[float]
    pooled_mean: float
    pooled_std: float
    energy_kwh: float
    comfort_min: float
    comfort_max: float
    below_count: int
    above_count: int
    below_degh: float
    above_degh: float
    weather: dict

    def to_dict(self) -> dict:
        return asdict(self)


def metrics(run: RunArtifact | TimeSeriesFrame, comfort_bounds=(23.0, 27.0),
            controller: str | None = None) -> MetricsReport:
    """Run statistics in physical units.

    Violations count zone samples outside the comfort band and integrate
    the excursion over each sample's ``Ts`` (zero-order hold).
    """
    frame = run.frame if isinstance(run, RunArtifact) else run
    name = controller or (run.controller if isinstance(run, RunArtifact) else "")
    lo, hi = comfort_bounds
    T = frame.zone_temps()
    hours_per_row = frame.ts / 3600.0
    below = np.maximum(0.0, lo - T)
    above = np.maximum(0.0, T - hi)
    w = frame.weather()
    return MetricsReport(
        controller=name,
        rows=len(frame),
        hours=len(frame) * hours_per_row,
        zone_mean=T.mean(axis=0).tolist(),
        zone_std=T.std(axis=0).tolist(),
        pooled_mean=float(T.mean()),
        pooled_std=float(T.std()),
        energy_kwh=float(frame["energy"].sum() / 1000.0),
        comfort_min=float(lo), comfort_max=float(hi),
        below_count=int((below > 0).sum()),
        above_count=int((above > 0).sum()),
        below_degh=float(below.sum() * hours_per_row),
        above_degh=float(above.sum() * hours_per_row),
        weather={name: {"mean": float(w[:, i].mean()), "std": float(w[:, i].std())}
                 for i, name in enumerate(("t_out", "humidity", "solar"))},
    )


# weather means further apart than this are flagged as not comparable
_WEATHER_TOLERANCE = {"t_out": 1.0, "humidity": 5.0, "solar": 20.0}


def compare(run_a: RunArtifact | TimeSeriesFrame, run_b: RunArtifact | TimeSeriesFrame,
            comfort_bounds=(23.0, 27.0)) -> tuple[dict, pd.DataFrame]:
    """Side-by-side report of B relative to A plus the cumulative-energy series.

    The series column ``cum_saving_kwh`` is ``cumsum(E_A) - cumsum(E_B)``,
    so it grows while B uses less energy than A.
    """
    fa = run_a.frame if isinstance(run_a, RunArtifact) else run_a
    fb = run_b.frame if isinstance(run_b, RunArtifact) else run_b
    if len(fa) != len(fb) or fa.ts != fb.ts:
        raise InvalidInputError(f"runs differ in duration ({len(fa)} vs {len(fb)} rows)")
    ma = metrics(run_a, comfort_bounds)
    mb = metrics(run_b, comfort_bounds)
    ea, eb = fa["energy"], fb["energy"]
    cum_a, cum_b = np.cumsum(ea) / 1000.0, np.cumsum(eb) / 1000.0
    series = pd.DataFrame({
        "timestamp": fa["timestamp"],
        "cum_energy_a_kwh": cum_a,
        "cum_energy_b_kwh": cum_b,
        "cum_saving_kwh": cum_a - cum_b,
    })
    delta = mb.energy_kwh - ma.energy_kwh
    flags = {k: abs(mb.weather[k]["mean"] - ma.weather[k]["mean"]) > tol
             for k, tol in _WEATHER_TOLERANCE.items()}
    identical = bool(np.array_equal(fa.weather(), fb.weather()))
    report = {
        "a": ma.to_dict(),
        "b": mb.to_dict(),
        "energy_delta_kwh": delta,
        "energy_delta_pct": 100.0 * delta / ma.energy_kwh if ma.energy_kwh else 0.0,
        "pooled_std_ratio": mb.pooled_std / ma.pooled_std if ma.pooled_std else None,
        "zone_std_delta": (np.subtract(mb.zone_std, ma.zone_std)).tolist(),
        "zone_mean_delta": (np.subtract(mb.zone_mean, ma.zone_mean)).tolist(),
        "weather_identical": identical,
        "weather_dissimilar": {k: bool(v) for k, v in flags.items()},
        "weather_comparable": not any(flags.values()),
    }
    return report, series


# ---------------------------------------------------------------------------
# Run directories
# ---------------------------------------------------------------------------

def _dump_json(obj, path: Path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_run(run: RunArtifact, directory, comfort_bounds=(23.0, 27.0)) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_csv(run.frame, d / "frame.csv")
    with open(d / "solves.jsonl", "w") as fh:
        for rec in run.solves:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    (d / "config.snapshot").write_text(run.config_snapshot)
    m = metrics(run, comfort_bounds).to_dict()
    m["seed"] = run.seed
    m["solves"] = len(run.solves)
    _dump_json(m, d / "metrics.json")
    return d


def read_run(directory, ts: float = 120.0) -> RunArtifact:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"run directory not found: {d}")
    frame = load_csv(d / "frame.csv", ts=ts)
    solves = []
    if (d / "solves.jsonl").exists():
        try:
            solves = [json.loads(line) for line in (d / "solves.jsonl").read_text().splitlines()
                      if line.strip()]
        except json.JSONDecodeError as exc:
            raise SerializationError(f"{d / 'solves.jsonl'}: {exc}") from exc
    meta = {}
    if (d / "metrics.json").exists():
        meta = json.loads((d / "metrics.json").read_text())
    snap = (d / "config.snapshot").read_text() if (d / "config.snapshot").exists() else ""
    return RunArtifact(frame, solves, meta.get("controller", d.name), meta.get("seed", -1), snap)
