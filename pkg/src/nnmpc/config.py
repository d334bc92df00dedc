"""INI configuration shared by the simulator, the trainer and the controllers.

The packaged ``default_plant.ini`` is always read first; a user file only
needs the keys it changes.  :func:`snapshot` writes the fully resolved
configuration back out in the same format, so a snapshot can be passed to
``--config`` to reproduce a run.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

from .errors import ConfigurationError
from .plant import PowerParams, WeatherProfile, ZoneParams


_ZONE_KEYS = ("air_capacitance", "wall_capacitance", "r_outdoor", "r_wall",
              "r_wall_outdoor", "heat_rate", "solar_aperture")


@dataclass(frozen=True)
class PlantConfig:
    zones: tuple[ZoneParams, ...]
    power: PowerParams
    weather: WeatherProfile
    ts: float = 120.0
    dt: float = 10.0
    start: str = "2019-12-01T00:00:00Z"
    init_zone_temp: float = 24.0
    init_wall_temp: float = 19.0
    sensor_period: float | None = None
    weather_seed: int = 2019
    excitation_seed: int = 1
    training_seed: int = 0

    @property
    def n_zones(self) -> int:
        return len(self.zones)


def _default_text() -> str:
    return resources.files("nnmpc").joinpath("default_plant.ini").read_text()


def read_parser(path=None) -> configparser.ConfigParser:
    """Defaults overlaid with ``path`` (if given)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    parser.read_string(_default_text(), source="default_plant.ini")
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
    return parser


def _float(parser, section, key):
    try:
        return parser.getfloat(section, key)
    except (ValueError, configparser.Error) as exc:
        raise ConfigurationError(f"[{section}] {key}: {exc}") from exc


def plant_from_parser(parser: configparser.ConfigParser) -> PlantConfig:
    zone_sections = sorted((s for s in parser.sections() if s.startswith("zone.")),
                           key=lambda s: int(s.split(".", 1)[1]))
    ids = [int(s.split(".", 1)[1]) for s in zone_sections]
    if ids != list(range(1, len(ids) + 1)) or not ids:
        raise ConfigurationError(f"zone sections must be numbered 1..n, got {ids}")

    adjacency: dict[int, list[tuple[int, float]]] = {i: [] for i in ids}
    if parser.has_section("adjacency"):
        for key, value in parser.items("adjacency"):
            try:
                a, b = (int(x) for x in key.split("-"))
                r = float(value)
            except ValueError:
                raise ConfigurationError(f"[adjacency] bad entry {key} = {value}") from None
            if a not in adjacency or b not in adjacency or a == b:
                raise ConfigurationError(f"[adjacency] {key} names an unknown zone")
            adjacency[a].append((b, r))
            adjacency[b].append((a, r))

    zones = []
    for i, section in zip(ids, zone_sections):
        kwargs = {k: _float(parser, section, k) for k in _ZONE_KEYS if parser.has_option(section, k)}
        missing = {"air_capacitance", "wall_capacitance", "r_outdoor", "r_wall"} - set(kwargs)
        if missing:
            raise ConfigurationError(f"[{section}] missing {sorted(missing)}")
        zones.append(ZoneParams(r_adjacent=tuple(sorted(adjacency[i])), **kwargs))

    power = PowerParams(**{f.name: _float(parser, "power", f.name) for f in fields(PowerParams)})
    weather = WeatherProfile(**{f.name: _float(parser, "weather", f.name)
                                for f in fields(WeatherProfile)
                                if parser.has_option("weather", f.name)})
    sim = parser["simulation"]
    try:
        return PlantConfig(
            zones=tuple(zones), power=power, weather=weather,
            ts=float(sim.get("ts", 120)), dt=float(sim.get("dt", 10)),
            start=sim.get("start", "2019-12-01T00:00:00Z"),
            init_zone_temp=float(sim.get("init_zone_temp", 24.0)),
            init_wall_temp=float(sim.get("init_wall_temp", 19.0)),
            sensor_period=float(sim["sensor_period"]) if sim.get("sensor_period") else None,
            weather_seed=parser.getint("seeds", "weather", fallback=2019),
            excitation_seed=parser.getint("seeds", "excitation", fallback=1),
            training_seed=parser.getint("seeds", "training", fallback=0),
        )
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc


def load_plant_config(path=None) -> PlantConfig:
    return plant_from_parser(read_parser(path))


def _floats(parser, section, key, n=None) -> tuple[float, ...]:
    """Comma-separated floats; a single value is broadcast to ``n`` entries."""
    raw = parser.get(section, key, fallback=None)
    if raw is None:
        raise ConfigurationError(f"[{section}] {key} is missing")
    try:
        values = tuple(float(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigurationError(f"[{section}] {key}: not a number list: {raw!r}") from None
    if n is not None:
        if len(values) == 1:
            values = values * n
        elif len(values) != n:
            raise ConfigurationError(f"[{section}] {key}: expected 1 or {n} values")
    return values


def _int(parser, section, key):
    try:
        return parser.getint(section, key)
    except (ValueError, configparser.Error) as exc:
        raise ConfigurationError(f"[{section}] {key}: {exc}") from exc


@dataclass(frozen=True)
class TrainingSettings:
    days: int = 84
    validation_fraction: float = 0.2
    hidden_energy: tuple[int, ...] = (50, 50)
    hidden_zone: tuple[int, ...] = (50,)
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 500
    patience: int = 20


def training_from_parser(parser) -> TrainingSettings:
    s = "training"
    frac = _float(parser, s, "validation_fraction")
    if not 0 < frac < 1:
        raise ConfigurationError("[training] validation_fraction must be in (0, 1)")
    return TrainingSettings(
        days=_int(parser, s, "days"),
        validation_fraction=frac,
        hidden_energy=tuple(int(v) for v in _floats(parser, s, "hidden_energy")),
        hidden_zone=tuple(int(v) for v in _floats(parser, s, "hidden_zone")),
        learning_rate=_float(parser, s, "learning_rate"),
        batch_size=_int(parser, s, "batch_size"),
        max_epochs=_int(parser, s, "max_epochs"),
        patience=_int(parser, s, "patience"),
    )


def mpc_from_parser(parser, n_zones: int, lambda_E: float = 1.0, lambda_T: float = 0.0):
    """The ``[mpc]`` section as an :class:`~nnmpc.mpc.MPCConfig` (weights supplied by caller)."""
    from .mpc import MPCConfig, SolverConfig
    s = "mpc"
    try:
        solver = SolverConfig(
            max_iters=_int(parser, s, "max_iters"),
            step_size=_float(parser, s, "step_size"),
            tol_rel=_float(parser, s, "tol_rel"),
            phases=_int(parser, s, "phases"),
            restarts=_floats(parser, s, "restarts"),
            hinge_width=_float(parser, s, "hinge_width"),
        )
        return MPCConfig(
            t_ref=_floats(parser, s, "t_ref", n_zones),
            t_min=_floats(parser, s, "t_min", n_zones),
            t_max=_floats(parser, s, "t_max", n_zones),
            N=_int(parser, s, "N"),
            lambda_E=lambda_E, lambda_T=lambda_T,
            u_min=_float(parser, s, "u_min"), u_max=_float(parser, s, "u_max"),
            slack_weight=_float(parser, s, "slack_weight"),
            control_period_steps=_int(parser, s, "control_period_steps"),
            constraint_margin=_float(parser, s, "constraint_margin"),
            solver=solver,
        )
    except (ValueError, TypeError) as exc:
        raise ConfigurationError(f"[mpc] {exc}") from exc


@dataclass(frozen=True)
class ExperimentSettings:
    days: int = 3
    seed: int = 7
    baseline_setpoint: float = 25.0
    comfort_min: float = 23.0
    comfort_max: float = 27.0


def experiment_from_parser(parser) -> ExperimentSettings:
    s = "experiment"
    out = ExperimentSettings(
        days=_int(parser, s, "days"), seed=_int(parser, s, "seed"),
        baseline_setpoint=_float(parser, s, "baseline_setpoint"),
        comfort_min=_float(parser, s, "comfort_min"),
        comfort_max=_float(parser, s, "comfort_max"),
    )
    if out.days < 1 or not out.comfort_min < out.comfort_max:
        raise ConfigurationError("[experiment] needs days >= 1 and comfort_min < comfort_max")
    return out


def snapshot(parser: configparser.ConfigParser, overrides: dict | None = None) -> str:
    """Serialise the effective configuration; ``overrides`` lands in ``[invocation]``."""
    out = configparser.ConfigParser()
    out.optionxform = str
    out.read_dict({s: dict(parser.items(s)) for s in parser.sections()})
    if overrides:
        out["invocation"] = {k: str(v) for k, v in overrides.items() if v is not None}
    buf = io.StringIO()
    out.write(buf)
    return buf.getvalue()
