"""Ground-truth building simulator.

Each zone is a 2R2C node pair (air + envelope) coupled to the outdoors, to
its own wall, and to neighbouring zones.  Heat enters the air node through
the zone's indoor unit (a "split") when both the split relay and the shared
compressor are on, and through solar gains.

    C_a dT_a/dt = (T_o - T_a)/R_o + (T_w - T_a)/R_w + sum_k (T_k - T_a)/R_k
                  + Q_heat * [split & comp] + A_sol * I_sol
    C_w dT_w/dt = (T_a - T_w)/R_w + (T_o - T_w)/R_wo

Integration is forward Euler at ``dt`` (10 s by default) while the recorded
frame is sampled every ``ts`` (120 s).  Relays are evaluated every ``dt`` on
the sensor reading: the air temperature rounded to 0.1 degC and held for
``sensor_period`` seconds (``ts`` by default, matching the BAS polling).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, IngestionError, InvalidInputError

RELAY_ON_BELOW = 1.5
RELAY_OFF_ABOVE = 0.5
N_ZONES = 10


@dataclass(frozen=True)
class ZoneParams:
    air_capacitance: float  # J/K
    wall_capacitance: float  # J/K
    r_outdoor: float  # K/W, air node to outdoors
    r_wall: float  # K/W, air node to wall node
    r_wall_outdoor: float = math.inf  # K/W, wall node to outdoors
    r_adjacent: tuple[tuple[int, float], ...] = ()  # (1-based zone id, K/W)
    heat_rate: float = 0.0  # W delivered while the split runs
    solar_aperture: float = 0.0  # m^2

    def __post_init__(self):
        for name in ("air_capacitance", "wall_capacitance"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be > 0")
        resistances = [self.r_outdoor, self.r_wall, self.r_wall_outdoor]
        resistances += [r for _, r in self.r_adjacent]
        if not all(r > 0 for r in resistances):
            raise ConfigurationError("all thermal resistances must be > 0")
        if self.heat_rate < 0 or self.solar_aperture < 0:
            raise ConfigurationError("heat_rate and solar_aperture must be >= 0")


@dataclass(frozen=True)
class PowerParams:
    comp_power: float = 0.0  # W while the compressor runs
    split_power: float = 0.0  # W per running split
    standby_power: float = 0.0  # W, always drawn

    def __post_init__(self):
        if min(self.comp_power, self.split_power, self.standby_power) < 0:
            raise ConfigurationError("power parameters must be >= 0")


@dataclass(frozen=True)
class WeatherSample:
    t_out: float
    humidity: float
    solar: float

    def __post_init__(self):
        if not 0.0 <= self.humidity <= 100.0:
            raise InvalidInputError(f"humidity {self.humidity} outside [0, 100]")
        if self.solar < 0:
            raise InvalidInputError(f"solar {self.solar} must be >= 0")


@dataclass
class SimState:
    clock: float
    t_zone: np.ndarray
    t_wall: np.ndarray
    split_on: np.ndarray
    comp_on: bool = False

    def __post_init__(self):
        self.t_zone = np.asarray(self.t_zone, dtype=float)
        self.t_wall = np.asarray(self.t_wall, dtype=float)
        self.split_on = np.asarray(self.split_on, dtype=bool)
        n = self.t_zone.shape
        if len(n) != 1 or self.t_wall.shape != n or self.split_on.shape != n:
            raise InvalidInputError("state arrays must be 1-D with equal lengths")
        if not (np.all(np.isfinite(self.t_zone)) and np.all(np.isfinite(self.t_wall))):
            raise InvalidInputError("state temperatures must be finite")
        self.comp_on = bool(self.comp_on)

    @property
    def n_zones(self) -> int:
        return self.t_zone.shape[0]

    def copy(self) -> "SimState":
        return SimState(self.clock, self.t_zone.copy(), self.t_wall.copy(),
                        self.split_on.copy(), self.comp_on)


def quantize(temps, decimals: int = 1):
    """Sensor reading: round to ``decimals`` places (0.1 degC by default)."""
    return np.round(np.asarray(temps, dtype=float), decimals)


def relay_step(setpoint: float, t_meas: float, split_on: bool) -> bool:
    """Asymmetric hysteresis relay of a single indoor unit."""
    if not (math.isfinite(setpoint) and math.isfinite(t_meas)):
        raise InvalidInputError("relay inputs must be finite")
    if t_meas < setpoint - RELAY_ON_BELOW:
        return True
    if t_meas > setpoint + RELAY_OFF_ABOVE:
        return False
    return bool(split_on)


def relay_update(setpoints, t_meas, split_on) -> np.ndarray:
    """Vectorised :func:`relay_step` over zones (or any broadcastable shape)."""
    setpoints = np.asarray(setpoints, dtype=float)
    t_meas = np.asarray(t_meas, dtype=float)
    on = t_meas < setpoints - RELAY_ON_BELOW
    off = t_meas > setpoints + RELAY_OFF_ABOVE
    return np.where(on, True, np.where(off, False, np.asarray(split_on, dtype=bool)))


def compressor_logic(split_on, n_zones: int = N_ZONES) -> bool:
    split_on = np.asarray(split_on, dtype=bool)
    if split_on.shape != (n_zones,):
        raise InvalidInputError(f"expected {n_zones} split states, got shape {split_on.shape}")
    return bool(split_on.any())


class ThermalNetwork:
    """Conductance form of a list of :class:`ZoneParams`, cached per parameter set."""

    def __init__(self, params: Sequence[ZoneParams]):
        n = len(params)
        self.n = n
        self.c_air = np.array([p.air_capacitance for p in params])
        self.c_wall = np.array([p.wall_capacitance for p in params])
        self.g_out = np.array([1.0 / p.r_outdoor for p in params])
        self.g_wall = np.array([1.0 / p.r_wall for p in params])
        self.g_wall_out = np.array([1.0 / p.r_wall_outdoor for p in params])
        self.heat = np.array([p.heat_rate for p in params])
        self.aperture = np.array([p.solar_aperture for p in params])
        g_adj = np.zeros((n, n))
        for i, p in enumerate(params):
            for zone_id, r in p.r_adjacent:
                j = zone_id - 1
                if not 0 <= j < n or j == i:
                    raise ConfigurationError(f"zone {i + 1}: bad adjacent zone id {zone_id}")
                g_adj[i, j] = 1.0 / r
        if not np.allclose(g_adj, g_adj.T, rtol=1e-12, atol=0.0):
            raise ConfigurationError("zone adjacency must be symmetric with equal resistances")
        self.g_adj = g_adj
        self.g_adj_sum = g_adj.sum(axis=1)
        # dt <= C / (sum of conductances at the node) keeps every row of the
        # Euler iteration matrix non-negative, so each update is a convex
        # combination of neighbour temperatures: stable and overshoot-free.
        with np.errstate(divide="ignore"):
            air_bound = self.c_air / (self.g_out + self.g_wall + self.g_adj_sum)
            wall_bound = self.c_wall / (self.g_wall + self.g_wall_out)
        self.dt_max = float(min(np.min(air_bound), np.min(wall_bound)))

    def derivatives(self, t_zone, t_wall, heating, weather: WeatherSample):
        q_air = (self.g_out * (weather.t_out - t_zone)
                 + self.g_wall * (t_wall - t_zone)
                 + self.g_adj @ t_zone - self.g_adj_sum * t_zone
                 + self.heat * heating
                 + self.aperture * weather.solar)
        q_wall = self.g_wall * (t_zone - t_wall) + self.g_wall_out * (weather.t_out - t_wall)
        return q_air / self.c_air, q_wall / self.c_wall


@lru_cache(maxsize=32)
def _network(params: tuple[ZoneParams, ...]) -> ThermalNetwork:
    return ThermalNetwork(params)


def thermal_network(params: Sequence[ZoneParams]) -> ThermalNetwork:
    return _network(tuple(params))


def thermal_step(state: SimState, params: Sequence[ZoneParams], weather: WeatherSample,
                 dt: float) -> SimState:
    """Advance air and wall temperatures by one explicit Euler step.

    Relay and compressor states are carried over untouched.
    """
    if not dt > 0:
        raise InvalidInputError(f"dt must be > 0, got {dt}")
    net = thermal_network(params)
    if net.n != state.n_zones:
        raise InvalidInputError(f"{net.n} zone parameter sets for {state.n_zones} zones")
    if dt > net.dt_max:
        raise ConfigurationError(f"dt={dt} s exceeds the Euler stability bound {net.dt_max:.3g} s")
    heating = (state.split_on & state.comp_on).astype(float)
    d_air, d_wall = net.derivatives(state.t_zone, state.t_wall, heating, weather)
    return SimState(state.clock + dt, state.t_zone + dt * d_air, state.t_wall + dt * d_wall,
                    state.split_on.copy(), state.comp_on)


def energy_step(state: SimState, power: PowerParams, dt: float) -> float:
    """Electrical energy in Wh drawn over ``dt`` seconds in the given state."""
    if not dt > 0:
        raise InvalidInputError(f"dt must be > 0, got {dt}")
    watts = (power.standby_power
             + power.comp_power * float(state.comp_on)
             + power.split_power * int(np.count_nonzero(state.split_on)))
    return watts * dt / 3600.0


# ---------------------------------------------------------------------------
# Weather
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeatherProfile:
    t_out_mean: float = 5.0
    t_out_amplitude: float = 4.0
    t_out_peak_hour: float = 15.0
    t_out_noise: float = 1.0  # stationary std of the AR(1) anomaly, degC
    noise_corr_hours: float = 6.0
    humidity_mean: float = 75.0
    humidity_per_degc: float = -2.5
    humidity_noise: float = 5.0
    solar_peak: float = 350.0  # W/m^2 on a clear day
    sunrise_hour: float = 6.0
    sunset_hour: float = 18.0
    cloud_min: float = 0.3  # daily clear-sky fraction drawn from [cloud_min, 1]


@dataclass(frozen=True)
class WeatherSeries:
    t_out: np.ndarray
    humidity: np.ndarray
    solar: np.ndarray

    def __len__(self):
        return len(self.t_out)

    def __getitem__(self, i) -> WeatherSample:
        return WeatherSample(float(self.t_out[i]), float(self.humidity[i]), float(self.solar[i]))

    def slice(self, start, stop) -> "WeatherSeries":
        return WeatherSeries(self.t_out[start:stop], self.humidity[start:stop], self.solar[start:stop])

    def as_array(self) -> np.ndarray:
        return np.column_stack([self.t_out, self.humidity, self.solar])


def _ar1(rng, n, std, corr_steps):
    if std == 0 or n == 0:
        return np.zeros(n)
    phi = math.exp(-1.0 / corr_steps)
    innov = rng.normal(0.0, std * math.sqrt(1.0 - phi * phi), size=n)
    out = np.empty(n)
    out[0] = rng.normal(0.0, std)
    for i in range(1, n):
        out[i] = phi * out[i - 1] + innov[i]
    return out


def synth_weather(seed: int, days: int, profile: WeatherProfile = WeatherProfile(),
                  ts: float = 120.0) -> WeatherSeries:
    """Diurnal synthetic weather sampled every ``ts`` seconds from local midnight."""
    if days < 1:
        raise InvalidInputError("days must be >= 1")
    n = int(round(days * 86400 / ts))
    rng = np.random.default_rng(seed)
    hours = np.arange(n) * ts / 3600.0
    hod = hours % 24.0
    corr_steps = profile.noise_corr_hours * 3600.0 / ts

    anomaly = _ar1(rng, n, profile.t_out_noise, corr_steps)
    t_out = (profile.t_out_mean
             + profile.t_out_amplitude * np.cos(2 * np.pi * (hod - profile.t_out_peak_hour) / 24.0)
             + anomaly)

    day_len = profile.sunset_hour - profile.sunrise_hour
    shape = np.maximum(0.0, np.sin(np.pi * (hod - profile.sunrise_hour) / day_len))
    shape[(hod < profile.sunrise_hour) | (hod > profile.sunset_hour)] = 0.0
    clouds = rng.uniform(profile.cloud_min, 1.0, size=days + 1)[(hours // 24).astype(int)]
    solar = profile.solar_peak * clouds * shape

    hum_noise = _ar1(rng, n, profile.humidity_noise, corr_steps)
    humidity = np.clip(profile.humidity_mean
                       + profile.humidity_per_degc * (t_out - profile.t_out_mean)
                       + hum_noise, 0.0, 100.0)
    return WeatherSeries(t_out, humidity, solar)


# ---------------------------------------------------------------------------
# Closed simulation
# ---------------------------------------------------------------------------

@dataclass
class StepRecord:
    """One relay decision inside an interval, kept only when tracing."""
    clock: float
    t_meas: np.ndarray
    setpoints: np.ndarray
    split_before: np.ndarray
    split_after: np.ndarray
    comp_on: bool
    energy: float
    t_zone: np.ndarray


@dataclass
class IntervalResult:
    t_meas: np.ndarray  # sensor readings at the start of the interval
    comp_mode: int  # compressor state at the start of the interval
    energy: float  # Wh consumed over the interval
    split_on: np.ndarray  # relay states at the start of the interval


class Plant:
    """Stateful simulator advanced one sampling interval at a time."""

    def __init__(self, params: Sequence[ZoneParams], power: PowerParams, state: SimState,
                 ts: float = 120.0, dt: float = 10.0, sensor_period: float | None = None,
                 trace: bool = False):
        self.params = tuple(params)
        self.power = power
        self.network = thermal_network(self.params)
        if state.n_zones != self.network.n:
            raise InvalidInputError("state and parameters disagree on zone count")
        if not dt > 0 or not ts > 0:
            raise InvalidInputError("ts and dt must be > 0")
        steps = ts / dt
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigurationError(f"internal dt={dt} must divide ts={ts}")
        if dt > self.network.dt_max:
            raise ConfigurationError(
                f"dt={dt} s exceeds the Euler stability bound {self.network.dt_max:.3g} s")
        self.ts = float(ts)
        self.dt = float(dt)
        self.substeps = int(round(steps))
        sensor_period = ts if sensor_period is None else sensor_period
        hold = sensor_period / dt
        if hold < 1 - 1e-9 or abs(hold - round(hold)) > 1e-9 or self.substeps % round(hold):
            raise ConfigurationError(
                f"sensor_period={sensor_period} must be a multiple of dt dividing ts")
        self.sensor_hold = int(round(hold))
        self.state = state.copy()
        self.trace: list[StepRecord] | None = [] if trace else None

    @property
    def n_zones(self) -> int:
        return self.network.n

    def measure(self) -> np.ndarray:
        return quantize(self.state.t_zone)

    def advance(self, setpoints, weather: WeatherSample) -> IntervalResult:
        setpoints = np.asarray(setpoints, dtype=float)
        if setpoints.shape != (self.n_zones,) or not np.all(np.isfinite(setpoints)):
            raise InvalidInputError("setpoints must be finite, one per zone")
        st = self.state
        energy = 0.0
        first = None
        for k in range(self.substeps):
            if k % self.sensor_hold == 0:
                meas = quantize(st.t_zone)
            before = st.split_on
            st.split_on = relay_update(setpoints, meas, before)
            st.comp_on = bool(st.split_on.any())
            e = energy_step(st, self.power, self.dt)
            if first is None:
                first = IntervalResult(meas, int(st.comp_on), 0.0, st.split_on.copy())
            if self.trace is not None:
                self.trace.append(StepRecord(st.clock, meas, setpoints, before.copy(),
                                             st.split_on.copy(), st.comp_on, e, st.t_zone.copy()))
            energy += e
            heating = (st.split_on & st.comp_on).astype(float)
            d_air, d_wall = self.network.derivatives(st.t_zone, st.t_wall, heating, weather)
            st.t_zone = st.t_zone + self.dt * d_air
            st.t_wall = st.t_wall + self.dt * d_wall
            st.clock += self.dt
        first.energy = energy
        return first


def initial_state(n_zones: int = N_ZONES, t_zone: float = 24.0, t_wall: float = 21.0,
                  clock: float = 0.0) -> SimState:
    return SimState(clock, np.full(n_zones, float(t_zone)), np.full(n_zones, float(t_wall)),
                    np.zeros(n_zones, dtype=bool), False)


def simulate(params: Sequence[ZoneParams], power: PowerParams, weather_series: WeatherSeries,
             setpoint_schedule, duration: float, dt: float = 10.0, ts: float = 120.0,
             state: SimState | None = None, start="2019-12-01T00:00:00Z",
             sensor_period: float | None = None):
    """Run the relay-controlled building open-loop on a setpoint schedule.

    Returns a :class:`~nnmpc.data.TimeSeriesFrame` with one row per ``ts``.
    """
    from .data import TimeSeriesFrame

    n_rows = duration / ts
    if abs(n_rows - round(n_rows)) > 1e-9 or n_rows < 1:
        raise InvalidInputError(f"duration {duration} s is not a positive multiple of ts={ts}")
    n_rows = int(round(n_rows))
    schedule = np.asarray(setpoint_schedule, dtype=float)
    if schedule.ndim != 2 or schedule.shape[1] != len(params):
        raise IngestionError(f"setpoint schedule must have shape (steps, {len(params)})")
    if schedule.shape[0] < n_rows:
        raise IngestionError("setpoint schedule ends before the requested duration",
                             row=schedule.shape[0])
    if len(weather_series) < n_rows:
        raise IngestionError("weather series ends before the requested duration",
                             row=len(weather_series))
    if not np.all(np.isfinite(schedule[:n_rows])):
        bad = int(np.argwhere(~np.isfinite(schedule[:n_rows]))[0, 0])
        raise IngestionError("setpoint schedule has a gap", row=bad)

    if state is None:
        state = initial_state(len(params))
    plant = Plant(params, power, state, ts=ts, dt=dt, sensor_period=sensor_period)
    t_meas = np.empty((n_rows, len(params)))
    comp = np.empty(n_rows, dtype=int)
    energy = np.empty(n_rows)
    for k in range(n_rows):
        res = plant.advance(schedule[k], weather_series[k])
        t_meas[k] = res.t_meas
        comp[k] = res.comp_mode
        energy[k] = res.energy
    return TimeSeriesFrame.from_arrays(start, ts, weather_series.slice(0, n_rows), t_meas,
                                       schedule[:n_rows], comp, energy)
