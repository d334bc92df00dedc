"""Dataset ingestion and NARX regressor construction.

A :class:`TimeSeriesFrame` row ``k`` holds what is known at timestamp
``t_k``: the weather and quantised zone temperatures measured at ``t_k``,
the setpoints commanded for ``[t_k, t_k + Ts)``, the compressor state at
the start of that interval, and the energy (Wh) drawn over it.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import IngestionError, InvalidInputError

TS = 120.0
N_ZONES = 10
WEATHER_COLUMNS = ["t_out", "humidity", "solar"]


def zone_columns(n_zones: int = N_ZONES) -> list[str]:
    return [f"t_zone_{j}" for j in range(1, n_zones + 1)]


def setpoint_columns(n_zones: int = N_ZONES) -> list[str]:
    return [f"sp_zone_{j}" for j in range(1, n_zones + 1)]


def frame_columns(n_zones: int = N_ZONES) -> list[str]:
    return (["timestamp"] + WEATHER_COLUMNS + zone_columns(n_zones)
            + setpoint_columns(n_zones) + ["comp_mode", "energy"])


COLUMNS = frame_columns()
_TS_FORMAT = "%Y-%m-%dT%H:%M:%SZ"


class TimeSeriesFrame:
    """Uniformly sampled building log; wraps a validated :class:`pandas.DataFrame`."""

    def __init__(self, df: pd.DataFrame, ts: float = TS):
        self.ts = float(ts)
        n_zones = sum(1 for c in df.columns if c.startswith("t_zone_"))
        if list(df.columns) != frame_columns(n_zones):
            raise IngestionError("columns do not match the frame schema")
        self.n_zones = n_zones
        self.df = df.reset_index(drop=True)
        self._validate()

    def _validate(self):
        df = self.df
        if len(df) == 0:
            raise IngestionError("frame is empty")
        for col in df.columns[1:]:
            values = df[col].to_numpy()
            bad = ~np.isfinite(values.astype(float))
            if bad.any():
                raise IngestionError("missing or non-finite value", row=int(np.argmax(bad)),
                                     column=col)
        comp = df["comp_mode"].to_numpy()
        bad = ~np.isin(comp, (0, 1))
        if bad.any():
            raise IngestionError("comp_mode must be 0 or 1", row=int(np.argmax(bad)),
                                 column="comp_mode")
        if len(df) > 1:
            secs = (df["timestamp"] - df["timestamp"].iloc[0]).dt.total_seconds().to_numpy()
            steps = np.diff(secs)
            for bad, kind in ((steps <= 0, "non-increasing"),
                              (np.abs(steps - self.ts) > 1e-6, "non-uniform")):
                if bad.any():
                    raise IngestionError(f"{kind} timestamps (expected {self.ts:g} s spacing)",
                                         row=int(np.argmax(bad)) + 1, column="timestamp")

    @classmethod
    def from_arrays(cls, start, ts, weather, t_zone, setpoints, comp_mode, energy):
        """Build a frame from column blocks; ``weather`` is a WeatherSeries or (n, 3) array."""
        w = weather.as_array() if hasattr(weather, "as_array") else np.asarray(weather, float)
        t_zone = np.asarray(t_zone, float)
        n, n_zones = t_zone.shape
        stamps = pd.Timestamp(start).tz_convert("UTC") if pd.Timestamp(start).tzinfo \
            else pd.Timestamp(start, tz="UTC")
        index = stamps + pd.to_timedelta(np.arange(n) * ts, unit="s")
        data = {"timestamp": index}
        for i, name in enumerate(WEATHER_COLUMNS):
            data[name] = w[:n, i]
        for j, name in enumerate(zone_columns(n_zones)):
            data[name] = t_zone[:, j]
        sp = np.asarray(setpoints, float)
        for j, name in enumerate(setpoint_columns(n_zones)):
            data[name] = sp[:n, j]
        data["comp_mode"] = np.asarray(comp_mode, dtype=np.int64)[:n]
        data["energy"] = np.asarray(energy, float)[:n]
        return cls(pd.DataFrame(data), ts=ts)

    def __len__(self):
        return len(self.df)

    def __getitem__(self, item) -> np.ndarray:
        return self.df[item].to_numpy()

    @property
    def timestamps(self) -> pd.DatetimeIndex:
        return pd.DatetimeIndex(self.df["timestamp"])

    def weather(self) -> np.ndarray:
        return self.df[WEATHER_COLUMNS].to_numpy(float)

    def zone_temps(self) -> np.ndarray:
        return self.df[zone_columns(self.n_zones)].to_numpy(float)

    def setpoints(self) -> np.ndarray:
        return self.df[setpoint_columns(self.n_zones)].to_numpy(float)

    def slice(self, start, stop) -> "TimeSeriesFrame":
        return TimeSeriesFrame(self.df.iloc[start:stop].copy(), ts=self.ts)

    def equals(self, other: "TimeSeriesFrame") -> bool:
        return self.ts == other.ts and self.df.equals(other.df)


def load_csv(path, ts: float = TS, n_zones: int = N_ZONES) -> TimeSeriesFrame:
    path = Path(path)
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
    expected = frame_columns(n_zones)
    if header != expected:
        missing = [c for c in expected if c not in (header or [])]
        raise IngestionError(f"header mismatch in {path.name}; missing {missing[:3]}" if missing
                             else f"header mismatch in {path.name}; unexpected order or extras",
                             column="header")
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    data = {}
    try:
        stamps = pd.to_datetime(raw["timestamp"], utc=True, format=_TS_FORMAT)
    except (ValueError, TypeError):
        parsed = pd.to_datetime(raw["timestamp"], utc=True, format=_TS_FORMAT, errors="coerce")
        bad = int(np.argmax(parsed.isna().to_numpy()))
        raise IngestionError("unparseable timestamp", row=bad, column="timestamp") from None
    data["timestamp"] = stamps
    for col in expected[1:]:
        values = pd.to_numeric(raw[col], errors="coerce")
        if values.isna().any():
            bad = int(np.argmax(values.isna().to_numpy()))
            raise IngestionError("missing or unparseable value", row=bad, column=col)
        if col == "comp_mode":
            if not np.all(np.isin(values.to_numpy(), (0, 1))):
                bad = int(np.argmax(~np.isin(values.to_numpy(), (0, 1))))
                raise IngestionError("comp_mode must be 0 or 1", row=bad, column=col)
            values = values.astype(np.int64)
        else:
            values = raw[col].map(float)
        data[col] = values.to_numpy()
    return TimeSeriesFrame(pd.DataFrame(data), ts=ts)


def write_csv(frame: TimeSeriesFrame, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = frame.df
    stamps = df["timestamp"].dt.strftime(_TS_FORMAT).to_numpy()
    cols = list(df.columns)
    float_blocks = {c: df[c].to_numpy() for c in cols[1:]}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for i in range(len(df)):
            row = [stamps[i]]
            for c in cols[1:]:
                v = float_blocks[c][i]
                row.append(str(int(v)) if c == "comp_mode" else repr(float(v)))
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Lagged regressors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LagSpec:
    """Lag orders; a lag of ``k`` means offsets ``0..k`` (``1..k`` for energy history)."""
    delta_y: int
    delta_d: int
    delta_u: int

    def __post_init__(self):
        if min(self.delta_y, self.delta_d, self.delta_u) < 0:
            raise InvalidInputError("lag orders must be >= 0")


ENERGY_LAGS = LagSpec(4, 3, 3)
ZONE_LAGS = LagSpec(3, 3, 3)


def parse_target(target: str, n_zones: int = N_ZONES) -> tuple[str, int | None]:
    """``"energy"`` -> ("energy", None); ``"zone:3"`` -> ("zone", 3)."""
    if target == "energy":
        return "energy", None
    if target.startswith("zone:"):
        try:
            j = int(target.split(":", 1)[1])
        except ValueError:
            raise InvalidInputError(f"bad target {target!r}") from None
        if not 1 <= j <= n_zones:
            raise InvalidInputError(f"zone index {j} outside 1..{n_zones}")
        return "zone", j
    raise InvalidInputError(f"unknown target {target!r}; use 'energy' or 'zone:<j>'")


def build_manifest(target: str, lagspec: LagSpec, n_zones: int = N_ZONES) -> list[tuple[str, int]]:
    """Ordered (signal, lag) pairs of the regressor vector; signal-major, ascending lag."""
    kind, j = parse_target(target, n_zones)
    manifest: list[tuple[str, int]] = []

    def add(signals, lags):
        for s in signals:
            manifest.extend((s, lag) for lag in lags)

    if kind == "energy":
        add(["energy"], range(1, lagspec.delta_y + 1))
        add(WEATHER_COLUMNS + zone_columns(n_zones), range(lagspec.delta_d + 1))
        add(setpoint_columns(n_zones) + ["comp_mode"], range(lagspec.delta_u + 1))
    else:
        add([f"t_zone_{j}"], range(lagspec.delta_y + 1))
        add(WEATHER_COLUMNS, range(lagspec.delta_d + 1))
        add([f"sp_zone_{j}"], range(lagspec.delta_u + 1))
    return manifest


def target_signal(target: str) -> tuple[str, int]:
    """(signal, lead) of the regression target relative to the sample time."""
    kind, j = parse_target(target)
    return ("energy", 0) if kind == "energy" else (f"t_zone_{j}", 1)


def persistence_column(target: str) -> tuple[str, int]:
    """Manifest entry that a naive last-value predictor copies."""
    kind, j = parse_target(target)
    return ("energy", 1) if kind == "energy" else (f"t_zone_{j}", 0)


@dataclass(frozen=True)
class LaggedDataset:
    X: np.ndarray
    y: np.ndarray
    manifest: tuple[tuple[str, int], ...]
    target: str
    lagspec: LagSpec
    index: np.ndarray  # frame row of each sample time t

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[1] != len(self.manifest):
            raise InvalidInputError("regressor width does not match the manifest")
        if self.y.shape != (self.X.shape[0],):
            raise InvalidInputError("one target per regressor row required")

    def __len__(self):
        return self.X.shape[0]

    @property
    def feature_names(self) -> list[str]:
        return [f"{s}[t-{lag}]" for s, lag in self.manifest]

    def column(self, signal: str, lag: int) -> np.ndarray:
        return self.X[:, self.manifest.index((signal, lag))]

    def persistence(self) -> np.ndarray:
        return self.column(*persistence_column(self.target))

    def take(self, rows) -> "LaggedDataset":
        return LaggedDataset(self.X[rows], self.y[rows], self.manifest, self.target,
                             self.lagspec, self.index[rows])


def make_lagged_samples(frame: TimeSeriesFrame, lagspec: LagSpec, target: str) -> LaggedDataset:
    n_zones = frame.n_zones
    manifest = build_manifest(target, lagspec, n_zones)
    tsig, lead = target_signal(target)
    lookback = max(lag for _, lag in manifest)
    n = len(frame)
    first, last = lookback, n - 1 - lead
    if n <= lookback + 1 or last < first:
        raise InvalidInputError(f"frame of {n} rows too short for lookback {lookback}")
    t = np.arange(first, last + 1)
    cache = {}
    X = np.empty((len(t), len(manifest)))
    for c, (sig, lag) in enumerate(manifest):
        if sig not in cache:
            cache[sig] = frame[sig].astype(float)
        X[:, c] = cache[sig][t - lag]
    y = frame[tsig].astype(float)[t + lead]
    return LaggedDataset(X, y, tuple(manifest), target, lagspec, t)


def write_manifest(dataset: LaggedDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["column", "signal", "lag"])
        for i, (sig, lag) in enumerate(dataset.manifest):
            w.writerow([i, sig, lag])


def chronological_split(dataset: LaggedDataset, fraction: float):
    if not 0.0 < fraction < 1.0:
        raise InvalidInputError("split fraction must lie strictly between 0 and 1")
    cut = math.floor(fraction * len(dataset))
    return dataset.take(slice(0, cut)), dataset.take(slice(cut, None))


# ---------------------------------------------------------------------------
# Normalisation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray
    names: tuple[str, ...] = ()

    def apply(self, x):
        return (np.asarray(x, float) - self.mean) / self.std

    def invert(self, x_norm):
        return np.asarray(x_norm, float) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"names": list(self.names), "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Normalizer":
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float), tuple(d["names"]))


def fit_normalizer(data, names: Sequence[str] | None = None) -> Normalizer:
    """Per-feature z-score statistics.

    ``data`` is either a :class:`LaggedDataset` (regressors are used) or an
    array of shape (n,) or (n, features).  Zero-variance features are
    rejected by name.
    """
    if isinstance(data, LaggedDataset):
        names = data.feature_names
        data = data.X
    values = np.asarray(data, float)
    squeeze = values.ndim == 1
    if squeeze:
        values = values[:, None]
    if values.shape[0] == 0:
        raise InvalidInputError("cannot fit a normalizer on zero rows")
    if names is None:
        names = [f"x{i}" for i in range(values.shape[1])]
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    for i, s in enumerate(std):
        if not s > 1e-12 * max(1.0, abs(mean[i])):
            raise InvalidInputError(f"feature {names[i]!r} has zero variance")
    if squeeze:
        return Normalizer(mean[:1].copy(), std[:1].copy(), tuple(names[:1]))
    return Normalizer(mean, std, tuple(names))


def apply(normalizer: Normalizer, x):
    return normalizer.apply(x)


def invert(normalizer: Normalizer, x_norm):
    return normalizer.invert(x_norm)


# ---------------------------------------------------------------------------
# Excitation
# ---------------------------------------------------------------------------

def excitation_segments(seed: int, zones: int = N_ZONES, days: int = 1, ts: float = TS,
                        low: int = 22, high: int = 28, hold_minutes=(60, 120)):
    """Random setpoint segments as ``(zone, start, length, value)`` tuples.

    Each segment draws a value uniformly from ``low..high`` and a hold time
    uniformly from ``hold_minutes`` on the ``ts`` grid; a zone's final
    segment is cut at the end of the horizon.
    """
    if days < 1:
        raise InvalidInputError("days must be >= 1")
    n = int(round(days * 86400 / ts))
    lo_steps = math.ceil(hold_minutes[0] * 60 / ts)
    hi_steps = math.floor(hold_minutes[1] * 60 / ts)
    rng = np.random.default_rng(seed)
    segments = []
    for z in range(zones):
        k = 0
        while k < n:
            value = int(rng.integers(low, high + 1))
            hold = int(rng.integers(lo_steps, hi_steps + 1))
            segments.append((z, k, min(hold, n - k), value))
            k += hold
    return segments


def excitation_schedule(seed: int, zones: int = N_ZONES, days: int = 1, ts: float = TS,
                        low: int = 22, high: int = 28, hold_minutes=(60, 120)) -> np.ndarray:
    """Piecewise-constant integer setpoints (steps, zones); see :func:`excitation_segments`."""
    n = int(round(days * 86400 / ts))
    out = np.empty((n, zones))
    for z, start, length, value in excitation_segments(seed, zones, days, ts, low, high,
                                                       hold_minutes):
        out[start:start + length, z] = value
    return out
