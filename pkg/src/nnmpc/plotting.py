"""PNG renderings of the CSV outputs written by the CLI."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_error_density(edges, hist_model, hist_persistence, target: str, path) -> Path:
    """Absolute-error histograms of a model and of persistence."""
    edges = np.asarray(edges, float)
    centers = 0.5 * (edges[:-1] + edges[1:])
    width = np.diff(edges)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for counts, label in ((hist_persistence, "persistence"), (hist_model, "model")):
        counts = np.asarray(counts, float)
        total = counts.sum()
        density = counts / (total * width) if total else counts
        ax.step(centers, density, where="mid", label=label)
    ax.set_yscale("log")
    ax.set_xlabel("absolute error")
    ax.set_ylabel("density")
    ax.set_title(target)
    ax.legend()
    return _save(fig, path)


def plot_temperatures(temps: pd.DataFrame, labels, comfort, path) -> Path:
    """Pooled zone-temperature mean with min/max envelope for two runs.

    ``temps`` carries ``timestamp`` plus ``<label>_mean/_min/_max`` columns.
    """
    t = pd.to_datetime(temps["timestamp"])
    fig, ax = plt.subplots(figsize=(9, 3.5))
    for label in labels:
        line, = ax.plot(t, temps[f"{label}_mean"], lw=1.0, label=label)
        ax.fill_between(t, temps[f"{label}_min"], temps[f"{label}_max"],
                        color=line.get_color(), alpha=0.15, lw=0)
    for bound in comfort:
        ax.axhline(bound, color="k", ls="--", lw=0.8)
    ax.set_ylabel("zone temperature [°C]")
    ax.legend(loc="upper right")
    fig.autofmt_xdate()
    return _save(fig, path)


def plot_cumulative(series: pd.DataFrame, labels, path) -> Path:
    t = pd.to_datetime(series["timestamp"])
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(9, 5), sharex=True)
    ax1.plot(t, series["cum_energy_a_kwh"], label=labels[0])
    ax1.plot(t, series["cum_energy_b_kwh"], label=labels[1])
    ax1.set_ylabel("cumulative energy [kWh]")
    ax1.legend()
    ax2.plot(t, series["cum_saving_kwh"], color="tab:green")
    ax2.axhline(0.0, color="k", lw=0.6)
    ax2.set_ylabel(f"{labels[0]} - {labels[1]} [kWh]")
    fig.autofmt_xdate()
    return _save(fig, path)


def plot_weather(dist: pd.DataFrame, labels, path) -> Path:
    """Weather histograms; ``dist`` has signal, bin_lo, bin_hi, count_a, count_b."""
    signals = list(dict.fromkeys(dist["signal"]))
    fig, axes = plt.subplots(1, len(signals), figsize=(4 * len(signals), 3))
    for ax, sig in zip(np.atleast_1d(axes), signals):
        sub = dist[dist["signal"] == sig]
        centers = 0.5 * (sub["bin_lo"] + sub["bin_hi"])
        ax.step(centers, sub["count_a"], where="mid", label=labels[0])
        ax.step(centers, sub["count_b"], where="mid", label=labels[1], ls="--")
        ax.set_title(sig)
    np.atleast_1d(axes)[0].legend()
    return _save(fig, path)
