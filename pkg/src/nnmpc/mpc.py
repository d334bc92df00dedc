"""Receding-horizon setpoint optimisation over learned NARX models.

The horizon problem is solved by single shooting: the decision variables
are the continuous setpoints ``u[N, zones]``; the energy and temperature
trajectories are produced by rolling the networks forward, and comfort
slacks are eliminated in closed form,

    eps[t, j] = max(0, t_min[j] - T[t, j], T[t, j] - t_max[j]),

which is the minimiser of ``slack_weight * eps`` over ``eps >= violation``.
What remains is a box-constrained smooth-ish problem solved by projected
Adam from several starting points at once.  While descending, the hinge
is replaced by a one-sided Huber of width ``hinge_width``; reported costs
always use the exact hinge.  Step sizes are per coordinate, halved when
that coordinate's gradient changes sign.

Compressor mode is a regressor of the energy model but not a decision
variable; over the horizon it is produced by replaying the zone relays on
the predicted temperatures and is held fixed while descending.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import WEATHER_COLUMNS, parse_target
from .errors import ConfigurationError, InvalidInputError, SolverError
from .nn import MLPModel
from .plant import quantize, relay_update


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 200  # per descent phase
    step_rule: str = "adam"
    step_size: float = 0.1  # degC
    tol_rel: float = 1e-4
    phases: int = 3
    restarts: tuple[float, ...] = (23.0, 25.0, 27.0)
    hinge_width: float = 0.05  # degC; 0 descends on the exact hinge
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.step_rule != "adam":
            raise ConfigurationError(f"unsupported step_rule {self.step_rule!r}")
        if self.max_iters < 0 or self.phases < 1 or self.step_size <= 0:
            raise ConfigurationError("max_iters >= 0, phases >= 1, step_size > 0 required")


@dataclass(frozen=True)
class MPCConfig:
    t_ref: tuple[float, ...] = (25.0,) * 10
    t_min: tuple[float, ...] = (23.0,) * 10
    t_max: tuple[float, ...] = (27.0,) * 10
    N: int = 10
    lambda_E: float = 1.0
    lambda_T: float = 0.0
    u_min: float = 22.0
    u_max: float = 28.0
    slack_weight: float = 100.0
    control_period_steps: int = 3
    # comfort bounds are tightened by this much inside the optimiser so that
    # model error does not push the plant across the real bounds
    constraint_margin: float = 0.0
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        n = len(self.t_ref)
        if len(self.t_min) != n or len(self.t_max) != n:
            raise ConfigurationError("t_ref, t_min, t_max must have one entry per zone")
        if self.N < 1 or self.control_period_steps < 1:
            raise ConfigurationError("N and control_period_steps must be >= 1")
        if self.lambda_E < 0 or self.lambda_T < 0:
            raise ConfigurationError("lambda_E and lambda_T must be >= 0")
        if not all(lo < hi for lo, hi in zip(self.t_min, self.t_max)):
            raise ConfigurationError("t_min must be < t_max in every zone")
        if not self.u_min < self.u_max:
            raise ConfigurationError("u_min must be < u_max")
        if not self.slack_weight > 0:
            raise ConfigurationError("slack_weight must be > 0")
        if self.constraint_margin < 0 or not all(
                lo + 2 * self.constraint_margin < hi for lo, hi in zip(self.t_min, self.t_max)):
            raise ConfigurationError("constraint_margin must be >= 0 and leave a non-empty band")

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Comfort bounds as seen by the optimiser (tightened by the margin)."""
        m = self.constraint_margin
        return np.asarray(self.t_min, float) + m, np.asarray(self.t_max, float) - m

    @property
    def n_zones(self) -> int:
        return len(self.t_ref)


@dataclass
class HorizonHistory:
    """Recent plant record ending at the current sample ``k``.

    ``weather`` and ``t_zone`` cover times ``k-H+1 .. k``; ``setpoints``,
    ``comp_mode`` and ``energy`` cover ``k-H+1 .. k-1`` (the interval that
    starts at ``k`` has not been decided yet).  ``split_on`` holds the relay
    states in force just before ``k``.
    """
    weather: np.ndarray
    t_zone: np.ndarray
    setpoints: np.ndarray
    comp_mode: np.ndarray
    energy: np.ndarray
    split_on: np.ndarray
    index: int = 0

    def __post_init__(self):
        self.weather = np.asarray(self.weather, float)
        self.t_zone = np.asarray(self.t_zone, float)
        self.setpoints = np.asarray(self.setpoints, float)
        self.comp_mode = np.asarray(self.comp_mode, float)
        self.energy = np.asarray(self.energy, float)
        self.split_on = np.asarray(self.split_on, bool)
        h = self.t_zone.shape[0]
        if h < 1 or self.weather.shape != (h, 3):
            raise InvalidInputError("weather/t_zone must cover the same samples")
        n = self.t_zone.shape[1]
        if (self.setpoints.shape != (h - 1, n) or self.comp_mode.shape != (h - 1,)
                or self.energy.shape != (h - 1,) or self.split_on.shape != (n,)):
            raise InvalidInputError("setpoint/comp/energy history must end one sample earlier")

    @property
    def depth(self) -> int:
        return self.t_zone.shape[0]

    @property
    def n_zones(self) -> int:
        return self.t_zone.shape[1]

    @classmethod
    def from_frame(cls, frame, k: int, split_on, depth: int) -> "HorizonHistory":
        """History at row ``k`` of a :class:`~nnmpc.data.TimeSeriesFrame`."""
        lo = k - depth + 1
        if lo < 0:
            raise InvalidInputError(f"row {k} has fewer than {depth} samples of history")
        return cls(frame.weather()[lo:k + 1], frame.zone_temps()[lo:k + 1],
                   frame.setpoints()[lo:k], frame["comp_mode"][lo:k].astype(float),
                   frame["energy"][lo:k].astype(float), split_on, index=k)


@dataclass
class MPCSolution:
    u_cont: np.ndarray  # (N, zones)
    u_int: np.ndarray  # (zones,)
    eps: np.ndarray  # (N, zones)
    E: np.ndarray  # (N,)
    T: np.ndarray  # (N, zones), T[t] is the temperature at k + t + 1
    comp: np.ndarray  # (N,)
    cost: float
    iterations: int
    converged: bool
    restarts_used: int
    candidate_costs: list[float] = field(default_factory=list)
    initial_costs: list[float] = field(default_factory=list)
    chosen: int = 0

    def record(self, timestamp=None) -> dict:
        return {
            "timestamp": timestamp,
            "cost": self.cost,
            "candidate_costs": self.candidate_costs,
            "initial_costs": self.initial_costs,
            "chosen": self.chosen,
            "iterations": self.iterations,
            "converged": self.converged,
            "u_int": [int(v) for v in self.u_int],
            "u_cont_first": self.u_cont[0].tolist(),
            "predicted_E": self.E.tolist(),
            "predicted_T": self.T.tolist(),
            "comp_seq": [int(c) for c in self.comp],
            "slacks": self.eps.tolist(),
        }


# ---------------------------------------------------------------------------
# Model bundle
# ---------------------------------------------------------------------------

def _signal_layout(n_zones: int) -> dict[str, int]:
    names = list(WEATHER_COLUMNS)
    names += [f"t_zone_{j}" for j in range(1, n_zones + 1)]
    names += [f"sp_zone_{j}" for j in range(1, n_zones + 1)]
    names += ["comp_mode", "energy"]
    return {name: i for i, name in enumerate(names)}


class _Stack:
    """``G`` same-shaped MLPs evaluated side by side on inputs of shape (S, G, in)."""

    def __init__(self, models: Sequence[MLPModel], layout: dict[str, int], lookback: int):
        dims = models[0].layer_dims
        if any(m.layer_dims != dims for m in models):
            raise InvalidInputError("stacked models must share layer dimensions")
        self.W = [np.stack([m.weights[i] for m in models]) for i in range(len(dims) - 1)]
        self.b = [np.stack([m.biases[i] for m in models]) for i in range(len(dims) - 1)]
        self.WT = [np.ascontiguousarray(np.swapaxes(W, 1, 2)) for W in self.W]
        self.x_mu = np.stack([m.input_normalizer.mean for m in models])
        self.x_sd = np.stack([m.input_normalizer.std for m in models])
        self.y_mu = np.array([m.target_normalizer.mean[0] for m in models])
        self.y_sd = np.array([m.target_normalizer.std[0] for m in models])
        try:
            self.sig = np.array([[layout[s] for s, _ in m.manifest] for m in models])
        except KeyError as exc:
            raise InvalidInputError(f"model regressor {exc} has no rollout signal") from None
        self.lag = np.array([[lag for _, lag in m.manifest] for m in models])
        if self.lag.max() > lookback:
            raise InvalidInputError("model lag exceeds the rollout lookback")
        # scatter matrix from flattened input gradients to the local window
        # [p - lookback, p] x signals
        g, n_in = self.sig.shape
        n_sig = len(layout)
        self.scatter = np.zeros((g * n_in, (lookback + 1) * n_sig))
        rows = np.arange(g * n_in)
        cols = ((lookback - self.lag) * n_sig + self.sig).ravel()
        self.scatter[rows, cols] = 1.0
        self.G, self.n_in = g, n_in

    def forward(self, x_raw):
        """x_raw (S, G, in) -> (prediction (S, G), cache)."""
        h = (x_raw - self.x_mu) / self.x_sd
        acts = [h]
        last = len(self.W) - 1
        for i, (W, b) in enumerate(zip(self.W, self.b)):
            z = np.matmul(h[:, :, None, :], W)[:, :, 0, :] + b
            h = z if i == last else np.maximum(z, 0.0)
            acts.append(h)
        return acts[-1][:, :, 0] * self.y_sd + self.y_mu, acts

    def backward(self, g_out, acts):
        """g_out (S, G) -> gradient w.r.t. raw inputs (S, G, in)."""
        g = (g_out * self.y_sd)[:, :, None]
        for i in range(len(self.W) - 1, -1, -1):
            g = np.matmul(g[:, :, None, :], self.WT[i])[:, :, 0, :]
            if i > 0:
                g = g * (acts[i] > 0.0)
        return g / self.x_sd


class ModelSet:
    """The energy model plus one temperature model per zone, ready for rollout."""

    def __init__(self, energy: MLPModel, zones: Sequence[MLPModel]):
        self.energy = energy
        self.zones = list(zones)
        n = len(self.zones)
        if parse_target(energy.target_id, n)[0] != "energy":
            raise InvalidInputError("first model must target energy")
        for j, m in enumerate(self.zones, start=1):
            if parse_target(m.target_id, n) != ("zone", j):
                raise InvalidInputError(f"zone model {j} targets {m.target_id}")
        self.n_zones = n
        self.layout = _signal_layout(n)
        self.n_signals = len(self.layout)
        self.lookback = max(lag for m in [energy, *self.zones] for _, lag in m.manifest)
        self.energy_stack = _Stack([energy], self.layout, self.lookback)
        self.zone_stack = _Stack(self.zones, self.layout, self.lookback)
        self.idx_T = np.array([self.layout[f"t_zone_{j}"] for j in range(1, n + 1)])
        self.idx_U = np.array([self.layout[f"sp_zone_{j}"] for j in range(1, n + 1)])
        self.idx_C = self.layout["comp_mode"]
        self.idx_E = self.layout["energy"]

    @property
    def history_depth(self) -> int:
        return self.lookback + 1

    @classmethod
    def from_dir(cls, directory, n_zones: int = 10) -> "ModelSet":
        from pathlib import Path
        from .nn import load
        d = Path(directory)
        energy = load(d / "energy.model.json")
        zones = [load(d / f"zone_{j}.model.json") for j in range(1, n_zones + 1)]
        return cls(energy, zones)


def model_filename(target: str) -> str:
    kind, j = parse_target(target, n_zones=10 ** 6)
    return "energy.model.json" if kind == "energy" else f"zone_{j}.model.json"


# ---------------------------------------------------------------------------
# Pieces of the horizon problem
# ---------------------------------------------------------------------------

def forecast_weather(history: HorizonHistory | np.ndarray, N: int) -> np.ndarray:
    """Persistence forecast: the latest weather sample repeated ``N`` times."""
    w = history.weather if isinstance(history, HorizonHistory) else np.asarray(history, float)
    if len(w) == 0:
        raise InvalidInputError("empty weather history")
    return np.repeat(w[-1:], N, axis=0)


def predict_comp_mode(T_pred, u, prev_split) -> bool:
    """Compressor state implied by replaying the zone relays."""
    split = relay_update(u, quantize(T_pred), prev_split)
    return bool(np.any(split))


def slack_from_temps(T, t_min, t_max) -> np.ndarray:
    T = np.asarray(T, float)
    return np.maximum(0.0, np.maximum(np.asarray(t_min) - T, T - np.asarray(t_max)))


def cost(E, T, eps, cfg: MPCConfig) -> float:
    E, T, eps = np.asarray(E, float), np.asarray(T, float), np.asarray(eps, float)
    ref = np.asarray(cfg.t_ref, float)
    return float(cfg.lambda_E * E.sum() + cfg.lambda_T * np.sum((T - ref) ** 2)
                 + cfg.slack_weight * eps.sum())


def round_setpoints(u, t_ref, u_min: float, u_max: float) -> np.ndarray:
    """Nearest integer, exact halves broken toward ``t_ref``, clamped to the box."""
    u = np.asarray(u, float)
    ref = np.broadcast_to(np.asarray(t_ref, float), u.shape)
    lo = np.floor(u)
    frac = u - lo
    out = np.where(frac > 0.5, lo + 1.0, lo)
    tie = frac == 0.5
    out = np.where(tie, np.where(ref > u, lo + 1.0, lo), out)
    return np.clip(out, math.ceil(u_min), math.floor(u_max))


def _smooth_hinge(x, width):
    """One-sided Huber: 0 below 0, quadratic on [0, width], then x - width/2.

    Unlike softplus it has zero slope at the bound, so a trajectory resting
    exactly on a comfort limit is not pushed inward.
    """
    q = np.clip(x, 0.0, width)
    return np.where(x > width, x - 0.5 * width, 0.5 * q * q / width)


def _smooth_hinge_grad(x, width):
    return np.clip(x / width, 0.0, 1.0)


class Rollout:
    """Batched forward/backward of the horizon problem for fixed history.

    Works on ``S`` candidate input sequences at once; ``U`` has shape
    (S, N, zones).
    """

    def __init__(self, models: ModelSet, history: HorizonHistory, cfg: MPCConfig,
                 forecast: np.ndarray | None = None):
        if history.n_zones != models.n_zones or cfg.n_zones != models.n_zones:
            raise InvalidInputError("history, config and models disagree on zone count")
        L = models.lookback
        if history.depth < L + 1:
            raise InvalidInputError(
                f"history depth {history.depth} < required {L + 1} (buffer underflow)")
        self.m, self.cfg, self.L, self.N = models, cfg, L, cfg.N
        n_sig = models.n_signals
        base = np.zeros((L + cfg.N + 1, n_sig))
        w_hist = history.weather[-(L + 1):]
        base[:L + 1, 0:3] = w_hist
        fc = forecast_weather(history, cfg.N) if forecast is None else np.asarray(forecast, float)
        if fc.shape != (cfg.N, 3):
            raise InvalidInputError("forecast must have shape (N, 3)")
        # the sample at k is measured; forecasts start one step later
        base[L + 1:L + cfg.N + 1, 0:3] = fc[:cfg.N]
        base[:L + 1, models.idx_T] = history.t_zone[-(L + 1):]
        if L > 0:
            base[:L, models.idx_U] = history.setpoints[-L:]
            base[:L, models.idx_C] = history.comp_mode[-L:]
            base[:L, models.idx_E] = history.energy[-L:]
        self.base = base
        self.split0 = history.split_on.copy()
        self.ref = np.asarray(cfg.t_ref, float)
        self.t_min, self.t_max = cfg.bounds

    def emulate_comp(self, U) -> np.ndarray:
        """Relay replay along the rollout for inputs ``U`` -> comp (S, N)."""
        return self.run(U)["comp"]

    def run(self, U, comp=None, grad: bool = False, smooth_width: float = 0.0):
        """Roll the models forward.

        With ``comp`` given (S, N) the compressor sequence is frozen;
        otherwise it is emulated from the relays.  With ``grad`` the
        gradient of the (optionally hinge-smoothed) cost w.r.t. ``U`` is
        returned under ``"grad"``, treating ``comp`` as constant.
        """
        m, L, N = self.m, self.L, self.N
        U = np.asarray(U, float)
        S = U.shape[0]
        Z = np.broadcast_to(self.base, (S,) + self.base.shape).copy()
        Z[:, L:L + N][:, :, m.idx_U] = U
        split = np.broadcast_to(self.split0, (S, m.n_zones)).copy()
        comp_out = np.empty((S, N))
        caches = []
        for t in range(N):
            p = L + t
            if comp is None:
                split = relay_update(U[:, t], quantize(Z[:, p, m.idx_T]), split)
                comp_out[:, t] = split.any(axis=1)
            else:
                comp_out[:, t] = comp[:, t]
            Z[:, p, m.idx_C] = comp_out[:, t]
            xz = Z[:, p - m.zone_stack.lag, m.zone_stack.sig]
            T_next, zc = m.zone_stack.forward(xz)
            Z[:, p + 1, m.idx_T] = T_next
            xe = Z[:, p - m.energy_stack.lag, m.energy_stack.sig]
            E_t, ec = m.energy_stack.forward(xe)
            Z[:, p, m.idx_E] = E_t[:, 0]
            caches.append((zc, ec))

        E = Z[:, L:L + N, m.idx_E]
        T = Z[:, L + 1:L + N + 1][:, :, m.idx_T]
        cfg = self.cfg
        lower, upper = self.t_min - T, T - self.t_max
        eps = np.maximum(0.0, np.maximum(lower, upper))
        dev = T - self.ref
        exact = (cfg.lambda_E * E.sum(axis=1) + cfg.lambda_T * (dev * dev).sum(axis=(1, 2))
                 + cfg.slack_weight * eps.sum(axis=(1, 2)))
        out = {"E": E, "T": T, "eps": eps, "comp": comp_out, "cost": exact}
        if not grad:
            return out

        if smooth_width > 0:
            w = smooth_width
            d_hinge = _smooth_hinge_grad(upper, w) - _smooth_hinge_grad(lower, w)
            out["smooth_cost"] = (cfg.lambda_E * E.sum(axis=1)
                                  + cfg.lambda_T * (dev * dev).sum(axis=(1, 2))
                                  + cfg.slack_weight * (_smooth_hinge(lower, w)
                                                        + _smooth_hinge(upper, w)
                                                        ).sum(axis=(1, 2)))
        else:
            d_hinge = np.where(upper > np.maximum(lower, 0.0), 1.0,
                               np.where(lower > np.maximum(upper, 0.0), -1.0, 0.0))
        gZ = np.zeros_like(Z)
        gZ[:, L:L + N, m.idx_E] = cfg.lambda_E
        gZ[:, L + 1:L + N + 1][:, :, m.idx_T] = 0.0
        gT = 2.0 * cfg.lambda_T * dev + cfg.slack_weight * d_hinge
        for t in range(N):
            gZ[:, L + 1 + t, m.idx_T] += gT[:, t]
        n_sig = m.n_signals
        for t in range(N - 1, -1, -1):
            p = L + t
            zc, ec = caches[t]
            g_e = m.energy_stack.backward(gZ[:, p, m.idx_E][:, None], ec)
            g_z = m.zone_stack.backward(gZ[:, p + 1, m.idx_T], zc)
            local = (g_e.reshape(S, -1) @ m.energy_stack.scatter
                     + g_z.reshape(S, -1) @ m.zone_stack.scatter)
            gZ[:, p - L:p + 1] += local.reshape(S, L + 1, n_sig)
        out["grad"] = gZ[:, L:L + N][:, :, m.idx_U]
        return out


def rollout(models: ModelSet, history: HorizonHistory, forecast, u_seq, comp_seq):
    """Single-sequence rollout -> (E[N], T[N, zones])."""
    u_seq = np.asarray(u_seq, float)
    N = u_seq.shape[0]
    cfg = MPCConfig(t_ref=(25.0,) * models.n_zones, t_min=(23.0,) * models.n_zones,
                    t_max=(27.0,) * models.n_zones, N=N)
    r = Rollout(models, history, cfg, forecast)
    out = r.run(u_seq[None], comp=np.asarray(comp_seq, float)[None])
    return out["E"][0], out["T"][0]


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------

_WINDOW = 15  # iterations over which progress is averaged


def initial_candidates(cfg: MPCConfig, warm_start=None) -> np.ndarray:
    """Warm start (previous plan shifted, last input repeated) plus constants."""
    cands = []
    if warm_start is not None:
        ws = np.asarray(warm_start, float)
        shift = cfg.control_period_steps
        if ws.shape[1:] != (cfg.n_zones,) or len(ws) == 0:
            raise InvalidInputError("warm start must have shape (n, zones)")
        ws = np.concatenate([ws[shift:], np.repeat(ws[-1:], cfg.N, axis=0)])[:cfg.N]
        cands.append(ws)
    for c in cfg.solver.restarts:
        cands.append(np.full((cfg.N, cfg.n_zones), float(c)))
    return np.clip(np.stack(cands), cfg.u_min, cfg.u_max)


def solve(cfg: MPCConfig, models: ModelSet, history: HorizonHistory, warm_start=None,
          forecast=None) -> MPCSolution:
    """Minimise the horizon cost; see the module docstring for the method."""
    sc = cfg.solver
    r = Rollout(models, history, cfg, forecast)
    U = initial_candidates(cfg, warm_start)
    S = U.shape[0]
    start = r.run(U)
    best_cost = np.where(np.isfinite(start["cost"]), start["cost"], np.inf)
    if not np.any(np.isfinite(best_cost)):
        raise SolverError("non-finite cost at every starting point",
                          {"initial_costs": start["cost"].tolist()})
    initial_costs = best_cost.copy()
    best_U = U.copy()
    iterations = 0
    converged = False
    lo, hi = cfg.u_min, cfg.u_max
    for _ in range(sc.phases):
        comp = r.emulate_comp(U)
        m = np.zeros_like(U)
        v = np.zeros_like(U)
        phase_best_cost = np.full(S, np.inf)
        phase_best_U = U.copy()
        converged = False
        lr = np.full_like(U, sc.step_size)
        g_prev = np.zeros_like(U)
        trail = np.full((S, _WINDOW + 1), np.inf)  # recent phase-best costs
        active = np.ones(S, dtype=bool)
        for it in range(1, sc.max_iters + 1):
            idx = np.flatnonzero(active)
            out = r.run(U[idx], comp=comp[idx], grad=True, smooth_width=sc.hinge_width)
            c = out["cost"]
            better = c < phase_best_cost[idx]
            phase_best_cost[idx[better]] = c[better]
            phase_best_U[idx[better]] = U[idx[better]]
            trail[idx] = np.column_stack([trail[idx, 1:], phase_best_cost[idx]])
            # average relative improvement over the window, per candidate
            if it > _WINDOW:
                old, now = trail[idx, 0], trail[idx, -1]
                rel = (old - now) / np.maximum(np.abs(now), 1e-12) / _WINDOW
                done = ~np.isfinite(c) | (rel < sc.tol_rel)
                active[idx[done]] = False
                if not active.any():
                    converged = True
                    break
            g = out["grad"]
            if not np.all(np.isfinite(g)):
                g = np.nan_to_num(g, nan=0.0, posinf=0.0, neginf=0.0)
            # per-coordinate step: shrink on a gradient sign flip, regrow otherwise
            flip = g * g_prev[idx] < 0
            lr[idx] = np.where(flip, 0.5 * lr[idx], np.minimum(1.2 * lr[idx], sc.step_size))
            g_prev[idx] = g
            iterations += 1
            m[idx] = sc.beta1 * m[idx] + (1.0 - sc.beta1) * g
            v[idx] = sc.beta2 * v[idx] + (1.0 - sc.beta2) * g * g
            mh = m[idx] / (1.0 - sc.beta1 ** it)
            vh = v[idx] / (1.0 - sc.beta2 ** it)
            U[idx] = np.clip(U[idx] - lr[idx] * mh / (np.sqrt(vh) + sc.eps), lo, hi)
        else:
            out = r.run(U, comp=comp)
            c = out["cost"]
            better = c < phase_best_cost
            phase_best_cost = np.where(better, c, phase_best_cost)
            phase_best_U[better] = U[better]
        # re-score the phase optimum with a consistent compressor sequence
        U = phase_best_U
        check = r.run(U)["cost"]
        improved = np.isfinite(check) & (check < best_cost)
        best_cost = np.where(improved, check, best_cost)
        best_U[improved] = U[improved]

    k = int(np.argmin(best_cost))
    if not np.isfinite(best_cost[k]):
        raise SolverError("solver produced no finite candidate",
                          {"candidate_costs": best_cost.tolist()})
    final = r.run(best_U[k:k + 1])
    u_cont = best_U[k]
    return MPCSolution(
        u_cont=u_cont,
        u_int=round_setpoints(u_cont[0], cfg.t_ref, cfg.u_min, cfg.u_max).astype(int),
        eps=final["eps"][0], E=final["E"][0], T=final["T"][0], comp=final["comp"][0],
        cost=float(final["cost"][0]), iterations=iterations, converged=converged,
        restarts_used=S, candidate_costs=best_cost.tolist(),
        initial_costs=initial_costs.tolist(), chosen=k)
