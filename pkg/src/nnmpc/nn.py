"""Feed-forward ReLU regressors for the energy and zone-temperature models.

Everything is plain numpy: forward pass, reverse-mode gradients with
respect to inputs and parameters, Adam with early stopping, evaluation
against the persistence predictor, and a checksummed JSON file format.

Weights are stored per layer as ``W`` of shape ``(fan_in, fan_out)``
(row-major, row = input unit) and ``b`` of shape ``(fan_out,)``; a hidden
layer computes ``relu(x @ W + b)`` and the output layer ``x @ W + b``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import LagSpec, LaggedDataset, Normalizer, fit_normalizer, parse_target
from .errors import (ChecksumError, InvalidInputError, SerializationError, TrainingError,
                     UnsupportedVersionError)

FORMAT_VERSION = 2
ENERGY_HIDDEN = (50, 50)
ZONE_HIDDEN = (50,)


def default_hidden(target: str) -> tuple[int, ...]:
    return ENERGY_HIDDEN if parse_target(target)[0] == "energy" else ZONE_HIDDEN


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 500
    patience: int = 20
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0:
            raise InvalidInputError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 0:
            raise InvalidInputError("batch_size and patience must be >= 1")


@dataclass
class MLPModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_normalizer: Normalizer
    target_normalizer: Normalizer
    lagspec: LagSpec
    target_id: str
    manifest: tuple[tuple[str, int], ...]
    metadata: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise InvalidInputError("one bias per weight matrix required")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise InvalidInputError(f"layer {i}: inconsistent shapes")
            if i and W.shape[0] != self.weights[i - 1].shape[1]:
                raise InvalidInputError(f"layer {i}: fan-in does not chain")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise InvalidInputError(f"layer {i}: non-finite parameters")
        if self.weights[-1].shape[1] != 1:
            raise InvalidInputError("output layer must have width 1")

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    def predict(self, x_raw) -> np.ndarray:
        """Physical-unit prediction from raw (unnormalised) regressors."""
        x = self.input_normalizer.apply(x_raw)
        return self.target_normalizer.invert(forward(self, x))


def init_model(n_inputs: int, hidden, rng: np.random.Generator) -> tuple[list, list]:
    """He-normal weights, zero biases."""
    dims = [n_inputs, *hidden, 1]
    weights = [rng.normal(0.0, np.sqrt(2.0 / dims[i]), size=(dims[i], dims[i + 1]))
               for i in range(len(dims) - 1)]
    biases = [np.zeros(d) for d in dims[1:]]
    return weights, biases


def _check_width(model: MLPModel, x: np.ndarray):
    if x.shape[-1] != model.n_inputs:
        raise InvalidInputError(f"input width {x.shape[-1]} != model width {model.n_inputs}")


def _forward_cache(weights, biases, x):
    acts = [x]
    h = x
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        z = h @ W + b
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts


def forward(model: MLPModel, x) -> np.ndarray:
    """Normalised prediction for normalised input(s); shape ``(n,)`` or scalar."""
    x = np.asarray(x, float)
    _check_width(model, x)
    out = _forward_cache(model.weights, model.biases, np.atleast_2d(x))[-1][:, 0]
    return out[0] if x.ndim == 1 else out


def grad_input(model: MLPModel, x) -> np.ndarray:
    """d forward / d x by reverse mode; ReLU slope at exactly 0 is taken as 0."""
    x = np.asarray(x, float)
    _check_width(model, x)
    acts = _forward_cache(model.weights, model.biases, np.atleast_2d(x))
    g = np.ones((acts[0].shape[0], 1))
    for i in range(len(model.weights) - 1, -1, -1):
        g = g @ model.weights[i].T
        if i > 0:
            g = g * (acts[i] > 0.0)
    return g[0] if x.ndim == 1 else g


def _param_grads(weights, biases, x, y):
    """Mean-squared-error loss and its gradients for one minibatch."""
    acts = _forward_cache(weights, biases, x)
    n = x.shape[0]
    resid = acts[-1][:, 0] - y
    loss = float(np.mean(resid * resid))
    g = (2.0 / n) * resid[:, None]
    gW, gb = [None] * len(weights), [None] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        gW[i] = acts[i].T @ g
        gb[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ weights[i].T) * (acts[i] > 0.0)
    return loss, gW, gb


def _mse(weights, biases, x, y) -> float:
    r = _forward_cache(weights, biases, x)[-1][:, 0] - y
    return float(np.mean(r * r))


def train(dataset: LaggedDataset, hidden=None, config: TrainConfig = TrainConfig(),
          validation: LaggedDataset | None = None):
    """Fit an MLP to ``dataset`` with Adam on the mean squared error.

    Normalisers are fitted on ``dataset`` only.  When ``validation`` is not
    given, the last 20 % of ``dataset`` (chronologically) is held out for
    early stopping.  Returns the best-validation checkpoint and the
    per-epoch loss history.
    """
    if len(dataset) == 0:
        raise InvalidInputError("empty training set")
    if validation is None:
        cut = int(0.8 * len(dataset))
        dataset, validation = dataset.take(slice(0, cut)), dataset.take(slice(cut, None))
    if validation.manifest != dataset.manifest:
        raise InvalidInputError("validation set built with a different manifest")
    hidden = tuple(default_hidden(dataset.target) if hidden is None else hidden)

    x_norm = fit_normalizer(dataset)
    y_norm = fit_normalizer(dataset.y, names=[dataset.target])
    X, y = x_norm.apply(dataset.X), y_norm.apply(dataset.y)
    Xv, yv = x_norm.apply(validation.X), y_norm.apply(validation.y)

    rng = np.random.default_rng(config.seed)
    weights, biases = init_model(X.shape[1], hidden, rng)
    params = weights + biases
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, lr, eps = config.beta1, config.beta2, config.learning_rate, config.eps_adam

    best_val = _mse(weights, biases, Xv, yv) if len(validation) else np.inf
    best = [p.copy() for p in params]
    best_epoch, step = 0, 0
    history = []
    n = X.shape[0]
    nl = len(weights)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, gW, gb = _param_grads(params[:nl], params[nl:], X[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingError("non-finite training loss", epoch=epoch)
            total += loss * len(idx)
            step += 1
            c1, c2 = 1.0 - b1 ** step, 1.0 - b2 ** step
            for p, g, mi, vi in zip(params, gW + gb, m, v):
                mi *= b1
                mi += (1.0 - b1) * g
                vi *= b2
                vi += (1.0 - b2) * g * g
                p -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
        train_mse = total / n
        val_mse = _mse(params[:nl], params[nl:], Xv, yv) if len(validation) else train_mse
        if not (np.isfinite(train_mse) and np.isfinite(val_mse)):
            raise TrainingError("non-finite loss", epoch=epoch)
        if val_mse < best_val:
            best_val, best_epoch = val_mse, epoch
            best = [p.copy() for p in params]
        history.append({"epoch": epoch, "train_mse": train_mse, "val_mse": val_mse,
                        "best_val_mse": best_val})
        if epoch - best_epoch >= config.patience:
            break

    model = MLPModel(best[:nl], best[nl:], x_norm, y_norm, dataset.lagspec, dataset.target,
                     dataset.manifest,
                     metadata={"train_config": asdict(config), "best_epoch": best_epoch,
                               "epochs_run": len(history), "best_val_mse": best_val,
                               "n_train": len(dataset), "n_validation": len(validation)})
    return model, history


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    target: str
    n: int
    mae: float
    rmse: float
    p95: float
    errors: np.ndarray
    persistence_mae: float
    persistence_rmse: float
    persistence_p95: float
    persistence_errors: np.ndarray
    hist_edges: np.ndarray
    hist_model: np.ndarray
    hist_persistence: np.ndarray

    def summary(self) -> dict:
        return {"target": self.target, "n": self.n, "mae": self.mae, "rmse": self.rmse,
                "p95": self.p95, "persistence_mae": self.persistence_mae,
                "persistence_rmse": self.persistence_rmse,
                "persistence_p95": self.persistence_p95,
                "mae_ratio": self.mae / self.persistence_mae if self.persistence_mae else None}


def _error_stats(err):
    return (float(np.mean(err)), float(np.sqrt(np.mean(err * err))),
            float(np.percentile(err, 95)))


def evaluate(model: MLPModel, dataset: LaggedDataset, bins: int = 40) -> EvalReport:
    """Model and persistence absolute errors (physical units) on the same samples."""
    if (dataset.lagspec != model.lagspec or dataset.manifest != model.manifest
            or dataset.target != model.target_id):
        raise InvalidInputError(
            f"dataset ({dataset.target}, {dataset.lagspec}) does not match model "
            f"({model.target_id}, {model.lagspec})")
    if len(dataset) == 0:
        raise InvalidInputError("empty evaluation set")
    err = np.abs(model.predict(dataset.X) - dataset.y)
    perr = np.abs(dataset.persistence() - dataset.y)
    hi = max(float(err.max()), float(perr.max()))
    edges = np.linspace(0.0, hi if hi > 0 else 1.0, bins + 1)
    mae, rmse, p95 = _error_stats(err)
    pmae, prmse, pp95 = _error_stats(perr)
    return EvalReport(dataset.target, len(dataset), mae, rmse, p95, err, pmae, prmse, pp95, perr,
                      edges, np.histogram(err, edges)[0], np.histogram(perr, edges)[0])


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------

def _canonical(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()


def model_to_dict(model: MLPModel) -> dict:
    payload = {
        "format_version": model.format_version,
        "target_id": model.target_id,
        "lagspec": asdict(model.lagspec),
        "manifest": [[s, lag] for s, lag in model.manifest],
        "dims": model.layer_dims,
        "activation": {"hidden": "relu", "output": "identity"},
        "input_normalizer": model.input_normalizer.to_dict(),
        "target_normalizer": model.target_normalizer.to_dict(),
        "layers": [{"W": W.tolist(), "b": b.tolist()}
                   for W, b in zip(model.weights, model.biases)],
        "training": model.metadata,
    }
    payload["checksum"] = "sha256:" + hashlib.sha256(_canonical(payload)).hexdigest()
    return payload


def save(model: MLPModel, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def model_from_dict(payload: dict) -> MLPModel:
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"model format_version {version!r} is not supported (expected {FORMAT_VERSION})")
    body = {k: v for k, v in payload.items() if k != "checksum"}
    digest = "sha256:" + hashlib.sha256(_canonical(body)).hexdigest()
    if payload.get("checksum") != digest:
        raise ChecksumError("model checksum mismatch")
    try:
        layers = payload["layers"]
        model = MLPModel(
            weights=[np.asarray(l["W"], float) for l in layers],
            biases=[np.asarray(l["b"], float) for l in layers],
            input_normalizer=Normalizer.from_dict(payload["input_normalizer"]),
            target_normalizer=Normalizer.from_dict(payload["target_normalizer"]),
            lagspec=LagSpec(**payload["lagspec"]),
            target_id=payload["target_id"],
            manifest=tuple((s, int(lag)) for s, lag in payload["manifest"]),
            metadata=payload.get("training", {}),
            format_version=version,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SerializationError(f"malformed model file: {exc}") from exc
    if model.layer_dims != payload["dims"]:
        raise SerializationError("stored dims disagree with the weights")
    return model


def load(path) -> MLPModel:
    text = Path(path).read_text()
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ChecksumError(f"{path}: truncated or corrupt model file ({exc.msg})") from exc
    if not isinstance(payload, dict):
        raise ChecksumError(f"{path}: not a model file")
    return model_from_dict(payload)
