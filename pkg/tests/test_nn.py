import json

import numpy as np
import pytest

from _builders import make_model, random_model
from nnmpc import nn
from nnmpc.data import (ENERGY_LAGS, ZONE_LAGS, LaggedDataset, LagSpec, TimeSeriesFrame,
                        make_lagged_samples)
from nnmpc.errors import (ChecksumError, InvalidInputError, TrainingError,
                          UnsupportedVersionError)


def _one_one_one():
    return make_model([[[1.0]], [[1.0]]], [[0.0], [0.0]])


def _toy_dataset(x, y, target="zone:1"):
    x = np.asarray(x, float).reshape(len(y), -1)
    manifest = tuple((f"x{i}", 0) for i in range(x.shape[1]))
    return LaggedDataset(x, np.asarray(y, float), manifest, target, LagSpec(0, 0, 0),
                         np.arange(len(y)))


# --- forward and gradients ---------------------------------------------------

def test_zero_weights_give_output_bias():
    m = make_model([np.zeros((5, 3)), np.zeros((3, 1))], [np.zeros(3), [1.7]])
    x = np.random.default_rng(0).normal(size=(4, 5))
    np.testing.assert_array_equal(nn.forward(m, x), 1.7)
    np.testing.assert_array_equal(nn.grad_input(m, x), 0.0)


def test_relu_clamps():
    m = _one_one_one()
    assert nn.forward(m, [-5.0]) == 0.0
    assert nn.forward(m, [5.0]) == 5.0
    assert nn.grad_input(m, [5.0])[0] == 1.0
    assert nn.grad_input(m, [0.0])[0] == 0.0  # subgradient at the kink


def test_width_mismatch():
    with pytest.raises(InvalidInputError):
        nn.forward(_one_one_one(), [1.0, 2.0])


def _finite_diff(f, x, h=1e-4):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_grad_input_matches_finite_differences():
    rng = np.random.default_rng(4)
    checked = 0
    for target, hidden in (("energy", (50, 50)), ("zone:2", (50,))):
        m = random_model(target, rng, hidden=hidden)
        while checked < 100:
            x = rng.normal(size=m.n_inputs)
            # skip points within h of an activation kink
            pre = [x]
            h_ = x
            for W, b in zip(m.weights[:-1], m.biases[:-1]):
                z = h_ @ W + b
                pre.append(z)
                h_ = np.maximum(z, 0)
            if min(np.abs(z).min() for z in pre[1:]) < 1e-3:
                continue
            g = nn.grad_input(m, x)
            fd = _finite_diff(lambda v: nn.forward(m, v), x)
            np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-9)
            checked += 1
            if checked % 50 == 0:
                break
    assert checked == 100


def test_param_grads_match_finite_differences():
    rng = np.random.default_rng(5)
    m = random_model("energy", rng, hidden=(6, 5))
    x = rng.normal(size=(7, m.n_inputs))
    y = rng.normal(size=7)
    _, gW, gb = nn._param_grads(m.weights, m.biases, x, y)
    for li in range(len(m.weights)):
        for arr, grad in ((m.weights[li], gW[li]), (m.biases[li], gb[li])):
            flat = arr.reshape(-1)
            for k in rng.choice(flat.size, size=min(8, flat.size), replace=False):
                old = flat[k]
                flat[k] = old + 1e-5
                up = nn._mse(m.weights, m.biases, x, y)
                flat[k] = old - 1e-5
                dn = nn._mse(m.weights, m.biases, x, y)
                flat[k] = old
                assert grad.reshape(-1)[k] == pytest.approx((up - dn) / 2e-5, rel=1e-5, abs=1e-8)


def test_piecewise_affine_along_a_line():
    rng = np.random.default_rng(6)
    m = random_model("zone:1", rng, hidden=(50,))
    x0, v = rng.normal(size=20), rng.normal(size=20)
    t = np.linspace(-3, 3, 4001)
    f = nn.forward(m, x0 + t[:, None] * v)
    second = np.abs(np.diff(f, 2))
    # kinks touch at most a few stencils; everything else is exactly affine
    kinks = (second > 1e-9).sum()
    assert kinks <= 3 * 50
    assert np.median(second) < 1e-12


# --- training ---------------------------------------------------------------

def test_fits_relu_target():
    rng = np.random.default_rng(0)
    x = rng.uniform(-2, 2, 1000)
    y = np.maximum(0, x)
    ds = _toy_dataset(x, y)
    model, hist = nn.train(ds, hidden=(16,), config=nn.TrainConfig(max_epochs=200, seed=1,
                                                                   batch_size=32))
    assert hist[-1]["best_val_mse"] < 1e-3
    xv = np.linspace(-2, 2, 101)[:, None]
    assert np.mean((model.predict(xv) - np.maximum(0, xv[:, 0])) ** 2) < 1e-3


def test_zero_learning_rate_freezes_weights():
    rng = np.random.default_rng(0)
    ds = _toy_dataset(rng.normal(size=100), rng.normal(size=100))
    cfg = nn.TrainConfig(learning_rate=0.0, max_epochs=3, seed=2)
    model, _ = nn.train(ds, hidden=(4,), config=cfg)
    w0, b0 = nn.init_model(1, (4,), np.random.default_rng(2))
    for a, b in zip(model.weights, w0):
        np.testing.assert_array_equal(a, b)


def test_training_is_deterministic():
    rng = np.random.default_rng(3)
    ds = _toy_dataset(rng.normal(size=(300, 3)), rng.normal(size=300))
    cfg = nn.TrainConfig(max_epochs=5, seed=9)
    a, _ = nn.train(ds, hidden=(5,), config=cfg)
    b, _ = nn.train(ds, hidden=(5,), config=cfg)
    for wa, wb in zip(a.weights + a.biases, b.weights + b.biases):
        np.testing.assert_array_equal(wa, wb)


def test_best_validation_is_monotone():
    rng = np.random.default_rng(3)
    ds = _toy_dataset(rng.normal(size=(300, 3)), rng.normal(size=300))
    _, hist = nn.train(ds, hidden=(5,), config=nn.TrainConfig(max_epochs=30, seed=1))
    best = [h["best_val_mse"] for h in hist]
    assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_training_error():
    rng = np.random.default_rng(0)
    ds = _toy_dataset(rng.normal(size=200), rng.normal(size=200) * 1e3)
    with pytest.raises(TrainingError) as exc:
        nn.train(ds, hidden=(4,), config=nn.TrainConfig(learning_rate=1e300, max_epochs=5))
    assert exc.value.epoch >= 1


def test_scale_invariance_of_normalised_losses():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(400, 3))
    y = np.sin(x[:, 0]) + x[:, 1] * x[:, 2]
    cfg = nn.TrainConfig(max_epochs=5, seed=4)
    _, h1 = nn.train(_toy_dataset(x, y), hidden=(6,), config=cfg)
    _, h2 = nn.train(_toy_dataset(10 * x + 3, 10 * y - 1), hidden=(6,), config=cfg)
    np.testing.assert_allclose([h["train_mse"] for h in h1], [h["train_mse"] for h in h2],
                               rtol=1e-7)


# --- evaluation -------------------------------------------------------------

def _constant_frame(n=30):
    return TimeSeriesFrame.from_arrays(
        "2020-01-01T00:00:00Z", 120.0, np.tile([5.0, 60.0, 0.0], (n, 1)),
        np.full((n, 10), 24.0), np.full((n, 10), 25.0), np.zeros(n, int), np.full(n, 1.3))


def test_persistence_on_constant_series_is_exact():
    fr = _constant_frame()
    ds = make_lagged_samples(fr, ZONE_LAGS, "zone:1")
    m = make_model([np.zeros((20, 1))], [[24.0]], "zone:1")
    rep = nn.evaluate(m, ds)
    assert rep.persistence_mae == 0.0 and rep.mae == 0.0
    assert rep.hist_model.sum() == rep.n == rep.hist_persistence.sum()


def test_persistence_mimic_matches_baseline():
    rng = np.random.default_rng(0)
    n = 60
    fr = TimeSeriesFrame.from_arrays(
        "2020-01-01T00:00:00Z", 120.0, np.column_stack([rng.normal(5, 1, n), rng.uniform(50, 90, n),
                                                          rng.uniform(0, 100, n)]),
        np.round(24 + np.cumsum(rng.normal(0, 0.1, (n, 10)), axis=0), 1),
        rng.integers(22, 29, (n, 10)).astype(float), rng.integers(0, 2, n), rng.uniform(1, 60, n))
    ds = make_lagged_samples(fr, ZONE_LAGS, "zone:3")
    W = np.zeros((20, 1))
    W[ds.manifest.index(("t_zone_3", 0)), 0] = 1.0
    rep = nn.evaluate(make_model([W], [[0.0]], "zone:3"), ds)
    assert rep.mae == rep.persistence_mae
    assert rep.mae <= rep.rmse


def test_evaluate_rejects_lagspec_mismatch():
    fr = _constant_frame()
    ds = make_lagged_samples(fr, LagSpec(2, 3, 3), "zone:1")
    m = make_model([np.zeros((20, 1))], [[0.0]], "zone:1")
    with pytest.raises(InvalidInputError):
        nn.evaluate(m, ds)


# --- serialisation ----------------------------------------------------------

def test_save_load_exact(tmp_path):
    rng = np.random.default_rng(1)
    m = random_model("energy", rng, hidden=(50, 50))
    nn.save(m, tmp_path / "m.json")
    back = nn.load(tmp_path / "m.json")
    x = rng.normal(30, 5, (100, 100))
    np.testing.assert_array_equal(m.predict(x), back.predict(x))
    assert back.manifest == m.manifest and back.lagspec == ENERGY_LAGS
    doc = json.loads((tmp_path / "m.json").read_text())
    assert {"format_version", "target_id", "lagspec", "dims", "input_normalizer",
            "target_normalizer", "layers", "training", "checksum"} <= set(doc)


def test_truncated_and_tampered_files(tmp_path):
    m = random_model("zone:1", np.random.default_rng(2))
    nn.save(m, tmp_path / "m.json")
    text = (tmp_path / "m.json").read_text()
    (tmp_path / "t.json").write_text(text[: len(text) // 2])
    with pytest.raises(ChecksumError):
        nn.load(tmp_path / "t.json")
    doc = json.loads(text)
    doc["layers"][0]["b"][0] += 1.0
    (tmp_path / "x.json").write_text(json.dumps(doc))
    with pytest.raises(ChecksumError):
        nn.load(tmp_path / "x.json")


def test_old_format_version(tmp_path):
    m = random_model("zone:1", np.random.default_rng(2))
    doc = nn.model_to_dict(m)
    doc["format_version"] = 1
    (tmp_path / "old.json").write_text(json.dumps(doc))
    with pytest.raises(UnsupportedVersionError):
        nn.load(tmp_path / "old.json")
