import json
import subprocess
import sys

import pandas as pd
import pytest

from nnmpc.cli import main
from nnmpc.data import load_csv

# small enough to train and run inside a unit test
FAST_INI = """
[training]
hidden_energy = 6
hidden_zone = 4
max_epochs = 3
patience = 2

[mpc]
N = 3
max_iters = 5
phases = 1
restarts = 25

[experiment]
days = 1
"""


@pytest.fixture
def fast_ini(tmp_path):
    p = tmp_path / "fast.ini"
    p.write_text(FAST_INI)
    return p


@pytest.fixture(scope="module")
def trained(tmp_path_factory, sample_csv):
    d = tmp_path_factory.mktemp("cli")
    ini = d / "fast.ini"
    ini.write_text(FAST_INI)
    assert main(["train", "--config", str(ini), "--data", str(sample_csv),
                 "--out", str(d / "models")]) == 0
    return d, ini


def test_excite_snapshot_reproduces(tmp_path):
    assert main(["excite", "--days", "1", "--seed", "4", "--out", str(tmp_path / "a")]) == 0
    snap = tmp_path / "a" / "config.snapshot"
    assert "[invocation]" in snap.read_text() and "seed = 4" in snap.read_text()
    # the snapshot alone is a complete config for the same data
    assert main(["excite", "--config", str(snap), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "data.csv").read_bytes() == (tmp_path / "b" / "data.csv").read_bytes()
    assert len(load_csv(tmp_path / "a" / "data.csv")) == 720


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("NNMPC_OUTPUT_ROOT", str(tmp_path))
    assert main(["excite", "--days", "1", "--out", "rel"]) == 0
    assert (tmp_path / "rel" / "data.csv").is_file()


def test_usage_and_config_errors(tmp_path, sample_csv):
    assert main(["excite", "--config", str(tmp_path / "nope.ini")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["train"])  # --data missing
    assert exc.value.code == 2
    assert main(["train", "--data", str(sample_csv), "--target", "zone:11",
                 "--out", str(tmp_path / "m")]) == 2
    assert main(["run", "--controller", "mpc-min", "--out", str(tmp_path / "r")]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[mpc]\nN = ten\n")
    assert main(["run", "--controller", "baseline", "--config", str(bad),
                 "--out", str(tmp_path / "r")]) == 2


def test_io_errors(tmp_path, sample_csv):
    assert main(["train", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == 3
    assert main(["validate", "--data", str(sample_csv), "--models", str(tmp_path / "none"),
                 "--out", str(tmp_path / "v")]) == 3
    broken = tmp_path / "broken.csv"
    broken.write_text("timestamp,oops\n1,2\n")
    assert main(["train", "--data", str(broken), "--out", str(tmp_path / "m")]) == 3
    assert main(["report", "--run-a", str(tmp_path / "x"), "--run-b", str(tmp_path / "y"),
                 "--out", str(tmp_path / "rep")]) == 3


def test_train_outputs(trained):
    d, _ = trained
    m = d / "models"
    assert {p.name for p in m.glob("*.model.json")} == (
        {"energy.model.json"} | {f"zone_{j}.model.json" for j in range(1, 11)})
    ev = json.loads((m / "zone_3.eval.json").read_text())
    assert {"mae", "persistence_mae", "epochs"} <= set(ev)
    assert len(pd.read_csv(m / "energy.manifest.csv")) == 100
    assert (m / "config.snapshot").is_file()


def test_single_target_training_is_deterministic(tmp_path, fast_ini, sample_csv):
    for name in ("a", "b"):
        assert main(["train", "--config", str(fast_ini), "--data", str(sample_csv),
                     "--target", "zone:2", "--seed", "3", "--out", str(tmp_path / name)]) == 0
    assert ((tmp_path / "a" / "zone_2.model.json").read_bytes()
            == (tmp_path / "b" / "zone_2.model.json").read_bytes())
    assert not (tmp_path / "a" / "energy.model.json").exists()


def test_validate(trained, sample_csv):
    d, ini = trained
    assert main(["validate", "--config", str(ini), "--data", str(sample_csv),
                 "--models", str(d / "models"), "--out", str(d / "val")]) == 0
    table = pd.read_csv(d / "val" / "validation.csv")
    assert len(table) == 22 and set(table["predictor"]) == {"model", "persistence"}
    assert (d / "val" / "zone_1.hist.csv").is_file()
    assert (d / "val" / "zone_1.hist.png").stat().st_size > 0


def test_run_and_report(trained):
    d, ini = trained
    common = ["--config", str(ini), "--seed", "5"]
    assert main(["run", "--controller", "baseline", *common, "--out", str(d / "base")]) == 0
    assert main(["run", "--controller", "mpc-tracking", *common, "--models", str(d / "models"),
                 "--out", str(d / "track")]) == 0
    solves = (d / "track" / "solves.jsonl").read_text().splitlines()
    assert len(solves) > 200 and "u_int" in json.loads(solves[0])
    assert (d / "base" / "solves.jsonl").read_text() == ""
    assert main(["report", "--config", str(ini), "--run-a", str(d / "base"),
                 "--run-b", str(d / "track"), "--out", str(d / "rep")]) == 0
    rep = json.loads((d / "rep" / "comparison.json").read_text())
    assert rep["labels"] == ["baseline", "mpc-tracking"] and rep["weather_identical"]
    for name in ("cumulative_energy", "temperatures", "weather_distributions"):
        assert (d / "rep" / f"{name}.csv").is_file()
        assert (d / "rep" / f"{name}.png").stat().st_size > 0
    # same inputs, same bytes
    assert main(["run", "--controller", "mpc-tracking", *common, "--models", str(d / "models"),
                 "--out", str(d / "track2")]) == 0
    for name in ("frame.csv", "solves.jsonl", "metrics.json"):
        assert (d / "track" / name).read_bytes() == (d / "track2" / name).read_bytes()


def test_report_on_mismatched_durations(trained, tmp_path):
    d, ini = trained
    longer = tmp_path / "ini2"
    longer.write_text(FAST_INI.replace("days = 1", "days = 2"))
    assert main(["run", "--controller", "baseline", "--config", str(longer),
                 "--out", str(tmp_path / "two")]) == 0
    assert main(["run", "--controller", "baseline", "--config", str(ini),
                 "--out", str(tmp_path / "one")]) == 0
    assert main(["report", "--run-a", str(tmp_path / "one"), "--run-b", str(tmp_path / "two"),
                 "--out", str(tmp_path / "rep")]) == 2


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "nnmpc.cli", "--version"], capture_output=True,
                         text=True)
    assert out.returncode == 0 and out.stdout.startswith("nnmpc ")
