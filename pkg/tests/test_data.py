import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nnmpc.data import (COLUMNS, ENERGY_LAGS, ZONE_LAGS, LagSpec, Normalizer, TimeSeriesFrame,
                        apply, build_manifest, chronological_split, excitation_schedule,
                        excitation_segments,
                        fit_normalizer, invert, load_csv, make_lagged_samples, write_csv,
                        write_manifest)
from nnmpc.errors import IngestionError, InvalidInputError


def _frame(n=12, seed=0):
    rng = np.random.default_rng(seed)
    return TimeSeriesFrame.from_arrays(
        "2020-01-01T00:00:00Z", 120.0,
        np.column_stack([rng.normal(5, 2, n), rng.uniform(40, 90, n), rng.uniform(0, 300, n)]),
        np.round(rng.normal(24, 1, (n, 10)), 1),
        rng.integers(22, 29, (n, 10)).astype(float),
        rng.integers(0, 2, n),
        rng.uniform(1, 80, n))


# --- CSV --------------------------------------------------------------------

def test_header_is_exact():
    assert ",".join(COLUMNS) == (
        "timestamp,t_out,humidity,solar,"
        + ",".join(f"t_zone_{j}" for j in range(1, 11)) + ","
        + ",".join(f"sp_zone_{j}" for j in range(1, 11)) + ",comp_mode,energy")


def test_csv_round_trip(tmp_path):
    fr = _frame(720)
    write_csv(fr, tmp_path / "a.csv")
    back = load_csv(tmp_path / "a.csv")
    assert len(back) == 720
    assert back.equals(fr)
    write_csv(back, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_shipped_sample_round_trip(tmp_path, sample_csv):
    fr = load_csv(sample_csv)
    write_csv(fr, tmp_path / "x.csv")
    assert load_csv(tmp_path / "x.csv").equals(fr)


def test_shuffled_rows_rejected(tmp_path):
    fr = _frame(20)
    write_csv(fr, tmp_path / "a.csv")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    lines[3], lines[7] = lines[7], lines[3]
    (tmp_path / "s.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(IngestionError, match="non-increasing") as exc:
        load_csv(tmp_path / "s.csv")
    assert exc.value.column == "timestamp"


def test_bad_header_and_cells(tmp_path):
    fr = _frame(5)
    write_csv(fr, tmp_path / "a.csv")
    text = (tmp_path / "a.csv").read_text()
    (tmp_path / "h.csv").write_text(text.replace("t_out", "tout", 1))
    with pytest.raises(IngestionError):
        load_csv(tmp_path / "h.csv")
    lines = text.splitlines()
    cells = lines[3].split(",")  # data row 2
    cells[5] = "abc"
    lines[3] = ",".join(cells)
    (tmp_path / "c.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(IngestionError) as exc:
        load_csv(tmp_path / "c.csv")
    assert exc.value.row == 2 and exc.value.column == COLUMNS[5]
    cells[5] = ""
    lines[3] = ",".join(cells)
    (tmp_path / "m.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(IngestionError):
        load_csv(tmp_path / "m.csv")


def test_comp_mode_domain():
    fr = _frame(5)
    df = fr.df.copy()
    df.loc[2, "comp_mode"] = 2
    with pytest.raises(IngestionError, match="comp_mode"):
        TimeSeriesFrame(df)


# --- lagged samples ---------------------------------------------------------

def test_regressor_widths():
    fr = _frame(40)
    assert make_lagged_samples(fr, ENERGY_LAGS, "energy").X.shape[1] == 100
    assert make_lagged_samples(fr, ZONE_LAGS, "zone:3").X.shape[1] == 20


def test_sample_count_hand_example():
    # 12 rows, energy lookback 4 and no lead: valid t are 4..11 -> 8 samples
    ds = make_lagged_samples(_frame(12), ENERGY_LAGS, "energy")
    assert len(ds) == 8
    np.testing.assert_array_equal(ds.index, np.arange(4, 12))
    # zone target looks one step ahead: t = 3..10
    assert len(make_lagged_samples(_frame(12), ZONE_LAGS, "zone:1")) == 8


def test_energy_manifest_layout():
    m = build_manifest("energy", ENERGY_LAGS)
    assert m[:4] == [("energy", 1), ("energy", 2), ("energy", 3), ("energy", 4)]
    assert ("energy", 0) not in m
    assert m[-1] == ("comp_mode", 3)
    z = build_manifest("zone:7", ZONE_LAGS)
    assert {s for s, _ in z} == {"t_zone_7", "t_out", "humidity", "solar", "sp_zone_7"}


def test_manifest_fidelity_and_targets():
    fr = _frame(30, seed=3)
    for target in ("energy", "zone:4"):
        ds = make_lagged_samples(fr, ENERGY_LAGS if target == "energy" else ZONE_LAGS, target)
        for r, t in enumerate(ds.index):
            for c, (sig, lag) in enumerate(ds.manifest):
                assert ds.X[r, c] == fr[sig][t - lag]
        if target == "energy":
            np.testing.assert_array_equal(ds.y, fr["energy"][ds.index])
        else:
            np.testing.assert_array_equal(ds.y, fr["t_zone_4"][ds.index + 1])


def test_too_short_and_bad_target():
    with pytest.raises(InvalidInputError):
        make_lagged_samples(_frame(5), ENERGY_LAGS, "energy")
    with pytest.raises(InvalidInputError):
        make_lagged_samples(_frame(20), ZONE_LAGS, "zone:11")
    with pytest.raises(InvalidInputError):
        LagSpec(-1, 0, 0)


def test_manifest_export(tmp_path):
    ds = make_lagged_samples(_frame(20), ZONE_LAGS, "zone:2")
    write_manifest(ds, tmp_path / "m.csv")
    m = pd.read_csv(tmp_path / "m.csv")
    assert len(m) == 20 and list(m.columns) == ["column", "signal", "lag"]


# --- split and normalisation -----------------------------------------------

def test_chronological_split():
    ds = make_lagged_samples(_frame(14), ENERGY_LAGS, "energy")  # 10 samples
    a, b = chronological_split(ds, 0.8)
    assert (len(a), len(b)) == (8, 2)
    assert a.index.max() < b.index.min()
    np.testing.assert_array_equal(np.concatenate([a.index, b.index]), ds.index)
    with pytest.raises(InvalidInputError):
        chronological_split(ds, 1.0)


def test_normalizer():
    rng = np.random.default_rng(1)
    x = rng.normal(3, 5, (200, 4))
    n = fit_normalizer(x, names=list("abcd"))
    z = apply(n, x)
    np.testing.assert_allclose(z.mean(axis=0), 0, atol=1e-9)
    np.testing.assert_allclose(z.std(axis=0), 1, atol=1e-9)
    np.testing.assert_allclose(invert(n, z), x, atol=1e-12, rtol=0)
    back = Normalizer.from_dict(n.to_dict())
    np.testing.assert_array_equal(back.mean, n.mean)
    np.testing.assert_array_equal(back.std, n.std)
    # statistics belong to the data they were fitted on
    other = fit_normalizer(rng.normal(0, 1, (200, 4)))
    assert not np.allclose(other.mean, n.mean)


def test_constant_feature_rejected_by_name():
    x = np.ones((10, 3))
    x[:, 0] = np.arange(10)
    x[:, 2] = np.arange(10) * 2
    with pytest.raises(InvalidInputError, match="b"):
        fit_normalizer(x, names=["a", "b", "c"])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=40).filter(
    lambda v: np.ptp(v) > 1e-3))
def test_normalizer_round_trip_property(values):
    x = np.asarray(values)[:, None]
    n = fit_normalizer(x)
    np.testing.assert_allclose(invert(n, apply(n, x)), x, rtol=0, atol=1e-12 * (1 + np.abs(x).max()))


# --- excitation -------------------------------------------------------------

def test_excitation_schedule():
    s = excitation_schedule(11, 10, 3)
    assert s.shape == (3 * 720, 10)
    assert set(np.unique(s)) <= set(range(22, 29))
    np.testing.assert_array_equal(s, excitation_schedule(11, 10, 3))
    segs = excitation_segments(11, 10, 3)
    for z in range(10):
        mine = [seg for seg in segs if seg[0] == z]
        assert mine[0][1] == 0 and mine[-1][1] + mine[-1][2] == len(s)
        for _, start, length, value in mine[:-1]:  # the last one may be truncated
            assert 30 <= length <= 60  # 60..120 min at Ts = 2 min
            assert np.all(s[start:start + length, z] == value)
