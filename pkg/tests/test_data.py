import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nalustock import data
from nalustock.data import ScalerParams
from nalustock.errors import DataError

SAMPLE_PRICES = [411.15, 414.05, 410.20, 410.25, 410.00]
SAMPLE_SCALED = [0.1840, 0.1874, 0.1828, 0.1829, 0.1826]


def write(tmp_path, text, name="prices.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def sample_scaler_fit():
    """Least-squares (min, range) from price = min + range * scaled."""
    A = np.c_[np.ones(5), SAMPLE_SCALED]
    (lo, rng), *_ = np.linalg.lstsq(A, np.array(SAMPLE_PRICES), rcond=None)
    return lo, rng


def test_load_csv_close_column(tmp_path):
    p = write(tmp_path, "Date,Open,Close,Volume\nd1,1,410.00,5\nd2,1,411.15,5\nd3,1,414.05,5\n")
    s = data.load_csv(p)
    np.testing.assert_array_equal(s.values, [410.00, 411.15, 414.05])
    assert s.dates == ("d1", "d2", "d3")


def test_load_csv_drops_blank_and_bad_rows(tmp_path):
    p = write(tmp_path, "Close\n1\n2\n\n3\nabc\n4\n")
    assert len(data.load_csv(p)) == 4
    p = write(tmp_path, "Date,Close\nd1,1\nd2,\nd3,3\nd4,4\nd5,5\n", "b.csv")
    s = data.load_csv(p)
    assert len(s) == 4 and s.dates == ("d1", "d3", "d4", "d5")


def test_load_csv_errors(tmp_path):
    with pytest.raises(DataError, match="no such file"):
        data.load_csv(tmp_path / "missing.csv")
    with pytest.raises(DataError, match="Close"):
        data.load_csv(write(tmp_path, "Date,Open\na,1\n"))
    with pytest.raises(DataError, match="no usable"):
        data.load_csv(write(tmp_path, "Close\n\nx\n", "c.csv"))


def test_fit_scaler():
    assert data.fit_scaler(np.array([0.0, 10.0])) == ScalerParams(0.0, 10.0)
    assert data.fit_scaler(np.array([410.00, 411.15, 414.05])) == ScalerParams(410.00, 414.05)
    with pytest.raises(DataError, match="constant"):
        data.fit_scaler(np.array([3.0, 3.0, 3.0]))
    with pytest.raises(DataError):
        ScalerParams(1.0, 1.0)


def test_sample_scaler_fit_reproduces_published_scaling():
    lo, rng = sample_scaler_fit()
    # independent least-squares fit lands near min 256.3, range 841.6
    assert lo == pytest.approx(256.32, abs=0.01)
    assert rng == pytest.approx(841.63, abs=0.01)
    scaler = ScalerParams(lo, lo + rng)
    np.testing.assert_allclose(scaler.scale(SAMPLE_PRICES), SAMPLE_SCALED, atol=1e-4)


def test_scale_examples():
    p = ScalerParams(255.93, 1099.68)
    assert p.scale(255.93) == 0.0 and p.scale(1099.68) == 1.0
    assert data.scale(p, 411.15) == pytest.approx(0.1840, abs=1e-4)
    np.testing.assert_allclose(p.scale(SAMPLE_PRICES), SAMPLE_SCALED, atol=1e-4)


@settings(max_examples=100, deadline=None)
@given(
    lo=st.floats(-1e4, 1e4),
    width=st.floats(1e-3, 1e4),
    t=st.floats(-2, 3),
)
def test_scale_roundtrip(lo, width, t):
    p = ScalerParams(lo, lo + width)
    x = lo + t * width
    back = data.inverse_scale(p, data.scale(p, x))
    assert back == pytest.approx(x, rel=1e-9, abs=1e-9 * max(abs(lo), width))


def test_scaled_series_hits_zero_and_one(rng):
    s = rng.uniform(100, 200, 50)
    y = data.fit_scaler(s).scale(s)
    assert y.min() == 0.0 and y.max() == 1.0 and np.all((y >= 0) & (y <= 1))


def test_make_windows_minimal():
    s = np.arange(25, dtype=float)
    w = data.make_windows(s)
    assert len(w) == 1
    np.testing.assert_array_equal(w.inputs[0], s[:20])
    assert w.labels[0, 0] == s[24]


def test_make_windows_counts_and_labels():
    s = np.arange(30, dtype=float)
    w = data.make_windows(s)
    assert len(w) == 6
    for j in range(6):
        np.testing.assert_array_equal(w.inputs[j], s[j : j + 20])
        assert w.labels[j, 0] == s[j + 19 + 5]
    with pytest.raises(DataError, match="too short"):
        data.make_windows(np.arange(24.0))


@settings(max_examples=40, deadline=None)
@given(L=st.integers(25, 400))
def test_window_count_law(L):
    assert len(data.make_windows(np.zeros(L))) == L - 24


def test_split_five_equal_batches():
    d = data.make_windows(np.linspace(0, 1, 6160 + 24))
    b = data.split_and_batch(d, 0.8, 1232)
    assert [len(x) for x in b.train] == [1232] * 4
    assert [len(x) for x in b.test] == [1232]
    assert b.train[0].inputs.shape == (1232, 20)


def test_split_small_and_chronological():
    d = data.make_windows(np.arange(10 + 24, dtype=float))
    b = data.split_and_batch(d, 0.8, 4)
    assert [len(x) for x in b.train] == [4, 4] and [len(x) for x in b.test] == [2]
    starts = [row[0] for batch in b.train + b.test for row in batch.inputs]
    assert starts == sorted(starts) and len(set(starts)) == 10
    assert [batch.start for batch in b.train + b.test] == [0, 4, 8]


def test_split_degenerate():
    d = data.make_windows(np.arange(25, dtype=float))
    with pytest.raises(DataError, match="degenerate"):
        data.split_and_batch(d, 0.8, 4)
    with pytest.raises(DataError):
        data.split_and_batch(data.make_windows(np.arange(40.0)), 0.8, 0)


def test_synthetic_deterministic_and_positive():
    a, b = data.generate_synthetic(seed=3), data.generate_synthetic(seed=3)
    np.testing.assert_array_equal(a.values, b.values)
    assert len(a) == 6200 and np.all(a.values > 0)
    assert not np.array_equal(a.values, data.generate_synthetic(seed=4).values)
    assert len(data.make_windows(a.values)) == 6176


def test_synthetic_constant_rejected_downstream():
    s = data.generate_synthetic(100, params=data.SyntheticParams(trend=0, amplitude=0, noise_sd=0))
    assert np.all(s.values == s.values[0])
    with pytest.raises(DataError, match="constant"):
        data.fit_scaler(s)


def test_synthetic_length_check():
    with pytest.raises(DataError):
        data.generate_synthetic(24)


def test_csv_roundtrip_through_scaler(tmp_path):
    s = data.generate_synthetic(300, seed=1)
    p = tmp_path / "s.csv"
    data.write_csv(s, p)
    loaded = data.load_csv(p)
    assert loaded.dates == s.dates
    scaler = data.fit_scaler(loaded)
    back = scaler.inverse(scaler.scale(loaded.values))
    np.testing.assert_allclose(back, loaded.values, rtol=1e-9)
