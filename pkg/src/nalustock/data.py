"""Close-price ingestion, min-max scaling, windowing, splitting and a synthetic series.

Typical flow::

    series = load_csv("prices.csv")
    scaler = fit_scaler(series)
    windows = make_windows(scaler.scale(series.values))
    batches = split_and_batch(windows, batch_size=1232)

Samples are split chronologically by window start index. The window that
straddles the boundary can have its label inside the test period; that
overlap is accepted, only the ordering of window starts is enforced.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np

from .errors import DataError

LOOKBACK = 20
HORIZON = 5
BATCH_SIZE = 1232
TRAIN_FRACTION = 0.8
SYNTHETIC_LENGTH = 6200


@dataclass(frozen=True)
class PriceSeries:
    values: np.ndarray
    source: str = ""
    dates: tuple[str, ...] | None = None

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ScalerParams:
    min: float
    max: float

    def __post_init__(self):
        if not self.max > self.min:
            raise DataError(f"scaler needs max > min, got min={self.min} max={self.max}")

    @property
    def range(self) -> float:
        return self.max - self.min

    def scale(self, x):
        return (np.asarray(x, dtype=np.float64) - self.min) / (self.max - self.min)

    def inverse(self, y):
        return np.asarray(y, dtype=np.float64) * (self.max - self.min) + self.min


def scale(p: ScalerParams, x):
    return p.scale(x)


def inverse_scale(p: ScalerParams, y):
    return p.inverse(y)


@dataclass(frozen=True)
class WindowedDataset:
    inputs: np.ndarray  # (n, lookback)
    labels: np.ndarray  # (n, 1)
    lookback: int = LOOKBACK
    horizon: int = HORIZON
    start: int = 0  # window start index of row 0 within the source series

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def start_indices(self) -> np.ndarray:
        return np.arange(self.start, self.start + len(self))

    def subset(self, lo: int, hi: int) -> "WindowedDataset":
        return WindowedDataset(
            self.inputs[lo:hi], self.labels[lo:hi], self.lookback, self.horizon, self.start + lo
        )


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray
    start: int

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class SplitBatches:
    train: list[Batch]
    test: list[Batch]
    batch_size: int
    train_set: WindowedDataset = field(repr=False)
    test_set: WindowedDataset = field(repr=False)


def load_csv(path) -> PriceSeries:
    """Read the Close column, dropping rows whose Close is blank or unparseable."""
    if not os.path.isfile(path):
        raise DataError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        if "Close" not in header:
            raise DataError(f"{path}: header has no Close column (found {header})")
        reader.fieldnames = header
        has_date = "Date" in header
        values, dates = [], []
        for row in reader:
            raw = (row.get("Close") or "").strip()
            try:
                v = float(raw)
            except ValueError:
                continue
            if not math.isfinite(v):
                continue
            values.append(v)
            if has_date:
                dates.append((row.get("Date") or "").strip())
    if not values:
        raise DataError(f"{path}: no usable Close values after cleaning")
    return PriceSeries(np.array(values), source=str(path), dates=tuple(dates) if has_date else None)


def write_csv(series: PriceSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if series.dates is not None:
            writer.writerow(["Date", "Close"])
            for d, v in zip(series.dates, series.values):
                writer.writerow([d, f"{v:.2f}"])
        else:
            writer.writerow(["Close"])
            for v in series.values:
                writer.writerow([f"{v:.2f}"])


def fit_scaler(series) -> ScalerParams:
    values = np.asarray(getattr(series, "values", series), dtype=np.float64)
    if values.size < 2:
        raise DataError(f"need at least 2 values to fit a scaler, got {values.size}")
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        raise DataError(f"constant series (every value is {lo}); cannot min-max scale")
    return ScalerParams(lo, hi)


def make_windows(scaled, lookback: int = LOOKBACK, horizon: int = HORIZON) -> WindowedDataset:
    """Row j: inputs ``s[j:j+lookback]``, label ``s[j+lookback-1+horizon]``."""
    s = np.asarray(scaled, dtype=np.float64)
    if lookback < 1 or horizon < 1:
        raise DataError(f"lookback and horizon must be positive, got {lookback}, {horizon}")
    n = len(s) - lookback - horizon + 1
    if n < 1:
        raise DataError(
            f"series of length {len(s)} too short for lookback {lookback} + horizon {horizon}"
        )
    inputs = np.lib.stride_tricks.sliding_window_view(s, lookback)[:n].copy()
    labels = s[lookback - 1 + horizon : lookback - 1 + horizon + n].reshape(n, 1).copy()
    return WindowedDataset(inputs, labels, lookback, horizon)


def _chunk(d: WindowedDataset, batch_size: int) -> list[Batch]:
    return [
        Batch(d.inputs[i : i + batch_size], d.labels[i : i + batch_size], d.start + i)
        for i in range(0, len(d), batch_size)
    ]


def split_and_batch(
    d: WindowedDataset, train_fraction: float = TRAIN_FRACTION, batch_size: int = BATCH_SIZE
) -> SplitBatches:
    """Chronological split, then fixed-size batches (a short final batch is kept)."""
    if batch_size < 1:
        raise DataError(f"batch size must be positive, got {batch_size}")
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train fraction must lie in (0, 1), got {train_fraction}")
    n = len(d)
    n_train = math.floor(train_fraction * n)
    if n_train < 1 or n_train >= n:
        raise DataError(
            f"degenerate split: {n} samples at fraction {train_fraction} gives "
            f"{n_train} train / {n - n_train} test"
        )
    train, test = d.subset(0, n_train), d.subset(n_train, n)
    return SplitBatches(_chunk(train, batch_size), _chunk(test, batch_size), batch_size, train, test)


@dataclass(frozen=True)
class SyntheticParams:
    base: float = 400.0
    # flat by default: any trend pushes the chronological test split above the
    # training range, which the sigmoid output head cannot extrapolate to
    trend: float = 0.0  # per step
    amplitude: float = 60.0
    period: float = 250.0
    noise_sd: float = 1.0


def generate_synthetic(
    n: int = SYNTHETIC_LENGTH, seed: int = 0, params: SyntheticParams | None = None
) -> PriceSeries:
    """Linear trend + sinusoid + Gaussian noise, clipped to stay positive."""
    if n < LOOKBACK + HORIZON:
        raise DataError(f"synthetic series length must be at least {LOOKBACK + HORIZON}, got {n}")
    return _synthetic(n, seed, params or SyntheticParams())


def _synthetic(n: int, seed: int, p: SyntheticParams) -> PriceSeries:
    rng = np.random.default_rng(seed)
    t = np.arange(n, dtype=np.float64)
    values = p.base + p.trend * t + p.amplitude * np.sin(2.0 * np.pi * t / p.period)
    if p.noise_sd:
        values = values + rng.normal(0.0, p.noise_sd, size=n)
    values = np.maximum(values, 0.01)
    start = datetime(2015, 2, 2, 9, 0)
    dates = tuple((start + timedelta(hours=i)).strftime("%Y-%m-%d %H:%M") for i in range(n))
    return PriceSeries(values, source=f"synthetic(seed={seed})", dates=dates)
