"""Arithmetic extrapolation benchmarks: train on a small input range, test on a
wider one, and compare plain dense networks against NAC and NALU layers."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .errors import BenchError
from .layers import NAC, NALU, Dense, Module, ReLU
from .training import Adam

OPERATIONS = ("add", "subtract", "scale_sum")
MODELS = ("dense", "nac", "nalu")


@dataclass(frozen=True)
class ArithTask:
    operation: str = "add"
    input_dim: int = 2
    train_range: tuple[float, float] = (0.0, 0.5)
    test_range: tuple[float, float] = (0.0, 2.0)
    n_train: int = 512
    n_test: int = 512
    alpha: float = 2.0  # multiplier for scale_sum

    def __post_init__(self):
        if self.operation not in OPERATIONS:
            raise BenchError(f"unknown operation {self.operation!r}; expected one of {OPERATIONS}")
        if self.input_dim < 1 or (self.operation == "subtract" and self.input_dim % 2):
            raise BenchError(f"invalid input_dim {self.input_dim} for {self.operation}")
        (a, b), (c, d) = self.train_range, self.test_range
        if not all(math.isfinite(v) for v in (a, b, c, d)):
            raise BenchError("ranges must be finite")
        if not (a < b and c < d):
            raise BenchError(f"empty range in train {self.train_range} or test {self.test_range}")
        if not (c <= a and b <= d and (c < a or b < d)):
            raise BenchError(
                f"test range {self.test_range} must strictly contain train range {self.train_range}"
            )

    def target(self, x: np.ndarray) -> np.ndarray:
        if self.operation == "add":
            y = x.sum(axis=1)
        elif self.operation == "subtract":
            h = self.input_dim // 2
            y = x[:, :h].sum(axis=1) - x[:, h:].sum(axis=1)
        else:
            y = self.alpha * x.sum(axis=1)
        return y.reshape(-1, 1)


@dataclass
class ArithSplit:
    inputs: np.ndarray
    targets: np.ndarray


def gen_arith_task(task: ArithTask, seed: int = 0) -> tuple[ArithSplit, ArithSplit, ArithSplit]:
    """(train, interpolation test, extrapolation test).

    Extrapolation rows are drawn from the test range and redrawn until at
    least one coordinate falls outside the train range.
    """
    rng = np.random.default_rng(seed)
    lo, hi = task.train_range
    d = task.input_dim

    train_x = rng.uniform(lo, hi, size=(task.n_train, d))
    interp_x = rng.uniform(lo, hi, size=(task.n_test, d))
    rows = []
    while len(rows) < task.n_test:
        cand = rng.uniform(*task.test_range, size=(task.n_test, d))
        outside = ((cand < lo) | (cand > hi)).any(axis=1)
        rows.extend(cand[outside])
    extrap_x = np.array(rows[: task.n_test])
    return tuple(ArithSplit(x, task.target(x)) for x in (train_x, interp_x, extrap_x))


class Stack(Module):
    def __init__(self, layers):
        super().__init__()
        self.layers = layers

    def named_parameters(self):
        for i, layer in enumerate(self.layers):
            for name, p in layer.named_parameters():
                yield f"{i}.{name}", p

    def forward(self, x, training=False, rng=None):
        for layer in self.layers:
            x = layer(x)
        return x


def make_model(kind: str, input_dim: int, seed: int, hidden: int = 8, m_path: str = "sigmoid") -> Stack:
    """Linear-output models; no sigmoid since the targets are unbounded."""
    rng = np.random.default_rng(seed)
    if kind == "dense":
        return Stack([Dense(input_dim, hidden, rng), ReLU(), Dense(hidden, 1, rng)])
    if kind == "nac":
        return Stack([NAC(input_dim, 1, rng)])
    if kind == "nalu":
        return Stack([NALU(input_dim, 1, rng, m_path=m_path)])
    if kind == "nalu_exp":
        return Stack([NALU(input_dim, 1, rng, m_path="exp")])
    raise BenchError(f"unknown bench model {kind!r}")


def saturated_nac(input_dim: int, signs, magnitude: float = 20.0) -> Stack:
    """A NAC whose effective weights are pinned at +-1 (or 0 where sign is 0)."""
    layer = NAC(input_dim, 1, np.random.default_rng(0))
    signs = np.asarray(signs, dtype=np.float64).reshape(1, input_dim)
    layer.W_hat.value[...] = magnitude * signs
    layer.M_hat.value[...] = np.where(signs == 0, -magnitude, magnitude)
    return Stack([layer])


def mae(model: Module, split: ArithSplit) -> float:
    pred = model(ad.constant(split.inputs)).value
    return float(np.mean(np.abs(pred - split.targets)))


@dataclass
class BenchConfig:
    epochs: int = 2000
    lr: float = 1e-2
    seed: int = 0
    hidden: int = 8
    converge_mse: float = 1e-4


@dataclass
class ModelResult:
    model: str
    task: str
    interp_mae: float
    extrap_mae: float
    epochs_to_converge: int | None  # first epoch with train MSE below threshold
    diverged: bool = False


@dataclass
class BenchResult:
    rows: list[ModelResult] = field(default_factory=list)

    def by_model(self) -> dict[str, ModelResult]:
        return {r.model: r for r in self.rows}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "task", "interp_mae", "extrap_mae", "epochs"])
            for r in self.rows:
                epochs = "" if r.epochs_to_converge is None else r.epochs_to_converge
                w.writerow([r.model, r.task, f"{r.interp_mae:.17g}", f"{r.extrap_mae:.17g}", epochs])


def fit(model: Module, split: ArithSplit, cfg: BenchConfig) -> int | None:
    """Full-batch Adam on MSE. Returns the convergence epoch (or None).

    Raises FloatingPointError if the loss turns non-finite.
    """
    opt = Adam(model.parameters())
    x, y = ad.constant(split.inputs), ad.constant(split.targets)
    converged = None
    for epoch in range(1, cfg.epochs + 1):
        opt.zero_grad()
        with Tape() as tape:
            loss = ad.mean(ad.square(ad.sub(model(x), y)))
        value = float(loss.value[0])
        if not math.isfinite(value):
            raise FloatingPointError(f"loss {value} at epoch {epoch}")
        if converged is None and value < cfg.converge_mse:
            converged = epoch
        tape.backward(loss)
        opt.step(cfg.lr)
    return converged


def run_extrapolation_bench(
    task: ArithTask, cfg: BenchConfig | None = None, models=MODELS
) -> BenchResult:
    """Train every model with identical data, seed and budget; report MAEs."""
    cfg = cfg or BenchConfig()
    train, interp, extrap = gen_arith_task(task, cfg.seed)
    result = BenchResult()
    for kind in sorted(models):
        model = make_model(kind, task.input_dim, cfg.seed, cfg.hidden)
        try:
            epochs = fit(model, train, cfg)
            i_mae, e_mae = mae(model, interp), mae(model, extrap)
            diverged = not (math.isfinite(i_mae) and math.isfinite(e_mae))
        except FloatingPointError:
            epochs, i_mae, e_mae, diverged = None, math.inf, math.inf, True
        result.rows.append(ModelResult(kind, task.operation, i_mae, e_mae, epochs, diverged))
    return result
