"""MSE loss, Adam, the triangular cyclic learning rate, the training loop with
best-state checkpointing, evaluation, and checkpoint/report persistence."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Variable
from .data import ScalerParams, SplitBatches, WindowedDataset
from .errors import CheckpointError, DivergenceError, TrainingError
from .models import ModelSpec, Network, build

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = "nalustock-checkpoint"
LR_MIN = 1e-6
LR_MAX = 1e-2
EPOCHS = 500


def mse_loss(pred: Variable, target) -> Variable:
    target = target if isinstance(target, Variable) else ad.constant(target)
    if pred.shape != target.shape:
        raise TrainingError(f"mse_loss shape mismatch: pred {pred.shape} vs target {target.shape}")
    if pred.value.size == 0:
        raise TrainingError("mse_loss on an empty batch")
    return ad.mean(ad.square(ad.sub(pred, target)))


class Adam:
    """Bias-corrected Adam over a fixed list of parameters."""

    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        ids = [id(p) for p in self.params]
        if len(set(ids)) != len(ids):
            raise TrainingError("a parameter was registered with the optimizer twice")
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.value -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def adam_step(state: Adam, lr: float) -> None:
    state.step(lr)


@dataclass(frozen=True)
class CyclicSchedule:
    """Triangular wave between ``lr_min`` and ``lr_max``, period ``2 * step_size``."""

    step_size: int
    lr_min: float = LR_MIN
    lr_max: float = LR_MAX

    def __post_init__(self):
        if self.step_size < 1:
            raise TrainingError(f"step_size must be positive, got {self.step_size}")
        if not 0 < self.lr_min <= self.lr_max:
            raise TrainingError(f"need 0 < lr_min <= lr_max, got {self.lr_min}, {self.lr_max}")

    def __call__(self, t: int) -> float:
        return cyclic_lr(self, t)


def cyclic_lr(schedule: CyclicSchedule, t: int) -> float:
    if t < 0:
        raise TrainingError(f"iteration must be non-negative, got {t}")
    s = schedule.step_size
    phase = t % (2 * s)
    frac = phase / s if phase <= s else (2 * s - phase) / s
    lr = schedule.lr_min + (schedule.lr_max - schedule.lr_min) * frac
    return min(max(lr, schedule.lr_min), schedule.lr_max)


@dataclass
class Checkpoint:
    spec: ModelSpec
    params: dict[str, np.ndarray]
    scaler: ScalerParams | None = None
    best_loss: float = math.inf
    epoch: int = 0
    seed: int = 0
    lookback: int = 20
    horizon: int = 5
    format_version: int = FORMAT_VERSION

    def network(self) -> Network:
        net = build(self.spec)
        net.load_state_dict(self.params)
        return net


@dataclass
class EpochRecord:
    epoch: int
    mean_train_loss: float
    lr: float


@dataclass
class TrainReport:
    trace: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_loss: float = math.inf
    final_train_loss: float = math.nan
    final_test_loss: float = math.nan
    final_full_loss: float = math.nan
    best_train_loss: float = math.nan
    best_test_loss: float = math.nan
    best_full_loss: float = math.nan
    wall_clock: float = 0.0
    config: dict = field(default_factory=dict)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "mean_train_loss", "lr_at_epoch_end"])
            for r in self.trace:
                w.writerow([r.epoch, f"{r.mean_train_loss:.17g}", f"{r.lr:.17g}"])


@dataclass
class Evaluation:
    loss: float
    predictions: np.ndarray  # scaled, (n, 1)
    prices: np.ndarray | None = None  # inverse-scaled, when a scaler is known


def _dataset_loss(network: Network, inputs: np.ndarray, labels: np.ndarray) -> float:
    pred = network.predict(inputs)
    return float(np.mean((pred - labels) ** 2))


def evaluate(model, dataset: WindowedDataset, scaler: ScalerParams | None = None) -> Evaluation:
    """Eval-mode MSE in scaled space plus predictions (and prices if a scaler is given)."""
    if isinstance(model, Checkpoint):
        scaler = scaler or model.scaler
        model = model.network()
    if dataset.inputs.shape[1] != model.spec.input_length:
        raise TrainingError(
            f"dataset lookback {dataset.inputs.shape[1]} does not match model input "
            f"length {model.spec.input_length}"
        )
    pred = model.predict(dataset.inputs)
    loss = float(np.mean((pred - dataset.labels) ** 2))
    prices = scaler.inverse(pred) if scaler is not None else None
    return Evaluation(loss, pred, prices)


def parameter_hash(network: Network) -> str:
    h = hashlib.sha256()
    for name, p in network.named_parameters():
        h.update(name.encode())
        h.update(p.value.tobytes())
    return h.hexdigest()


def train(
    network: Network,
    batches: SplitBatches,
    epochs: int = EPOCHS,
    schedule: CyclicSchedule | None = None,
    seed: int = 0,
    scaler: ScalerParams | None = None,
    select_on: str = "train",
) -> tuple[Checkpoint, TrainReport]:
    """Adam + cyclic LR over the training batches, keeping the lowest-loss state.

    After every epoch the whole training split is re-scored in eval mode; that
    loss is both the trace entry and the selection criterion, so the returned
    checkpoint's ``best_loss`` is exactly what :func:`evaluate` reports for it.
    ``select_on="test"`` selects on the test split instead (leaks; off by default).
    """
    if not batches.train:
        raise TrainingError("no training batches")
    if select_on not in ("train", "test"):
        raise TrainingError(f"select_on must be 'train' or 'test', got {select_on!r}")
    if epochs < 1:
        raise TrainingError(f"epochs must be positive, got {epochs}")
    if schedule is None:
        schedule = CyclicSchedule(step_size=2 * len(batches.train))

    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    opt = Adam(network.parameters())
    train_set, test_set = batches.train_set, batches.test_set
    prepared = [(network.prepare(b.inputs), b.labels) for b in batches.train]

    report = TrainReport(config={"epochs": epochs, "seed": seed, "select_on": select_on,
                                 "step_size": schedule.step_size, "lr_min": schedule.lr_min,
                                 "lr_max": schedule.lr_max, "spec": network.spec.to_json()})
    best_state = network.state_dict()
    iteration = 0
    lr = schedule(0)
    for epoch in range(1, epochs + 1):
        for x, y in prepared:
            lr = schedule(iteration)
            opt.zero_grad()
            with Tape() as tape:
                loss = mse_loss(network.forward(ad.constant(x), training=True, rng=rng), y)
            value = float(loss.value[0])
            if not math.isfinite(value):
                raise DivergenceError(epoch, iteration, value)
            tape.backward(loss)
            opt.step(lr)
            iteration += 1

        train_loss = _dataset_loss(network, train_set.inputs, train_set.labels)
        if not math.isfinite(train_loss):
            raise DivergenceError(epoch, iteration, train_loss)
        report.trace.append(EpochRecord(epoch, train_loss, lr))
        if select_on == "train":
            score = train_loss
        else:
            score = _dataset_loss(network, test_set.inputs, test_set.labels)
        if score < report.best_loss:
            report.best_loss, report.best_epoch = score, epoch
            best_state = network.state_dict()
        logger.debug("epoch %d train_loss %.6g lr %.3g", epoch, train_loss, lr)

    full_x = np.concatenate([train_set.inputs, test_set.inputs])
    full_y = np.concatenate([train_set.labels, test_set.labels])
    report.final_train_loss = train_loss
    report.final_test_loss = _dataset_loss(network, test_set.inputs, test_set.labels)
    report.final_full_loss = _dataset_loss(network, full_x, full_y)

    network.load_state_dict(best_state)
    report.best_train_loss = _dataset_loss(network, train_set.inputs, train_set.labels)
    report.best_test_loss = _dataset_loss(network, test_set.inputs, test_set.labels)
    report.best_full_loss = _dataset_loss(network, full_x, full_y)
    report.wall_clock = time.perf_counter() - started

    ckpt = Checkpoint(
        spec=network.spec,
        params=best_state,
        scaler=scaler,
        best_loss=report.best_loss,
        epoch=report.best_epoch,
        seed=seed,
        lookback=train_set.lookback,
        horizon=train_set.horizon,
    )
    return ckpt, report


# ---------------------------------------------------------------------------
# checkpoint file
#
#   nalustock-checkpoint <format_version>
#   spec <ModelSpec json>
#   scaler <min> <max>            ("scaler none" when absent)
#   meta best_loss=<x> epoch=<n> seed=<n> lookback=<n> horizon=<n>
#   param <name> <d0,d1,...> <v> <v> ...
#
# Reals are written with 17 significant digits, which round-trips doubles.


def _f(x: float) -> str:
    return f"{x:.17g}"


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    lines = [f"{MAGIC} {ckpt.format_version}", f"spec {ckpt.spec.to_json()}"]
    if ckpt.scaler is None:
        lines.append("scaler none")
    else:
        lines.append(f"scaler {_f(ckpt.scaler.min)} {_f(ckpt.scaler.max)}")
    lines.append(
        f"meta best_loss={_f(ckpt.best_loss)} epoch={ckpt.epoch} seed={ckpt.seed} "
        f"lookback={ckpt.lookback} horizon={ckpt.horizon}"
    )
    for name, value in ckpt.params.items():
        shape = ",".join(str(d) for d in value.shape)
        body = " ".join(_f(v) for v in value.reshape(-1))
        lines.append(f"param {name} {shape} {body}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        magic, version = lines[0].split()
        if magic != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint file")
        if int(version) != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format_version {version}")
        spec = ModelSpec.from_json(lines[1].removeprefix("spec "))
        sc = lines[2].split()
        scaler = None if sc[1] == "none" else ScalerParams(float(sc[1]), float(sc[2]))
        meta = dict(kv.split("=") for kv in lines[3].split()[1:])
        params = {}
        for line in lines[4:]:
            if not line:
                continue
            tag, name, shape, *values = line.split(" ")
            if tag != "param":
                raise CheckpointError(f"unexpected record {tag!r}")
            dims = tuple(int(d) for d in shape.split(",") if d)
            params[name] = np.array([float(v) for v in values], dtype=np.float64).reshape(dims)
    except CheckpointError:
        raise
    except (IndexError, ValueError, KeyError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
    return Checkpoint(
        spec=spec,
        params=params,
        scaler=scaler,
        best_loss=float(meta["best_loss"]),
        epoch=int(meta["epoch"]),
        seed=int(meta["seed"]),
        lookback=int(meta["lookback"]),
        horizon=int(meta["horizon"]),
        format_version=int(version),
    )
