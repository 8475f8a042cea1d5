"""Command-line front end: ``nalustock {generate,train,predict,bench}``.

Settings come from built-in defaults, then an optional ``--config`` file of
flat ``key = value`` lines (``model.variant = nalu``, ``train.epochs = 100``;
``#`` starts a comment), then command-line flags.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import benchmarks, data, training
from .errors import ConfigError, NalustockError
from .models import ModelSpec, build, normalize_variant

logger = logging.getLogger("nalustock")

VARIANT_CHOICES = ("ann", "cnn", "nalu", "cnn-nalu")


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.replace(" ", "").split(",") if v]


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(" ", "").split(",") if v)


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _words(text: str) -> tuple[str, ...]:
    return tuple(v for v in text.replace(" ", "").split(",") if v)


@dataclass
class RunConfig:
    # model
    variant: str = "nalu"
    hidden_widths: list[int] | None = None
    dropout_rate: float = 0.2
    kernel_size: int = 4
    conv_channels: list[int] | None = None
    conv_paddings: list[int] | None = None
    pool_sizes: list[int] | None = None
    nalu_epsilon: float = 1e-7
    nalu_m_path: str = "sigmoid"
    nalu_shared_weights: bool = True
    # training
    epochs: int = training.EPOCHS
    seed: int = 0
    batch_size: int = data.BATCH_SIZE
    lr_min: float = training.LR_MIN
    lr_max: float = training.LR_MAX
    step_size_epochs: float = 2.0
    select_on: str = "train"
    # data
    data_path: str | None = None
    lookback: int = data.LOOKBACK
    horizon: int = data.HORIZON
    train_fraction: float = data.TRAIN_FRACTION
    scaler_fit: str = "full"
    # generate
    n: int = data.SYNTHETIC_LENGTH
    base: float = data.SyntheticParams.base
    trend: float = data.SyntheticParams.trend
    amplitude: float = data.SyntheticParams.amplitude
    period: float = data.SyntheticParams.period
    noise_sd: float = data.SyntheticParams.noise_sd
    # bench
    task: str = "add"
    input_dim: int = 2
    train_range: tuple[float, ...] = (0.0, 0.5)
    test_range: tuple[float, ...] = (0.0, 2.0)
    bench_epochs: int = benchmarks.BenchConfig.epochs
    bench_lr: float = benchmarks.BenchConfig.lr
    bench_models: tuple[str, ...] = benchmarks.MODELS
    # paths
    out_path: str | None = None
    report_path: str | None = None
    checkpoint_path: str | None = None

    def model_spec(self) -> ModelSpec:
        kw = dict(
            variant=self.variant,
            hidden_widths=self.hidden_widths,
            dropout_rate=self.dropout_rate,
            input_length=self.lookback,
            kernel_size=self.kernel_size,
            nalu_epsilon=self.nalu_epsilon,
            nalu_m_path=self.nalu_m_path,
            nalu_shared_weights=self.nalu_shared_weights,
            seed=self.seed,
        )
        for name in ("conv_channels", "conv_paddings", "pool_sizes"):
            if getattr(self, name) is not None:
                kw[name] = getattr(self, name)
        return ModelSpec(**kw)

    def synthetic_params(self) -> data.SyntheticParams:
        return data.SyntheticParams(self.base, self.trend, self.amplitude, self.period, self.noise_sd)


# config-file key -> (RunConfig field, parser)
CONFIG_KEYS = {
    "model.variant": ("variant", str),
    "model.hidden_widths": ("hidden_widths", _ints),
    "model.dropout_rate": ("dropout_rate", float),
    "model.kernel_size": ("kernel_size", int),
    "model.conv_channels": ("conv_channels", _ints),
    "model.conv_paddings": ("conv_paddings", _ints),
    "model.pool_sizes": ("pool_sizes", _ints),
    "model.nalu_epsilon": ("nalu_epsilon", float),
    "model.nalu_m_path": ("nalu_m_path", str),
    "model.nalu_shared_weights": ("nalu_shared_weights", _bool),
    "train.epochs": ("epochs", int),
    "train.seed": ("seed", int),
    "train.batch_size": ("batch_size", int),
    "train.lr_min": ("lr_min", float),
    "train.lr_max": ("lr_max", float),
    "train.step_size_epochs": ("step_size_epochs", float),
    "train.select_on": ("select_on", str),
    "train.report": ("report_path", str),
    "data.path": ("data_path", str),
    "data.lookback": ("lookback", int),
    "data.horizon": ("horizon", int),
    "data.train_fraction": ("train_fraction", float),
    "data.scaler_fit": ("scaler_fit", str),
    "generate.n": ("n", int),
    "generate.base": ("base", float),
    "generate.trend": ("trend", float),
    "generate.amplitude": ("amplitude", float),
    "generate.period": ("period", float),
    "generate.noise_sd": ("noise_sd", float),
    "bench.task": ("task", str),
    "bench.input_dim": ("input_dim", int),
    "bench.train_range": ("train_range", _floats),
    "bench.test_range": ("test_range", _floats),
    "bench.epochs": ("bench_epochs", int),
    "bench.lr": ("bench_lr", float),
    "bench.models": ("bench_models", _words),
    "out.path": ("out_path", str),
    "predict.checkpoint": ("checkpoint_path", str),
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        attr, parse = CONFIG_KEYS[key]
        try:
            values[attr] = parse(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, str(path))


# command-line dest -> RunConfig field
FLAG_FIELDS = {
    "data": "data_path",
    "out": "out_path",
    "variant": "variant",
    "epochs": "epochs",
    "seed": "seed",
    "batch_size": "batch_size",
    "lookback": "lookback",
    "horizon": "horizon",
    "n": "n",
    "report": "report_path",
    "checkpoint": "checkpoint_path",
    "task": "task",
}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = replace(cfg, **load_config(args.config))
    overrides = {
        FLAG_FIELDS[k]: v for k, v in vars(args).items() if k in FLAG_FIELDS and v is not None
    }
    return replace(cfg, **overrides)


# ---------------------------------------------------------------------------
# commands


def cmd_generate(cfg: RunConfig) -> Path:
    if cfg.out_path is None:
        raise ConfigError("generate needs --out")
    if cfg.n < 1:
        raise ConfigError(f"--n must be positive, got {cfg.n}")
    # the 25-value minimum is enforced when the series is windowed, not here
    series = data._synthetic(cfg.n, cfg.seed, cfg.synthetic_params())
    data.write_csv(series, cfg.out_path)
    print(f"wrote {cfg.n} rows to {cfg.out_path}")
    return Path(cfg.out_path)


def prepare_data(cfg: RunConfig):
    if cfg.data_path is None:
        raise ConfigError("no input data: pass --data or set data.path")
    series = data.load_csv(cfg.data_path)
    if cfg.scaler_fit == "full":
        scaler = data.fit_scaler(series)
    elif cfg.scaler_fit == "train":
        n_windows = len(series) - cfg.lookback - cfg.horizon + 1
        n_train = int(np.floor(cfg.train_fraction * n_windows))
        last_label = n_train - 1 + cfg.lookback - 1 + cfg.horizon
        scaler = data.fit_scaler(series.values[: max(last_label + 1, 2)])
    else:
        raise ConfigError(f"data.scaler_fit must be 'full' or 'train', got {cfg.scaler_fit!r}")
    windows = data.make_windows(scaler.scale(series.values), cfg.lookback, cfg.horizon)
    batches = data.split_and_batch(windows, cfg.train_fraction, cfg.batch_size)
    return series, scaler, windows, batches


def cmd_train(cfg: RunConfig):
    if cfg.out_path is None:
        raise ConfigError("train needs --out (checkpoint path)")
    _, scaler, _, batches = prepare_data(cfg)
    spec = cfg.model_spec()
    network = build(spec)
    step_size = max(1, int(round(cfg.step_size_epochs * len(batches.train))))
    schedule = training.CyclicSchedule(step_size, cfg.lr_min, cfg.lr_max)
    ckpt, report = training.train(
        network, batches, cfg.epochs, schedule, cfg.seed, scaler=scaler, select_on=cfg.select_on
    )
    training.save_checkpoint(ckpt, cfg.out_path)
    report_path = cfg.report_path or f"{cfg.out_path}.report.csv"
    report.write_csv(report_path)

    print(f"model {spec.variant}: {network.num_parameters()} parameters, best epoch {report.best_epoch}")
    print(f"{'state':<12}{'Training Loss':>18}{'Testing Loss':>18}")
    print(f"{'best':<12}{report.best_train_loss:>18.6g}{report.best_test_loss:>18.6g}")
    print(f"{'final':<12}{report.final_train_loss:>18.6g}{report.final_test_loss:>18.6g}")
    print(f"checkpoint: {cfg.out_path}\nreport: {report_path}")
    return ckpt, report


def cmd_predict(cfg: RunConfig) -> Path:
    if cfg.checkpoint_path is None:
        raise ConfigError("predict needs --checkpoint")
    if cfg.out_path is None:
        raise ConfigError("predict needs --out")
    if cfg.data_path is None:
        raise ConfigError("predict needs --data")
    ckpt = training.load_checkpoint(cfg.checkpoint_path)
    if ckpt.scaler is None:
        raise ConfigError(f"checkpoint {cfg.checkpoint_path} carries no scaler parameters")
    series = data.load_csv(cfg.data_path)
    windows = data.make_windows(ckpt.scaler.scale(series.values), ckpt.lookback, ckpt.horizon)
    result = training.evaluate(ckpt, windows)

    offset = ckpt.lookback - 1 + ckpt.horizon
    with open(cfg.out_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["window_start_index", "actual_scaled", "predicted_scaled", "actual_price", "predicted_price"]
        if series.dates is not None:
            header.append("date")
        w.writerow(header)
        for j in range(len(windows)):
            row = [
                j,
                f"{windows.labels[j, 0]:.17g}",
                f"{result.predictions[j, 0]:.17g}",
                f"{series.values[j + offset]:.17g}",
                f"{result.prices[j, 0]:.17g}",
            ]
            if series.dates is not None:
                row.append(series.dates[j + offset])
            w.writerow(row)
    print(f"Total Loss (whole data set, scaled): {result.loss:.6g}")
    print(f"wrote {len(windows)} predictions to {cfg.out_path}")
    return Path(cfg.out_path)


def cmd_bench(cfg: RunConfig) -> benchmarks.BenchResult:
    if len(cfg.train_range) != 2 or len(cfg.test_range) != 2:
        raise ConfigError("bench ranges need exactly two values: lo,hi")
    task = benchmarks.ArithTask(
        operation=cfg.task,
        input_dim=cfg.input_dim,
        train_range=tuple(cfg.train_range),
        test_range=tuple(cfg.test_range),
    )
    bench_cfg = benchmarks.BenchConfig(epochs=cfg.bench_epochs, lr=cfg.bench_lr, seed=cfg.seed)
    result = benchmarks.run_extrapolation_bench(task, bench_cfg, cfg.bench_models)
    out = cfg.out_path or "bench.csv"
    result.write_csv(out)
    print(f"{'model':<10}{'interp_mae':>14}{'extrap_mae':>14}{'epochs':>8}")
    for r in result.rows:
        epochs = "-" if r.epochs_to_converge is None else r.epochs_to_converge
        print(f"{r.model:<10}{r.interp_mae:>14.4g}{r.extrap_mae:>14.4g}{epochs:>8}")
    print(f"wrote {out}")
    return result


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "predict": cmd_predict,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nalustock", description="Close-price forecasting with dense, convolutional and NALU networks."
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value settings file")
        p.add_argument("--out", help="output path")
        p.add_argument("--seed", type=int)
        return p

    g = common(sub.add_parser("generate", help="write a synthetic close-price CSV"))
    g.add_argument("--n", type=int, help="number of rows (default 6200)")

    def data_flags(p):
        p.add_argument("--data", help="input CSV with a Close column")
        p.add_argument("--lookback", type=int)
        p.add_argument("--horizon", type=int)

    t = common(sub.add_parser("train", help="train one model and write a checkpoint"))
    data_flags(t)
    t.add_argument("--variant", choices=VARIANT_CHOICES)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--report", help="TrainReport CSV path (default <out>.report.csv)")

    p = common(sub.add_parser("predict", help="predict every window of a CSV"))
    p.add_argument("--checkpoint", help="checkpoint written by train")
    p.add_argument("--data", help="input CSV with a Close column")

    b = common(sub.add_parser("bench", help="arithmetic extrapolation benchmark"))
    b.add_argument("--task", choices=benchmarks.OPERATIONS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        normalize_variant(cfg.variant)
        COMMANDS[args.command](cfg)
    except NalustockError as exc:
        print(f"error: {exc.qualified()}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: [cli] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
