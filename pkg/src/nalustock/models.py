"""Builders for the four forecasting architectures: ANN, CNN, NALU and CNN-NALU.

All four map a batch of lookback windows to one value in (0, 1) per sample.
Dense-input variants take ``(n, lookback)``; convolutional variants take
``(n, 1, lookback)``. :meth:`Network.prepare` converts between the two.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Variable
from .errors import LayerError, ModelError
from .layers import (
    DEFAULT_DROPOUT,
    NALU_EPSILON,
    NALU,
    Conv1d,
    Dense,
    Dropout,
    Flatten,
    MaxPool1d,
    Module,
    ReLU,
    Sigmoid,
)

VARIANTS = ("ANN", "CNN", "NALU", "CNN_NALU")

DEFAULT_WIDTHS = {
    "ANN": [64, 32, 16],
    "NALU": [64, 32, 16],
    "CNN": [32, 16],
    # first two are NALU layers, the rest dense
    "CNN_NALU": [64, 32, 16],
}


def normalize_variant(name: str) -> str:
    key = name.strip().upper().replace("-", "_")
    if key not in VARIANTS:
        raise ModelError(f"unknown model variant {name!r}; expected one of ann, cnn, nalu, cnn-nalu")
    return key


@dataclass
class ModelSpec:
    variant: str
    hidden_widths: list[int] | None = None
    dropout_rate: float = DEFAULT_DROPOUT
    input_length: int = 20
    conv_channels: list[int] = field(default_factory=lambda: [1, 16, 32, 64])
    kernel_size: int = 4
    conv_paddings: list[int] = field(default_factory=lambda: [0, 0, 2])
    pool_sizes: list[int] = field(default_factory=lambda: [2, 2, 1])
    pool_stride: int = 2
    nalu_epsilon: float = NALU_EPSILON
    nalu_m_path: str = "sigmoid"
    nalu_shared_weights: bool = True
    seed: int = 0

    def __post_init__(self):
        self.variant = normalize_variant(self.variant)
        if self.hidden_widths is None:
            self.hidden_widths = list(DEFAULT_WIDTHS[self.variant])
        self.hidden_widths = [int(w) for w in self.hidden_widths]
        if any(w < 1 for w in self.hidden_widths):
            raise ModelError(f"hidden widths must be positive, got {self.hidden_widths}")
        if self.variant == "CNN_NALU" and len(self.hidden_widths) < 2:
            raise ModelError("CNN_NALU needs at least two hidden widths (the NALU layers)")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ModelError(f"dropout rate must lie in [0, 1), got {self.dropout_rate}")
        if self.variant in ("CNN", "CNN_NALU"):
            n_conv = len(self.conv_channels) - 1
            if n_conv < 1 or self.conv_channels[0] != 1:
                raise ModelError(f"conv_channels must start at 1 input channel, got {self.conv_channels}")
            if len(self.conv_paddings) != n_conv or len(self.pool_sizes) != n_conv:
                raise ModelError(
                    f"need one padding and one pool size per conv layer ({n_conv}), got "
                    f"{self.conv_paddings} and {self.pool_sizes}"
                )

    @property
    def convolutional(self) -> bool:
        return self.variant in ("CNN", "CNN_NALU")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ModelError(f"unknown ModelSpec fields {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))


class Network(Module):
    def __init__(self, spec: ModelSpec, layers: list[Module], input_shape: tuple, length_trace=None):
        super().__init__()
        self.spec = spec
        self.layers = layers
        self.input_shape = input_shape
        self.length_trace = list(length_trace or [])
        shape = (1,) + tuple(input_shape[1:])
        for layer in layers:
            shape = layer.output_shape(shape)
        self.output_shape_ = (None,) + tuple(shape[1:])
        if self.output_shape_ != (None, 1):
            raise ModelError(f"network output must be (n, 1), got {self.output_shape_}")

    def named_parameters(self) -> Iterator[tuple[str, Variable]]:
        for i, layer in enumerate(self.layers):
            for name, p in layer.named_parameters():
                yield f"{i}.{name}", p

    def prepare(self, inputs: np.ndarray) -> np.ndarray:
        """Shape a ``(n, lookback)`` array for this network's input rank."""
        inputs = np.asarray(inputs, dtype=np.float64)
        if self.spec.convolutional and inputs.ndim == 2:
            inputs = inputs.reshape(inputs.shape[0], 1, inputs.shape[1])
        expected = tuple(self.input_shape[1:])
        if tuple(inputs.shape[1:]) != expected:
            raise ModelError(f"input shape {inputs.shape} does not match network input {self.input_shape}")
        return inputs

    def forward(self, x, training=False, rng=None):
        if not isinstance(x, Variable):
            x = ad.constant(self.prepare(x))
        for layer in self.layers:
            x = layer(x, training=training, rng=rng)
        return x

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        """Eval-mode forward on plain arrays, returning ``(n, 1)``."""
        return self.forward(ad.constant(self.prepare(inputs)), training=False).value

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        if set(params) != set(state):
            raise ModelError(
                f"parameter names differ: missing {sorted(set(params) - set(state))}, "
                f"unexpected {sorted(set(state) - set(params))}"
            )
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.value.shape:
                raise ModelError(f"parameter {name}: shape {value.shape} != {p.value.shape}")
            p.value[...] = value

    def __repr__(self):
        body = ", ".join(repr(layer) for layer in self.layers)
        return f"Network[{self.spec.variant}]({body})"


def _require(spec: ModelSpec, variant: str) -> None:
    if spec.variant != variant:
        raise ModelError(f"spec variant {spec.variant} passed to the {variant} builder")


def _head(widths, in_features, rng, dropout_rate, kinds, last_dropout=False):
    """Hidden stack followed by a scalar output layer and sigmoid.

    ``kinds`` says per layer whether it is "dense" or a ("nalu", kwargs) pair.
    Dropout follows every hidden ReLU except the one feeding the output layer,
    unless ``last_dropout`` is set.
    """
    layers: list[Module] = []
    dims = [in_features] + list(widths) + [1]
    n_layers = len(dims) - 1
    for i in range(n_layers):
        kind = kinds[i]
        if kind == "dense":
            layers.append(Dense(dims[i], dims[i + 1], rng))
        else:
            layers.append(NALU(dims[i], dims[i + 1], rng, **kind[1]))
        if i < n_layers - 1:
            layers.append(ReLU())
            if i < n_layers - 2 or last_dropout:
                layers.append(Dropout(dropout_rate))
    layers.append(Sigmoid())
    return layers


def _nalu_kwargs(spec):
    return {
        "epsilon": spec.nalu_epsilon,
        "m_path": spec.nalu_m_path,
        "shared_weights": spec.nalu_shared_weights,
    }


def _conv_trunk(spec: ModelSpec, rng):
    """Conv -> ReLU -> MaxPool blocks, then flatten. Returns (layers, trace, features)."""
    layers: list[Module] = []
    trace = []
    length = spec.input_length
    chans = spec.conv_channels
    for i in range(len(chans) - 1):
        pad = spec.conv_paddings[i]
        conv = Conv1d(chans[i], chans[i + 1], spec.kernel_size, rng, padding=pad)
        pool = MaxPool1d(spec.pool_sizes[i], spec.pool_stride)
        try:
            _, _, length = conv.output_shape((1, chans[i], length))
            trace.append(length)
            _, _, length = pool.output_shape((1, chans[i + 1], length))
            trace.append(length)
        except LayerError as exc:
            raise ModelError(f"convolutional trunk collapses after trace {trace}: {exc}") from exc
        if length < 1:
            raise ModelError(f"convolutional trunk collapses: length trace {trace}")
        layers += [conv, ReLU(), pool]
    layers.append(Flatten())
    return layers, trace, chans[-1] * length


def build_ann(spec: ModelSpec) -> Network:
    _require(spec, "ANN")
    rng = np.random.default_rng(spec.seed)
    n = len(spec.hidden_widths) + 1
    layers = _head(spec.hidden_widths, spec.input_length, rng, spec.dropout_rate, ["dense"] * n)
    return Network(spec, layers, (None, spec.input_length))


def build_nalu(spec: ModelSpec) -> Network:
    _require(spec, "NALU")
    rng = np.random.default_rng(spec.seed)
    n = len(spec.hidden_widths) + 1
    kinds = [("nalu", _nalu_kwargs(spec))] * n
    layers = _head(spec.hidden_widths, spec.input_length, rng, spec.dropout_rate, kinds)
    return Network(spec, layers, (None, spec.input_length))


def build_cnn(spec: ModelSpec) -> Network:
    _require(spec, "CNN")
    rng = np.random.default_rng(spec.seed)
    trunk, trace, features = _conv_trunk(spec, rng)
    n = len(spec.hidden_widths) + 1
    head = _head(
        spec.hidden_widths, features, rng, spec.dropout_rate, ["dense"] * n, last_dropout=True
    )
    return Network(spec, trunk + head, (None, 1, spec.input_length), trace)


def build_cnn_nalu(spec: ModelSpec) -> Network:
    _require(spec, "CNN_NALU")
    rng = np.random.default_rng(spec.seed)
    trunk, trace, features = _conv_trunk(spec, rng)
    n = len(spec.hidden_widths) + 1
    kinds = [("nalu", _nalu_kwargs(spec))] * 2 + ["dense"] * (n - 2)
    head = _head(spec.hidden_widths, features, rng, spec.dropout_rate, kinds)
    return Network(spec, trunk + head, (None, 1, spec.input_length), trace)


BUILDERS = {
    "ANN": build_ann,
    "CNN": build_cnn,
    "NALU": build_nalu,
    "CNN_NALU": build_cnn_nalu,
}


def build(spec: ModelSpec) -> Network:
    return BUILDERS[spec.variant](spec)
