"""Differentiable layers.

Each layer is a small callable object. ``layer(x, training=..., rng=...)``
maps a :class:`~nalustock.autodiff.Variable` to a Variable; trainable
weights are exposed through :meth:`Module.named_parameters`.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Variable
from .errors import LayerError

NALU_EPSILON = 1e-7
DEFAULT_DROPOUT = 0.2


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Module:
    training_only = False

    def __init__(self):
        self._params: dict[str, Variable] = {}

    def param(self, name: str, value) -> Variable:
        var = Variable(value, requires_grad=True, name=name)
        self._params[name] = var
        return var

    def named_parameters(self) -> Iterator[tuple[str, Variable]]:
        yield from self._params.items()

    def parameters(self) -> list[Variable]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(np.sum([p.value.size for p in self.parameters()], dtype=np.int64))

    def forward(self, x: Variable, training: bool = False, rng=None) -> Variable:
        raise NotImplementedError

    def __call__(self, x: Variable, training: bool = False, rng=None) -> Variable:
        return self.forward(x, training=training, rng=rng)

    def output_shape(self, shape: tuple) -> tuple:
        return shape

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


class Dense(Module):
    """Affine map ``x @ W + b`` with W of shape (in, out)."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        if in_features < 1 or out_features < 1:
            raise LayerError(f"Dense widths must be positive, got {in_features}->{out_features}")
        self.in_features, self.out_features = in_features, out_features
        self.W = self.param(
            "W", glorot_uniform(rng, (in_features, out_features), in_features, out_features)
        )
        self.b = self.param("b", np.zeros(out_features))

    def forward(self, x, training=False, rng=None):
        if x.value.ndim != 2 or x.shape[1] != self.in_features:
            raise LayerError(f"Dense expects (n, {self.in_features}) input, got {x.shape}")
        return ad.add_bias(ad.matmul(x, self.W), self.b)

    def output_shape(self, shape):
        return (shape[0], self.out_features)

    def __repr__(self):
        return f"Dense({self.in_features}->{self.out_features})"


class Conv1d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
    ):
        super().__init__()
        if kernel_size < 1 or stride < 1 or padding < 0:
            raise LayerError(
                f"invalid Conv1d geometry: kernel={kernel_size} stride={stride} padding={padding}"
            )
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.stride, self.padding = kernel_size, stride, padding
        self.kernels = self.param(
            "kernels",
            glorot_uniform(
                rng,
                (out_channels, in_channels, kernel_size),
                in_channels * kernel_size,
                out_channels * kernel_size,
            ),
        )
        self.bias = self.param("bias", np.zeros(out_channels))

    def forward(self, x, training=False, rng=None):
        return ad.conv1d(x, self.kernels, self.bias, self.stride, self.padding)

    def output_shape(self, shape):
        n, _, length = shape
        if length + 2 * self.padding < self.kernel_size:
            raise LayerError(
                f"Conv1d input too short: length {length} with padding {self.padding} "
                f"< kernel {self.kernel_size}"
            )
        return (n, self.out_channels, ad.conv_out_length(length, self.kernel_size, self.stride, self.padding))

    def __repr__(self):
        return (
            f"Conv1d({self.in_channels}->{self.out_channels}, k={self.kernel_size}, "
            f"s={self.stride}, pad={self.padding})"
        )


class MaxPool1d(Module):
    def __init__(self, kernel_size: int, stride: int):
        super().__init__()
        if kernel_size < 1 or stride < 1:
            raise LayerError(f"invalid MaxPool1d geometry: kernel={kernel_size} stride={stride}")
        self.kernel_size, self.stride = kernel_size, stride

    def forward(self, x, training=False, rng=None):
        return ad.maxpool1d(x, self.kernel_size, self.stride)

    def output_shape(self, shape):
        n, c, length = shape
        if length < self.kernel_size:
            raise LayerError(f"MaxPool1d input too short: length {length} < kernel {self.kernel_size}")
        return (n, c, ad.conv_out_length(length, self.kernel_size, self.stride))

    def __repr__(self):
        return f"MaxPool1d(k={self.kernel_size}, s={self.stride})"


class ReLU(Module):
    def forward(self, x, training=False, rng=None):
        return ad.relu(x)


class Sigmoid(Module):
    def forward(self, x, training=False, rng=None):
        return ad.sigmoid(x)


class Dropout(Module):
    """Inverted dropout: survivors are scaled by 1/(1-rate); eval mode is the identity."""

    def __init__(self, rate: float = DEFAULT_DROPOUT):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise LayerError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, training=False, rng=None):
        if not training or self.rate == 0.0:
            return x
        if rng is None:
            raise LayerError("Dropout in training mode needs an rng")
        keep = rng.random(x.shape) >= self.rate
        return ad.mul(x, ad.constant(keep / (1.0 - self.rate)))

    def __repr__(self):
        return f"Dropout({self.rate})"


class Flatten(Module):
    """(n, C, L) -> (n, 1, C*L) -> (n, C*L)."""

    def forward(self, x, training=False, rng=None):
        n = x.shape[0]
        return ad.reshape(ad.reshape(x, (n, 1, -1)), (n, -1))

    def output_shape(self, shape):
        return (shape[0], int(np.prod(shape[1:])))


def nac_weight(W_hat: Variable, M_hat: Variable) -> Variable:
    return ad.mul(ad.tanh(W_hat), ad.sigmoid(M_hat))


class NAC(Module):
    """Neural accumulator: ``a = x @ W.T`` with ``W = tanh(W_hat) * sigmoid(M_hat)``; no bias."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        shape = (out_features, in_features)
        self.W_hat = self.param("W_hat", glorot_uniform(rng, shape, in_features, out_features))
        self.M_hat = self.param("M_hat", glorot_uniform(rng, shape, in_features, out_features))

    def effective_weight(self) -> Variable:
        return nac_weight(self.W_hat, self.M_hat)

    def _check(self, x):
        if x.value.ndim != 2 or x.shape[1] != self.in_features:
            raise LayerError(
                f"{type(self).__name__} expects (n, {self.in_features}) input, got {x.shape}"
            )

    def forward(self, x, training=False, rng=None):
        self._check(x)
        return ad.matmul(x, ad.transpose(self.effective_weight()))

    def output_shape(self, shape):
        return (shape[0], self.out_features)

    def __repr__(self):
        return f"{type(self).__name__}({self.in_features}->{self.out_features})"


class NALU(NAC):
    """Gated mix of an additive NAC path and a log-space path.

    ``y = g * a + (1 - g) * m`` with ``g = sigmoid(x @ G.T)``, ``a`` the NAC
    output and ``m = sigmoid(log(|x| + eps) @ W.T)``. The m-path squashes with
    a sigmoid rather than exponentiating, so ``m`` lies in (0, 1).

    ``m_path="exp"`` restores the exponential form and
    ``shared_weights=False`` gives the m-path its own (W_hat, M_hat) pair;
    both exist for the extrapolation benchmarks and default off.
    """

    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        epsilon: float = NALU_EPSILON,
        m_path: str = "sigmoid",
        shared_weights: bool = True,
    ):
        if epsilon <= 0:
            raise LayerError(f"NALU epsilon must be positive, got {epsilon}")
        if m_path not in ("sigmoid", "exp"):
            raise LayerError(f"unknown NALU m_path {m_path!r}")
        super().__init__(in_features, out_features, rng)
        shape = (out_features, in_features)
        self.G = self.param("G", glorot_uniform(rng, shape, in_features, out_features))
        self.epsilon = epsilon
        self.m_path = m_path
        self.shared_weights = shared_weights
        if not shared_weights:
            self.W_hat_m = self.param("W_hat_m", glorot_uniform(rng, shape, in_features, out_features))
            self.M_hat_m = self.param("M_hat_m", glorot_uniform(rng, shape, in_features, out_features))

    def forward(self, x, training=False, rng=None):
        self._check(x)
        W = self.effective_weight()
        g = ad.sigmoid(ad.matmul(x, ad.transpose(self.G)))
        a = ad.matmul(x, ad.transpose(W))
        W_m = W if self.shared_weights else nac_weight(self.W_hat_m, self.M_hat_m)
        log_x = ad.log(ad.add(ad.abs(x), ad.constant(self.epsilon)))
        z = ad.matmul(log_x, ad.transpose(W_m))
        m = ad.sigmoid(z) if self.m_path == "sigmoid" else ad.exp(z)
        return ad.add(ad.mul(g, a), ad.mul(ad.sub(ad.constant(1.0), g), m))
