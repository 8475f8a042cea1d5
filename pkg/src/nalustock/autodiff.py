"""Tape-based reverse-mode automatic differentiation.

Operations on :class:`Variable` objects compute their value eagerly. When a
:class:`Tape` is active on the current thread, each operation also appends a
record holding its inputs, its output and a closure mapping the output
gradient to input gradients. ``Tape.backward`` replays the records in reverse.

Outside a tape nothing is recorded, which is how inference runs.

    >>> x = Variable(tensor([3.0]), requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = x * x
    >>> tape.backward(loss)
    >>> x.grad
    array([6.])
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .errors import AutodiffError, ShapeError
from .tensor import Tensor

_ids = itertools.count()
_local = threading.local()


class Variable:
    """A tensor value plus its accumulated gradient."""

    __slots__ = ("value", "requires_grad", "node_id", "is_leaf", "_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=T.DTYPE, order="C")
        self.requires_grad = requires_grad
        self.node_id = next(_ids)
        self.is_leaf = True
        self._grad = None
        self.name = name

    @property
    def grad(self) -> Tensor:
        if self._grad is None or self._grad.shape != self.value.shape:
            self._grad = np.zeros_like(self.value)
        return self._grad

    def zero_grad(self) -> None:
        self._grad = None

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Variable{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x) -> Variable:
    if isinstance(x, Variable):
        return x
    return Variable(np.broadcast_to(np.asarray(x, dtype=T.DTYPE), ()).copy())


def constant(x) -> Variable:
    return Variable(x, requires_grad=False)


@dataclass
class Record:
    inputs: tuple[Variable, ...]
    output: Variable
    backward: Callable[[Tensor], Sequence[Tensor | None]]


class Tape:
    """Ordered log of the operations of one forward pass."""

    def __init__(self):
        self.records: list[Record] = []
        self._outputs: set[int] = set()

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def __len__(self) -> int:
        return len(self.records)

    def record(self, inputs, output, backward) -> None:
        self.records.append(Record(tuple(inputs), output, backward))
        self._outputs.add(output.node_id)

    def backward(self, loss: Variable) -> None:
        """Accumulate d(loss)/d(leaf) into ``grad`` of every requires_grad leaf."""
        if not self.records:
            raise AutodiffError("backward on an empty tape")
        if loss.value.size != 1 or loss.value.ndim > 2:
            raise AutodiffError(f"loss must be scalar, got shape {loss.shape}")
        if loss.node_id not in self._outputs:
            raise AutodiffError("loss was not produced on this tape")

        grads: dict[int, Tensor] = {loss.node_id: np.ones_like(loss.value)}
        for rec in reversed(self.records):
            g_out = grads.pop(rec.output.node_id, None)
            if g_out is None:
                continue
            g_ins = rec.backward(g_out)
            for var, g in zip(rec.inputs, g_ins):
                if g is None or not var.requires_grad:
                    continue
                if var.is_leaf:
                    var.grad  # materialize
                    var._grad += g
                elif var.node_id in grads:
                    grads[var.node_id] = grads[var.node_id] + g
                else:
                    grads[var.node_id] = g


def _stack() -> list[Tape]:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def backward(tape: Tape, loss: Variable) -> None:
    tape.backward(loss)


def _result(value: Tensor, inputs: Sequence[Variable], backward) -> Variable:
    out = Variable(value)
    out.is_leaf = False
    out.requires_grad = any(v.requires_grad for v in inputs)
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(inputs, out, backward)
    return out


def _unbroadcast(g: Tensor, shape: tuple) -> Tensor:
    # undo the scalar / row-bias broadcast used by the pointwise ops
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    if len(shape) == 1 and g.ndim == 2:
        return g.sum(axis=0)
    raise ShapeError(f"cannot reduce gradient {g.shape} to {shape}")


def _check_pair(a: Variable, b: Variable) -> None:
    if a.shape == b.shape or b.shape == () or a.shape == ():
        return
    if T.is_row_bias(a.shape, b.shape) or T.is_row_bias(b.shape, a.shape):
        return
    raise ShapeError(f"cannot combine shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# pointwise binary


def add(a: Variable, b: Variable) -> Variable:
    _check_pair(a, b)
    return _result(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Variable, b: Variable) -> Variable:
    _check_pair(a, b)
    return _result(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
    )


def mul(a: Variable, b: Variable) -> Variable:
    _check_pair(a, b)
    av, bv = a.value, b.value
    return _result(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)),
    )


def add_bias(x: Variable, b: Variable) -> Variable:
    """Row-broadcast bias add: ``x[i, j] + b[j]``."""
    value = T.zip_binary(x.value, b.value, np.add)
    return _result(value, (x, b), lambda g: (g, g.sum(axis=0)))


# ---------------------------------------------------------------------------
# pointwise unary


def neg(x: Variable) -> Variable:
    return _result(-x.value, (x,), lambda g: (-g,))


def tanh(x: Variable) -> Variable:
    y = T.map_unary(x.value, np.tanh)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(v: Tensor) -> Tensor:
    # split by sign so neither branch overflows exp
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Variable) -> Variable:
    y = T.map_unary(x.value, _sigmoid)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x: Variable) -> Variable:
    mask = x.value > 0
    return _result(np.where(mask, x.value, 0.0), (x,), lambda g: (np.where(mask, g, 0.0),))


def exp(x: Variable) -> Variable:
    y = T.map_unary(x.value, np.exp)
    return _result(y, (x,), lambda g: (g * y,))


def log(x: Variable) -> Variable:
    xv = x.value
    return _result(T.map_unary(xv, np.log), (x,), lambda g: (g / xv,))


def abs(x: Variable) -> Variable:  # noqa: A001 - mirrors numpy naming
    # sign(0) == 0, so the subgradient at the kink is 0
    s = np.sign(x.value)
    return _result(T.map_unary(x.value, np.abs), (x,), lambda g: (g * s,))


def square(x: Variable) -> Variable:
    xv = x.value
    return _result(xv * xv, (x,), lambda g: (2.0 * g * xv,))


# ---------------------------------------------------------------------------
# reductions and shape


def sum(x: Variable) -> Variable:  # noqa: A001
    shape = x.shape
    return _result(
        np.asarray(x.value.sum()).reshape(1),
        (x,),
        lambda g: (np.full(shape, g.reshape(-1)[0]),),
    )


def mean(x: Variable) -> Variable:
    shape, n = x.shape, x.value.size
    return _result(
        np.asarray(x.value.mean()).reshape(1),
        (x,),
        lambda g: (np.full(shape, g.reshape(-1)[0] / n),),
    )


def reshape(x: Variable, new_shape: Sequence[int]) -> Variable:
    shape = x.shape
    return _result(T.reshape(x.value, new_shape), (x,), lambda g: (g.reshape(shape),))


def transpose(x: Variable) -> Variable:
    if x.value.ndim != 2:
        raise ShapeError(f"transpose needs a 2-d tensor, got {x.shape}")
    return _result(np.ascontiguousarray(x.value.T), (x,), lambda g: (g.T,))


def matmul(a: Variable, b: Variable) -> Variable:
    av, bv = a.value, b.value
    return _result(T.matmul(av, bv), (a, b), lambda g: (g @ bv.T, av.T @ g))


# ---------------------------------------------------------------------------
# 1-d convolution and pooling over (batch, channels, length)


def conv_out_length(length: int, kernel_size: int, stride: int = 1, padding: int = 0) -> int:
    return (length + 2 * padding - kernel_size) // stride + 1


def _taps(x: Tensor, kernel_size: int, stride: int, l_out: int, axis: int):
    # strided slice for each kernel tap j: x[..., j + t*stride, ...] for t < l_out
    span = stride * (l_out - 1) + 1
    idx = [slice(None)] * x.ndim
    for j in range(kernel_size):
        idx[axis] = slice(j, j + span, stride)
        yield j, tuple(idx)


def conv1d(
    x: Variable, kernels: Variable, bias: Variable, stride: int = 1, padding: int = 0
) -> Variable:
    """Cross-correlation (no kernel flip) with zero padding on both ends.

    out[n, o, t] = bias[o] + sum_{i, j} kernels[o, i, j] * x_pad[n, i, t*stride + j]
    """
    xv, kv = x.value, kernels.value
    if xv.ndim != 3:
        raise ShapeError(f"conv1d input must be (batch, channels, length), got {xv.shape}")
    n, c_in, length = xv.shape
    c_out, k_in, k = kv.shape
    if k_in != c_in:
        raise ShapeError(f"conv1d expects {k_in} input channels, got {c_in}")
    if length + 2 * padding < k:
        raise ShapeError(
            f"conv1d input too short: length {length} + 2*{padding} padding < kernel {k}"
        )
    l_pad = length + 2 * padding
    l_out = conv_out_length(length, k, stride, padding)
    # channels-last so every tap is one large GEMM operand
    xt = np.zeros((n, l_pad, c_in))
    xt[:, padding : padding + length, :] = xv.transpose(0, 2, 1)
    cols = np.empty((n, l_out, k, c_in))
    for j, sl in _taps(xt, k, stride, l_out, axis=1):
        cols[:, :, j, :] = xt[sl]
    cols = cols.reshape(n * l_out, k * c_in)
    kmat = kv.transpose(0, 2, 1).reshape(c_out, k * c_in)
    out = (cols @ kmat.T).reshape(n, l_out, c_out)
    out = np.ascontiguousarray(out.transpose(0, 2, 1)) + bias.value[None, :, None]

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(n * l_out, c_out)
        g_k = (g2.T @ cols).reshape(c_out, k, c_in).transpose(0, 2, 1)
        g_cols = (g2 @ kmat).reshape(n, l_out, k, c_in)
        g_xt = np.zeros((n, l_pad, c_in))
        for j, sl in _taps(g_xt, k, stride, l_out, axis=1):
            g_xt[sl] += g_cols[:, :, j, :]
        g_x = np.ascontiguousarray(g_xt[:, padding : padding + length, :].transpose(0, 2, 1))
        return g_x, np.ascontiguousarray(g_k), g.sum(axis=(0, 2))

    return _result(out, (x, kernels, bias), backward)


def maxpool1d(x: Variable, kernel_size: int, stride: int) -> Variable:
    """Max over each window; gradient goes to the first maximal position only."""
    xv = x.value
    if xv.ndim != 3:
        raise ShapeError(f"maxpool1d input must be (batch, channels, length), got {xv.shape}")
    if xv.shape[2] < kernel_size:
        raise ShapeError(f"maxpool1d input too short: length {xv.shape[2]} < kernel {kernel_size}")
    l_out = conv_out_length(xv.shape[2], kernel_size, stride)
    out = argmax = None
    for j, sl in _taps(xv, kernel_size, stride, l_out, axis=2):
        cand = xv[sl]
        if out is None:
            out, argmax = cand.copy(), np.zeros(cand.shape, dtype=np.intp)
        else:
            better = cand > out  # strict: ties keep the earlier tap
            out[better] = cand[better]
            argmax[better] = j

    def backward(g):
        gx = np.zeros_like(xv)
        for j, sl in _taps(gx, kernel_size, stride, l_out, axis=2):
            gx[sl] += np.where(argmax == j, g, 0.0)
        return (gx,)

    return _result(out, (x,), backward)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f: Callable[[Variable], Variable], x: Variable, h: float = 1e-5) -> float:
    """Largest relative gap between backprop and central differences.

    ``f`` maps ``x`` to a scalar Variable and must be deterministic. The
    relative error per coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    ``x.value`` is perturbed in place and restored.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"step h={h} outside [1e-7, 1e-3]")
    was = x.requires_grad
    x.requires_grad = True
    x.zero_grad()
    with Tape() as tape:
        out = f(x)
    if tape.records and out.node_id in tape._outputs:
        tape.backward(out)
    analytic = x.grad.copy()
    x.zero_grad()
    x.requires_grad = was

    numeric = np.zeros_like(x.value)
    flat = x.value.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x).value.reshape(-1)[0])
        flat[i] = orig - h
        fm = float(f(x).value.reshape(-1)[0])
        flat[i] = orig
        numeric.reshape(-1)[i] = (fp - fm) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
