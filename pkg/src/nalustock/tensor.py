"""Dense float64 arrays and the checked kernels the layers are built from.

A tensor here is simply a C-contiguous ``numpy.ndarray`` of dtype float64.
The helpers below add the shape contracts the rest of the package relies on:
explicit shape-mismatch errors, a single supported broadcast form (a per-row
bias vector) and reshape with one inferred ``-1`` extent.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError

Tensor = np.ndarray

DTYPE = np.float64


def tensor(data, shape: Sequence[int] | None = None) -> Tensor:
    """Build a float64 tensor from nested sequences or a flat sequence plus shape."""
    arr = np.array(data, dtype=DTYPE, order="C")
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape, dtype=np.int64)) != arr.size:
            raise ShapeError(
                f"cannot build tensor of shape {shape} from {arr.size} values"
            )
        arr = arr.reshape(shape)
    return arr


def zeros(shape: Sequence[int]) -> Tensor:
    return np.zeros(tuple(shape), dtype=DTYPE)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    return a @ b


def map_unary(x: Tensor, f: Callable[[Tensor], Tensor]) -> Tensor:
    """Apply a pointwise function. ``f`` must be a numpy ufunc or equivalent."""
    out = np.asarray(f(x), dtype=DTYPE)
    if out.shape != x.shape:
        raise ShapeError(f"pointwise function changed shape {x.shape} -> {out.shape}")
    return out


def is_row_bias(a_shape: tuple, b_shape: tuple) -> bool:
    return len(a_shape) == 2 and len(b_shape) == 1 and a_shape[1] == b_shape[0]


def zip_binary(a: Tensor, b: Tensor, f: Callable[[Tensor, Tensor], Tensor]) -> Tensor:
    """Pointwise ``f(a, b)``.

    Shapes must match exactly, or ``b`` must be a vector with one entry per
    column of the 2-d ``a`` (bias added to every row). Anything else raises.
    """
    if a.shape != b.shape and not is_row_bias(a.shape, b.shape):
        raise ShapeError(f"cannot combine shapes {a.shape} and {b.shape}")
    return np.asarray(f(a, b), dtype=DTYPE)


def resolve_shape(size: int, new_shape: Sequence[int]) -> tuple[int, ...]:
    new_shape = tuple(int(s) for s in new_shape)
    wild = [i for i, s in enumerate(new_shape) if s == -1]
    if len(wild) > 1:
        raise ShapeError(f"at most one -1 extent allowed, got {new_shape}")
    if any(s == 0 or s < -1 for s in new_shape):
        raise ShapeError(f"extents must be positive, got {new_shape}")
    known = int(np.prod([s for s in new_shape if s != -1], dtype=np.int64))
    if wild:
        if size % known:
            raise ShapeError(f"cannot reshape {size} values into {new_shape}")
        resolved = list(new_shape)
        resolved[wild[0]] = size // known
        return tuple(resolved)
    if known != size:
        raise ShapeError(f"cannot reshape {size} values into {new_shape}")
    return new_shape


def reshape(x: Tensor, new_shape: Sequence[int]) -> Tensor:
    return x.reshape(resolve_shape(x.size, new_shape))
