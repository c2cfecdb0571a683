"""Dense float64 array primitives.

A "tensor" throughout this package is a contiguous row-major float64
numpy array; these helpers add the shape contracts and deterministic
summation guarantees the rest of the system relies on. Two-operand
elementwise ops require identical shapes, with one exception: ``add``
accepts a rank-1 right operand matching the last axis (bias addition).
matmul sums strictly left-to-right over the inner axis.
"""

import numpy as np

from . import kernels
from .errors import ShapeError

Tensor = np.ndarray


def as_tensor(x) -> np.ndarray:
    """Coerce to a contiguous float64 array."""
    return np.ascontiguousarray(x, dtype=np.float64)


def _check_same_shape(op: str, a: np.ndarray, b: np.ndarray, allow_bias: bool = False):
    if a.shape == b.shape:
        return
    if allow_bias and b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return
    raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} do not match")


def add(a, b):
    a = as_tensor(a)
    b = as_tensor(b)
    _check_same_shape("add", a, b, allow_bias=True)
    return a + b


def sub(a, b):
    a = as_tensor(a)
    b = as_tensor(b)
    _check_same_shape("sub", a, b)
    return a - b


def mul(a, b):
    a = as_tensor(a)
    b = as_tensor(b)
    _check_same_shape("mul", a, b)
    return a * b


def scale(a, s: float):
    return as_tensor(a) * float(s)


def apply(fn, a):
    """Elementwise map of a python function (vectorized via np.vectorize)."""
    out = np.vectorize(fn, otypes=[np.float64])(as_tensor(a))
    return np.ascontiguousarray(out)


def elementwise(op: str, a, b=None):
    """Dispatch form of the elementwise ops: add/sub/mul/scale/map."""
    if op == "add":
        return add(a, b)
    if op == "sub":
        return sub(a, b)
    if op == "mul":
        return mul(a, b)
    if op == "scale":
        return scale(a, b)
    if op == "map":
        return apply(b, a)
    raise ValueError(f"unknown elementwise op {op!r}")


def matmul(a, b):
    """Rank-2 matrix product with left-to-right inner summation."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: inner extents differ, {a.shape} vs {b.shape}"
        )
    return kernels.matmul(a, b)


def pad_zero(img, k: int):
    """Surround an [H, W, C] image with k rings of zeros."""
    img = as_tensor(img)
    if img.ndim != 3:
        raise ShapeError(f"pad_zero: expected [H, W, C], got {img.shape}")
    if k < 0:
        raise ValueError(f"pad_zero: k must be non-negative, got {k}")
    return np.pad(img, ((k, k), (k, k), (0, 0)))


def reduce(op: str, t, axes=None, keepdims: bool = False):
    """Reduce by sum, max, or mean over the given axes (all by default)."""
    t = as_tensor(t)
    if axes is not None:
        axes = (axes,) if np.isscalar(axes) else tuple(axes)
        for ax in axes:
            if not -t.ndim <= ax < t.ndim:
                raise ShapeError(f"reduce: axis {ax} out of range for rank {t.ndim}")
        axes = tuple(ax % t.ndim for ax in axes)
    if op == "sum":
        return t.sum(axis=axes, keepdims=keepdims)
    if op == "max":
        return t.max(axis=axes, keepdims=keepdims)
    if op == "mean":
        return t.mean(axis=axes, keepdims=keepdims)
    raise ValueError(f"unknown reduce op {op!r}")


def percentile(values, q: float) -> float:
    """Linear-interpolation percentile of the flattened values.

    Uses the rank = q/100 * (n - 1) convention, so q=0 is the minimum
    and q=100 the maximum.
    """
    values = as_tensor(values).ravel()
    if values.size == 0:
        raise ValueError("percentile: empty input")
    if not 0.0 <= q <= 100.0:
        raise ValueError(f"percentile: q must be in [0, 100], got {q}")
    return float(np.percentile(values, q, method="linear"))


def assert_finite(t, what: str = "tensor"):
    from .errors import NumericError

    if not np.all(np.isfinite(t)):
        raise NumericError(f"{what} contains non-finite values")
