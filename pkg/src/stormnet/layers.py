"""Differentiable layers with explicit forward caches and analytic backwards.

Every layer follows the same protocol: ``build`` validates shapes and
creates parameters, ``forward`` computes outputs and stores the
intermediates its ``backward`` needs, and ``backward`` consumes that
cache exactly once, returning the gradient w.r.t. the input while
accumulating parameter gradients into ``layer.grads``. Images are
channel-last ``[B, H, W, C]``.

The forward cache makes a layer single-owner while training; parameter
arrays may be shared read-only across concurrent inference-only users.
"""

import numpy as np

from . import kernels, tensor
from .errors import ShapeError
from .rng import Rng

ACTIVATIONS = ("sigmoid", "relu", "linear", "softmax", "softplus")

# Pre-activations are clipped to +-36 before the sigmoid exponential so
# the output stays strictly inside (0, 1) in float64.
_SIGMOID_CLIP = 36.0


def sigmoid(z):
    z = np.clip(z, -_SIGMOID_CLIP, _SIGMOID_CLIP)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus(z):
    return np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0.0)


def softmax(z):
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def activate(kind: str, z):
    if kind == "linear":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return sigmoid(z)
    if kind == "softmax":
        return softmax(z)
    if kind == "softplus":
        return softplus(z)
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(kind: str, grad_out, z, out):
    """Gradient w.r.t. the pre-activation z given d(loss)/d(out)."""
    if kind == "linear":
        return grad_out
    if kind == "relu":
        return grad_out * (z > 0)
    if kind == "sigmoid":
        return grad_out * out * (1.0 - out)
    if kind == "softmax":
        inner = (grad_out * out).sum(axis=-1, keepdims=True)
        return out * (grad_out - inner)
    if kind == "softplus":
        return grad_out * sigmoid(z)
    raise ValueError(f"unknown activation {kind!r}")


class Layer:
    """Base class: parameter store plus the cache handshake."""

    def __init__(self):
        self.name = self.__class__.__name__
        self.params = {}
        self.buffers = {}
        self.grads = {}
        self._cache = None

    def build(self, input_shape, rng: Rng):
        """Validate shapes, create parameters, return the output shape."""
        raise NotImplementedError

    def forward(self, x, mode: str = "train"):
        raise NotImplementedError

    def backward(self, grad_out, need_param_grads: bool = True):
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise RuntimeError(
                f"{self.name}: backward called without a matching forward cache"
            )
        cache = self._cache
        self._cache = None
        return cache


class Dense(Layer):
    def __init__(self, units: int, activation: str = "linear", use_bias: bool = True):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.units = units
        self.activation = activation
        # bias is dropped when batch norm follows: mean subtraction makes
        # it a dead parameter (its true gradient is identically zero)
        self.use_bias = use_bias

    def build(self, input_shape, rng):
        (n,) = input_shape
        limit = np.sqrt(6.0 / n)
        self.params["W"] = rng.uniform((n, self.units), -limit, limit)
        if self.use_bias:
            self.params["b"] = np.zeros(self.units)
        return (self.units,)

    def forward(self, x, mode="train"):
        W = self.params["W"]
        if x.ndim != 2 or x.shape[1] != W.shape[0]:
            raise ShapeError(
                f"{self.name}: input {x.shape} incompatible with weights {W.shape}"
            )
        z = tensor.matmul(x, W)
        if self.use_bias:
            z = z + self.params["b"]
        out = activate(self.activation, z)
        self._cache = (x, z, out)
        return out

    def backward(self, grad_out, need_param_grads=True):
        x, z, out = self._take_cache()
        if grad_out.shape != out.shape:
            raise ShapeError(f"{self.name}: gradient shape {grad_out.shape} != {out.shape}")
        grad_z = activation_backward(self.activation, grad_out, z, out)
        if need_param_grads:
            self.grads["W"] = tensor.matmul(x.T, grad_z)
            if self.use_bias:
                self.grads["b"] = grad_z.sum(axis=0)
        return tensor.matmul(grad_z, self.params["W"].T)


class Conv2D(Layer):
    """Stride-1 'same' convolution with zero padding and odd kernels."""

    def __init__(self, filters: int, kernel_size: int = 3, activation: str = "linear",
                 use_bias: bool = True):
        super().__init__()
        if kernel_size % 2 == 0 or kernel_size < 1:
            raise ValueError(f"kernel size must be odd and positive, got {kernel_size}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.filters = filters
        self.kernel_size = kernel_size
        self.activation = activation
        self.use_bias = use_bias

    def build(self, input_shape, rng):
        H, W, Cin = input_shape
        k = self.kernel_size
        limit = np.sqrt(6.0 / (k * k * Cin))
        self.params["W"] = rng.uniform((k, k, Cin, self.filters), -limit, limit)
        if self.use_bias:
            self.params["b"] = np.zeros(self.filters)
        return (H, W, self.filters)

    def forward(self, x, mode="train"):
        W = self.params["W"]
        if x.ndim != 4 or x.shape[3] != W.shape[2]:
            raise ShapeError(
                f"{self.name}: input {x.shape} has wrong channel count for kernel {W.shape}"
            )
        k = self.kernel_size // 2
        xpad = np.pad(x, ((0, 0), (k, k), (k, k), (0, 0)))
        z = kernels.conv2d(xpad, W)
        if self.use_bias:
            z = z + self.params["b"]
        out = activate(self.activation, z)
        self._cache = (xpad, z, out)
        return out

    def backward(self, grad_out, need_param_grads=True):
        xpad, z, out = self._take_cache()
        if grad_out.shape != out.shape:
            raise ShapeError(f"{self.name}: gradient shape {grad_out.shape} != {out.shape}")
        grad_z = activation_backward(self.activation, grad_out, z, out)
        grad_xpad, grad_w = kernels.conv2d_backward(
            xpad, self.params["W"], grad_z, True, need_param_grads
        )
        if need_param_grads:
            self.grads["W"] = grad_w
            if self.use_bias:
                self.grads["b"] = grad_z.sum(axis=(0, 1, 2))
        k = self.kernel_size // 2
        if k == 0:
            return grad_xpad
        return grad_xpad[:, k:-k, k:-k, :]


class Pool2D(Layer):
    """Non-overlapping 2x2 pooling, max or average."""

    def __init__(self, mode: str = "max"):
        super().__init__()
        if mode not in ("max", "average"):
            raise ValueError(f"pool mode must be 'max' or 'average', got {mode!r}")
        self.mode = mode

    def build(self, input_shape, rng):
        H, W, C = input_shape
        if H % 2 or W % 2:
            raise ShapeError(f"{self.name}: spatial extents must be even, got {H}x{W}")
        return (H // 2, W // 2, C)

    def forward(self, x, mode="train"):
        B, H, W, C = x.shape
        if H % 2 or W % 2:
            raise ShapeError(f"{self.name}: spatial extents must be even, got {H}x{W}")
        if self.mode == "max":
            out, argmax = kernels.maxpool2x2(x)
            self._cache = ("max", argmax)
        else:
            out = x.reshape(B, H // 2, 2, W // 2, 2, C).mean(axis=(2, 4))
            self._cache = ("average", None)
        return out

    def backward(self, grad_out, need_param_grads=True):
        mode, argmax = self._take_cache()
        if mode == "max":
            return kernels.maxpool2x2_backward(grad_out, argmax)
        return np.repeat(np.repeat(grad_out, 2, axis=1), 2, axis=2) * 0.25


class UpsampleNearest(Layer):
    """Each pixel replicated into a 2x2 block."""

    def build(self, input_shape, rng):
        H, W, C = input_shape
        return (2 * H, 2 * W, C)

    def forward(self, x, mode="train"):
        self._cache = x.shape
        return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)

    def backward(self, grad_out, need_param_grads=True):
        B, H, W, C = self._take_cache()
        return grad_out.reshape(B, H, 2, W, 2, C).sum(axis=(2, 4))


class Flatten(Layer):
    def build(self, input_shape, rng):
        return (int(np.prod(input_shape)),)

    def forward(self, x, mode="train"):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out, need_param_grads=True):
        return grad_out.reshape(self._take_cache())


class Dropout(Layer):
    """Inverted dropout: train-time zeroing with 1/(1-rate) rescale,
    exact identity at inference (and at rate 0, which draws nothing)."""

    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = None

    def build(self, input_shape, rng):
        self.rng = Rng(int(rng.raw(1)[0]))
        return tuple(input_shape)

    def reseed(self, seed: int):
        self.rng = Rng(seed)

    def forward(self, x, mode="train"):
        if mode != "train" or self.rate == 0.0:
            self._cache = ("identity",)
            return x
        keep = self.rng.uniform(x.shape) >= self.rate
        scale = 1.0 / (1.0 - self.rate)
        self._cache = ("mask", keep, scale)
        return x * keep * scale

    def backward(self, grad_out, need_param_grads=True):
        cache = self._take_cache()
        if cache[0] == "identity":
            return grad_out
        _, keep, scale = cache
        return grad_out * keep * scale


class BatchNorm(Layer):
    """Per-feature batch standardization with a learned affine transform.

    Features are the last axis; for images the statistics pool over
    batch and both spatial axes. Running statistics (momentum 0.99) are
    used verbatim at inference.
    """

    def __init__(self, eps: float = 1e-5, momentum: float = 0.99):
        super().__init__()
        self.eps = eps
        self.momentum = momentum

    def build(self, input_shape, rng):
        f = input_shape[-1]
        self.params["gamma"] = np.ones(f)
        self.params["beta"] = np.zeros(f)
        self.buffers["running_mean"] = np.zeros(f)
        self.buffers["running_var"] = np.ones(f)
        return tuple(input_shape)

    def forward(self, x, mode="train"):
        axes = tuple(range(x.ndim - 1))
        if mode == "train":
            if x.shape[0] < 2:
                raise ValueError(f"{self.name}: train mode requires batch size >= 2")
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mu) * inv
            m = self.momentum
            self.buffers["running_mean"] = m * self.buffers["running_mean"] + (1 - m) * mu
            self.buffers["running_var"] = m * self.buffers["running_var"] + (1 - m) * var
            n = int(np.prod([x.shape[a] for a in axes]))
            self._cache = ("train", xhat, inv, n, axes)
        else:
            inv = 1.0 / np.sqrt(self.buffers["running_var"] + self.eps)
            xhat = (x - self.buffers["running_mean"]) * inv
            self._cache = ("inference", inv, xhat, tuple(range(x.ndim - 1)))
        return self.params["gamma"] * xhat + self.params["beta"]

    def backward(self, grad_out, need_param_grads=True):
        cache = self._take_cache()
        gamma = self.params["gamma"]
        if cache[0] == "inference":
            _, inv, xhat, axes = cache
            if need_param_grads:
                self.grads["gamma"] = (grad_out * xhat).sum(axis=axes)
                self.grads["beta"] = grad_out.sum(axis=axes)
            return grad_out * (gamma * inv)
        _, xhat, inv, n, axes = cache
        if need_param_grads:
            self.grads["gamma"] = (grad_out * xhat).sum(axis=axes)
            self.grads["beta"] = grad_out.sum(axis=axes)
        g = grad_out * gamma
        g_sum = g.sum(axis=axes, keepdims=True)
        gx_sum = (g * xhat).sum(axis=axes, keepdims=True)
        return (inv / n) * (n * g - g_sum - xhat * gx_sum)


class ActivationLayer(Layer):
    """Standalone activation, used when batch norm sits between the
    affine map and its nonlinearity."""

    def __init__(self, kind: str):
        super().__init__()
        if kind not in ACTIVATIONS:
            raise ValueError(f"unknown activation {kind!r}")
        self.kind = kind

    def build(self, input_shape, rng):
        return tuple(input_shape)

    def forward(self, x, mode="train"):
        out = activate(self.kind, x)
        self._cache = (x, out)
        return out

    def backward(self, grad_out, need_param_grads=True):
        z, out = self._take_cache()
        return activation_backward(self.kind, grad_out, z, out)


def concat_channels(a, b):
    """Channel concatenation of [B, H, W, Ca] and [B, H, W, Cb]."""
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(
            f"concat_channels: leading extents differ, {a.shape} vs {b.shape}"
        )
    return np.concatenate([a, b], axis=-1)


def split_channels(g, ca: int):
    """Inverse of concat_channels for gradients: split at channel ca."""
    return g[..., :ca], g[..., ca:]
