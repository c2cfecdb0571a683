"""Model specifications and their instantiated layer graphs.

Four architectures: a single-node perceptron, MLPs over flattened
inputs, CNNs of conv+pool blocks with a dense head, and U-Nets with
skip connections. Filter counts double down the CNN/U-Net encoder and
halve up the U-Net decoder. Weights use He-uniform fan-in init drawn
from the spec seed; biases start at zero.

When ``use_batchnorm`` is set, each conv/dense unit becomes
affine -> batch norm -> activation; otherwise the activation is fused
into the affine layer. Dropout sits after hidden dense layers (MLP and
CNN head) and after the U-Net bottleneck.
"""

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import container
from .errors import ShapeError
from .layers import (
    ActivationLayer,
    BatchNorm,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    Pool2D,
    UpsampleNearest,
    concat_channels,
    split_channels,
)
from .rng import Rng, derive_seed

KINDS = ("perceptron", "mlp", "cnn", "unet")
OUTPUTS = ("sigmoid-scalar", "linear-scalar", "sigmoid-map", "linear-map")
MODEL_FORMAT_VERSION = 1

# linear-map heads go through softplus so predicted per-pixel counts
# stay non-negative.
_OUTPUT_ACT = {
    "sigmoid-scalar": "sigmoid",
    "linear-scalar": "linear",
    "sigmoid-map": "sigmoid",
    "linear-map": "softplus",
}


@dataclass
class ModelSpec:
    kind: str
    input_shape: tuple
    hidden_layers: tuple = ()
    conv_blocks: tuple = ()
    dense_head: tuple = ()
    depth: int = 3
    base_filters: int = 8
    activation: str = "relu"
    dropout_rate: float = 0.0
    use_batchnorm: bool = False
    output: str = "sigmoid-scalar"
    seed: int = 0

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.hidden_layers = tuple(int(v) for v in self.hidden_layers)
        self.conv_blocks = tuple(int(v) for v in self.conv_blocks)
        self.dense_head = tuple(int(v) for v in self.dense_head)
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.output not in OUTPUTS:
            raise ValueError(f"unknown output kind {self.output!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("input_shape", "hidden_layers", "conv_blocks", "dense_head"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))


def _dense_unit(name, units, act, use_bn):
    if use_bn:
        unit = [Dense(units, "linear", use_bias=False), BatchNorm(), ActivationLayer(act)]
    else:
        unit = [Dense(units, act)]
    for i, layer in enumerate(unit):
        layer.name = f"{name}" if len(unit) == 1 else f"{name}_{i}"
    return unit


def _conv_unit(name, filters, act, use_bn, kernel_size=3):
    if use_bn:
        unit = [Conv2D(filters, kernel_size, "linear", use_bias=False),
                BatchNorm(), ActivationLayer(act)]
    else:
        unit = [Conv2D(filters, kernel_size, act)]
    for i, layer in enumerate(unit):
        layer.name = f"{name}" if len(unit) == 1 else f"{name}_{i}"
    return unit


def _unit_forward(unit, x, mode):
    for layer in unit:
        x = layer.forward(x, mode)
    return x


def _unit_backward(unit, g, need_param_grads):
    for layer in reversed(unit):
        g = layer.backward(g, need_param_grads)
    return g


class Model:
    """Common surface: mode handling, parameter access, persistence."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.mode = "train"
        self._layers = []

    def set_mode(self, mode: str):
        if mode not in ("train", "inference"):
            raise ValueError(f"mode must be 'train' or 'inference', got {mode!r}")
        self.mode = mode

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad_out, need_param_grads: bool = True):
        raise NotImplementedError

    def _named_layers(self):
        return self._layers

    def parameters(self) -> dict:
        out = {}
        for layer in self._named_layers():
            for key, arr in layer.params.items():
                out[f"{layer.name}.{key}"] = arr
        return out

    def buffers(self) -> dict:
        out = {}
        for layer in self._named_layers():
            for key, arr in layer.buffers.items():
                out[f"{layer.name}.{key}"] = arr
        return out

    def gradients(self) -> dict:
        out = {}
        for layer in self._named_layers():
            for key in layer.params:
                out[f"{layer.name}.{key}"] = layer.grads[key]
        return out

    def param_count(self) -> int:
        return sum(arr.size for arr in self.parameters().values())

    def reseed_stochastic(self, seed: int) -> None:
        """Re-derive dropout streams, e.g. once per training epoch."""
        idx = 0
        for layer in self._named_layers():
            if isinstance(layer, Dropout):
                layer.reseed(derive_seed(seed, idx))
                idx += 1

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        """Inference-mode forward in batches; restores the current mode."""
        saved = self.mode
        self.mode = "inference"
        try:
            outs = [self.forward(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
        finally:
            self.mode = saved
        return np.concatenate(outs, axis=0)

    def input_gradient(self, x):
        """(output, d(sum of outputs)/dx) in inference mode.

        Samples are independent, so the rows of the returned gradient
        are per-sample gradients of each sample's own output sum.
        """
        saved = self.mode
        self.mode = "inference"
        try:
            out = self.forward(x)
            grad = self.backward(np.ones_like(out), need_param_grads=False)
        finally:
            self.mode = saved
        return out, grad

    def serialize(self) -> bytes:
        params = self.parameters()
        buffers = self.buffers()
        arrays = {f"param.{k}": v for k, v in params.items()}
        arrays.update({f"buffer.{k}": v for k, v in buffers.items()})
        meta = {
            "model_manifest": {
                "format_version": MODEL_FORMAT_VERSION,
                "spec": self.spec.to_dict(),
                "param_names": sorted(params),
                "buffer_names": sorted(buffers),
            }
        }
        return container.pack_blob(meta, arrays)

    @staticmethod
    def deserialize(data: bytes) -> "Model":
        meta, arrays = container.unpack_blob(data)
        manifest = meta.get("model_manifest")
        if manifest is None or manifest.get("format_version") != MODEL_FORMAT_VERSION:
            raise container.ContainerError("missing or unsupported model manifest")
        model = build(ModelSpec.from_dict(manifest["spec"]))
        for name, arr in model.parameters().items():
            stored = arrays[f"param.{name}"]
            if stored.shape != arr.shape:
                raise container.ContainerError(
                    f"parameter {name!r} shape {stored.shape} != expected {arr.shape}"
                )
            np.copyto(arr, stored)
        for name, arr in model.buffers().items():
            np.copyto(arr, arrays[f"buffer.{name}"])
        return model

    def save(self, path) -> None:
        container.atomic_write_bytes(path, self.serialize())

    @staticmethod
    def load(path) -> "Model":
        return Model.deserialize(Path(path).read_bytes())


class SequentialModel(Model):
    def __init__(self, spec, layers):
        super().__init__(spec)
        self._layers = layers

    def forward(self, x):
        for layer in self._layers:
            x = layer.forward(x, self.mode)
        return x

    def forward_collect(self, x):
        """Forward returning every layer's output (current mode)."""
        outs = []
        for layer in self._layers:
            x = layer.forward(x, self.mode)
            outs.append(x)
        return outs

    def backward(self, grad_out, need_param_grads: bool = True):
        g = grad_out
        for layer in reversed(self._layers):
            g = layer.backward(g, need_param_grads)
        return g


class UNetModel(Model):
    """Encoder/decoder with channel-concatenation skip connections."""

    def __init__(self, spec, enc_units, pools, bottleneck, dropout, ups, dec_units, head):
        super().__init__(spec)
        self.enc_units = enc_units
        self.pools = pools
        self.bottleneck = bottleneck
        self.dropout = dropout
        self.ups = ups
        self.dec_units = dec_units
        self.head = head
        self.up_channels = []  # channels entering each decoder concat, set by build
        flat = [l for unit in enc_units for l in unit] + pools
        flat += bottleneck + ([dropout] if dropout else [])
        flat += ups + [l for unit in dec_units for l in unit] + [head]
        self._layers = flat

    def forward(self, x, zero_skips: bool = False):
        depth = len(self.enc_units)
        skips = []
        h = x
        for unit, pool in zip(self.enc_units, self.pools):
            h = _unit_forward(unit, h, self.mode)
            skips.append(h)
            h = pool.forward(h, self.mode)
        h = _unit_forward(self.bottleneck, h, self.mode)
        if self.dropout is not None:
            h = self.dropout.forward(h, self.mode)
        for i in reversed(range(depth)):
            h = self.ups[i].forward(h, self.mode)
            skip = np.zeros_like(skips[i]) if zero_skips else skips[i]
            h = concat_channels(h, skip)
            h = _unit_forward(self.dec_units[i], h, self.mode)
        return self.head.forward(h, self.mode)

    def backward(self, grad_out, need_param_grads: bool = True):
        depth = len(self.enc_units)
        g = self.head.backward(grad_out, need_param_grads)
        skip_grads = [None] * depth
        for i in range(depth):
            g = _unit_backward(self.dec_units[i], g, need_param_grads)
            g_up, skip_grads[i] = split_channels(g, self.up_channels[i])
            g = self.ups[i].backward(g_up)
        if self.dropout is not None:
            g = self.dropout.backward(g)
        g = _unit_backward(self.bottleneck, g, need_param_grads)
        for i in reversed(range(depth)):
            g = self.pools[i].backward(g)
            g = g + skip_grads[i]
            g = _unit_backward(self.enc_units[i], g, need_param_grads)
        return g


def _build_chain(layers, input_shape, rng):
    shape = tuple(input_shape)
    for layer in layers:
        shape = layer.build(shape, rng)
    return shape


def build(spec: ModelSpec) -> Model:
    """Instantiate a spec: validate shapes, create and initialize layers."""
    rng = Rng(spec.seed)
    scalar_out = spec.output.endswith("-scalar")
    if spec.kind == "unet":
        if scalar_out:
            raise ShapeError("unet requires a map output kind")
        return _build_unet(spec, rng)
    if not scalar_out:
        raise ShapeError(f"{spec.kind} requires a scalar output kind")
    if spec.kind == "perceptron":
        layers = [Flatten()] if len(spec.input_shape) > 1 else []
        layers.append(Dense(1, _OUTPUT_ACT[spec.output]))
    elif spec.kind == "mlp":
        layers = [Flatten()] if len(spec.input_shape) > 1 else []
        for i, width in enumerate(spec.hidden_layers):
            layers.extend(_dense_unit(f"hidden{i}", width, spec.activation, spec.use_batchnorm))
            if spec.dropout_rate > 0:
                layers.append(Dropout(spec.dropout_rate))
        layers.append(Dense(1, _OUTPUT_ACT[spec.output]))
    elif spec.kind == "cnn":
        if len(spec.input_shape) != 3:
            raise ShapeError(f"cnn expects [H, W, C] input, got {spec.input_shape}")
        if not spec.conv_blocks:
            raise ShapeError("cnn requires at least one conv block")
        H, W, _ = spec.input_shape
        blocks = len(spec.conv_blocks)
        if H % (2 ** blocks) or W % (2 ** blocks):
            raise ShapeError(
                f"cnn: input {H}x{W} not divisible by 2^{blocks} after {blocks} pool layers"
            )
        layers = []
        for i, filters in enumerate(spec.conv_blocks):
            layers.extend(_conv_unit(f"conv{i}", filters, spec.activation, spec.use_batchnorm))
            layers.append(Pool2D("max"))
        layers.append(Flatten())
        for i, width in enumerate(spec.dense_head):
            layers.extend(_dense_unit(f"head{i}", width, spec.activation, spec.use_batchnorm))
            if spec.dropout_rate > 0:
                layers.append(Dropout(spec.dropout_rate))
        layers.append(Dense(1, _OUTPUT_ACT[spec.output]))
    else:
        raise ValueError(f"unknown model kind {spec.kind!r}")

    for i, layer in enumerate(layers):
        if layer.name == layer.__class__.__name__:
            layer.name = f"L{i}_{layer.__class__.__name__}"
        else:
            layer.name = f"L{i}_{layer.name}"
    _build_chain(layers, spec.input_shape, rng)
    return SequentialModel(spec, layers)


def _build_unet(spec: ModelSpec, rng: Rng) -> UNetModel:
    if len(spec.input_shape) != 3:
        raise ShapeError(f"unet expects [H, W, C] input, got {spec.input_shape}")
    H, W, _ = spec.input_shape
    D, F = spec.depth, spec.base_filters
    if not 1 <= D <= 4:
        raise ShapeError(f"unet depth must be in [1, 4], got {D}")
    if H % (2 ** D) or W % (2 ** D):
        raise ShapeError(f"unet: input {H}x{W} not divisible by 2^{D}")
    if min(H, W) // (2 ** D) < 3:
        raise ShapeError(
            f"unet: bottleneck extent {min(H, W)}/2^{D} = {min(H, W) // (2 ** D)} < 3"
        )
    act, bn = spec.activation, spec.use_batchnorm
    enc_units = [_conv_unit(f"enc{i}_conv", F * 2 ** i, act, bn) for i in range(D)]
    pools = [Pool2D("max") for _ in range(D)]
    bottleneck = _conv_unit("bottleneck_conv", F * 2 ** D, act, bn)
    dropout = Dropout(spec.dropout_rate) if spec.dropout_rate > 0 else None
    ups = [UpsampleNearest() for _ in range(D)]
    dec_units = [_conv_unit(f"dec{i}_conv", F * 2 ** i, act, bn) for i in range(D)]
    head = Conv2D(1, 1, _OUTPUT_ACT[spec.output])
    head.name = "head"
    for i, pool in enumerate(pools):
        pool.name = f"pool{i}"
    for i, up in enumerate(ups):
        up.name = f"up{i}"
    if dropout is not None:
        dropout.name = "bottleneck_dropout"

    model = UNetModel(spec, enc_units, pools, bottleneck, dropout, ups, dec_units, head)
    shape = tuple(spec.input_shape)
    skip_shapes = []
    for unit, pool in zip(enc_units, pools):
        shape = _build_chain(unit, shape, rng)
        skip_shapes.append(shape)
        shape = pool.build(shape, rng)
    shape = _build_chain(bottleneck, shape, rng)
    if dropout is not None:
        shape = dropout.build(shape, rng)
    model.up_channels = [0] * D
    for i in reversed(range(D)):
        shape = ups[i].build(shape, rng)
        model.up_channels[i] = shape[-1]
        shape = (shape[0], shape[1], shape[2] + skip_shapes[i][-1])
        shape = _build_chain(dec_units[i], shape, rng)
    out_shape = head.build(shape, rng)
    if out_shape[:2] != tuple(spec.input_shape[:2]):
        raise ShapeError(f"unet output {out_shape} does not match input {spec.input_shape}")
    return model


def count_params(spec: ModelSpec) -> int:
    """Trainable parameter count from the spec's shape algebra alone."""
    def dense(n, m, bn):
        # batch-normed units carry no affine bias (gamma/beta replace it)
        return n * m + (2 * m if bn else m)

    def conv(cin, f, bn, k=3):
        return k * k * cin * f + (2 * f if bn else f)

    n_in = int(np.prod(spec.input_shape))
    bn = spec.use_batchnorm
    if spec.kind == "perceptron":
        return n_in + 1
    if spec.kind == "mlp":
        total = 0
        width = n_in
        for w in spec.hidden_layers:
            total += dense(width, w, bn)
            width = w
        return total + dense(width, 1, False)
    if spec.kind == "cnn":
        total = 0
        h, w, cin = spec.input_shape
        for f in spec.conv_blocks:
            total += conv(cin, f, bn)
            cin = f
            h, w = h // 2, w // 2
        width = h * w * cin
        for d in spec.dense_head:
            total += dense(width, d, bn)
            width = d
        return total + dense(width, 1, False)
    if spec.kind == "unet":
        D, F = spec.depth, spec.base_filters
        total = 0
        cin = spec.input_shape[-1]
        for i in range(D):
            total += conv(cin, F * 2 ** i, bn)
            cin = F * 2 ** i
        total += conv(cin, F * 2 ** D, bn)
        cin = F * 2 ** D
        for i in reversed(range(D)):
            total += conv(cin + F * 2 ** i, F * 2 ** i, bn)
            cin = F * 2 ** i
        return total + conv(cin, 1, False, k=1)
    raise ValueError(f"unknown model kind {spec.kind!r}")
