"""Sequential analog network description and operations on it.

A ``NetworkGraph`` is an ordered list of layers: dense and convolutional
weight layers, pooling, batch normalisation, transfer layers (the analog
counterpart of a spiking layer), and a softmax readout marker. The same
structure is used for training, for the analog reference forward pass,
and as the input to spiking conversion.

Trained classifier graphs follow a fixed shape: the first computational
block is batch-norm + transfer (it turns raw inputs into unit activity),
and the last block is a transfer layer flagged ``readout`` followed by
``SoftmaxReadout``. In the analog pass the readout transfer is the
identity on its pre-activation: its spiking counterpart reports a
smoothed membrane value rather than spikes, so both paths score the same
quantity.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import StructuralError
from .neuron import NeuronParams
from .transfer import constants_from, transfer_value

__all__ = [
    "Dense",
    "Conv2D",
    "MaxPool",
    "AvgPool",
    "BatchNorm",
    "Transfer",
    "SoftmaxReadout",
    "NetworkGraph",
    "analog_forward",
    "fold_batchnorm",
    "parse_arch",
    "build_graph",
    "conv2d_forward",
    "pool2d",
]


@dataclass
class Dense:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)


@dataclass
class Conv2D:
    kernels: np.ndarray  # (out_c, in_c, k, k)
    bias: np.ndarray  # (out_c,)
    stride: int = 1
    padding: int = 0


@dataclass
class MaxPool:
    k: int


@dataclass
class AvgPool:
    k: int


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5

    def scale_shift(self) -> tuple[np.ndarray, np.ndarray]:
        """Equivalent per-feature affine (a, c): y = a*x + c."""
        a = self.gamma / np.sqrt(self.running_var + self.eps)
        return a, self.beta - a * self.running_mean


@dataclass
class Transfer:
    params: NeuronParams
    readout: bool = False


@dataclass
class SoftmaxReadout:
    pass


LayerSpec = Dense | Conv2D | MaxPool | AvgPool | BatchNorm | Transfer | SoftmaxReadout


@dataclass
class NetworkGraph:
    layers: list = field(default_factory=list)
    input_shape: tuple = ()

    def output_shapes(self) -> list[tuple]:
        """Shape after each layer; raises StructuralError on inconsistency."""
        shapes = []
        shape = tuple(self.input_shape)
        for i, layer in enumerate(self.layers):
            shape = _layer_output_shape(layer, shape, i)
            shapes.append(shape)
        return shapes

    def validate(self) -> None:
        self.output_shapes()
        for i, layer in enumerate(self.layers):
            if isinstance(layer, BatchNorm):
                prev = self.layers[i - 1] if i > 0 else None
                if i > 0 and not isinstance(prev, (Dense, Conv2D)):
                    raise StructuralError(
                        f"layer {i}: batch norm must follow a dense/conv layer "
                        "or be the first layer"
                    )

    def has_batchnorm(self) -> bool:
        return any(isinstance(l, BatchNorm) for l in self.layers)

    def copy(self) -> "NetworkGraph":
        return NetworkGraph(
            layers=[_copy_layer(l) for l in self.layers],
            input_shape=tuple(self.input_shape),
        )


def _flat_size(shape: tuple) -> int:
    return int(np.prod(shape)) if shape else 0


def _layer_output_shape(layer, shape: tuple, index: int) -> tuple:
    if isinstance(layer, Dense):
        out, inp = layer.weights.shape
        if _flat_size(shape) != inp:
            raise StructuralError(
                f"layer {index}: dense expects {inp} inputs, got shape {shape}"
            )
        return (out,)
    if isinstance(layer, Conv2D):
        if len(shape) != 3:
            raise StructuralError(f"layer {index}: conv expects (C,H,W), got {shape}")
        out_c, in_c, k, _ = layer.kernels.shape
        c, h, w = shape
        if c != in_c:
            raise StructuralError(
                f"layer {index}: conv expects {in_c} channels, got {c}"
            )
        h_out = (h + 2 * layer.padding - k) // layer.stride + 1
        w_out = (w + 2 * layer.padding - k) // layer.stride + 1
        if h_out <= 0 or w_out <= 0:
            raise StructuralError(f"layer {index}: conv output collapses on {shape}")
        return (out_c, h_out, w_out)
    if isinstance(layer, (MaxPool, AvgPool)):
        if len(shape) != 3:
            raise StructuralError(f"layer {index}: pool expects (C,H,W), got {shape}")
        c, h, w = shape
        if h % layer.k or w % layer.k:
            raise StructuralError(
                f"layer {index}: pool size {layer.k} does not divide {h}x{w}"
            )
        return (c, h // layer.k, w // layer.k)
    if isinstance(layer, BatchNorm):
        n = layer.gamma.shape[0]
        features = shape[0] if len(shape) == 3 else _flat_size(shape)
        if features != n:
            raise StructuralError(
                f"layer {index}: batch norm over {n} features, got shape {shape}"
            )
        return shape
    if isinstance(layer, (Transfer, SoftmaxReadout)):
        return shape
    raise StructuralError(f"layer {index}: unknown layer kind {type(layer).__name__}")


# ---------------------------------------------------------------------------
# forward pass


def conv2d_forward(x: np.ndarray, layer: Conv2D) -> np.ndarray:
    """Convolve a batch (B, C, H, W) with the layer's kernels (im2col)."""
    out_c, in_c, k, _ = layer.kernels.shape
    b, c, h, w = x.shape
    p, s = layer.padding, layer.stride
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    h_out = (h + 2 * p - k) // s + 1
    w_out = (w + 2 * p - k) // s + 1
    cols = np.empty((b, in_c, k, k, h_out, w_out), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = x[:, :, i : i + s * h_out : s, j : j + s * w_out : s]
    out = np.einsum("bcijhw,ocij->bohw", cols, layer.kernels, optimize=True)
    return out + layer.bias[None, :, None, None]


def pool2d(x: np.ndarray, k: int, kind: str) -> np.ndarray:
    """Non-overlapping pooling over the trailing two axes of (..., H, W)."""
    *lead, h, w = x.shape
    blocks = x.reshape(*lead, h // k, k, w // k, k)
    if kind == "max":
        return blocks.max(axis=(-3, -1))
    return blocks.mean(axis=(-3, -1))


def batchnorm_eval(x: np.ndarray, layer: BatchNorm) -> np.ndarray:
    a, c = layer.scale_shift()
    if x.ndim == 4:  # (B, C, H, W): normalise per channel
        return x * a[None, :, None, None] + c[None, :, None, None]
    return x * a + c


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def analog_forward(graph: NetworkGraph, x: np.ndarray) -> np.ndarray:
    """Analog reference pass; returns scores for a batch or single input.

    Batch-norm layers use their running statistics. A readout transfer
    passes its pre-activation through unchanged; ``SoftmaxReadout`` then
    maps it to class probabilities.
    """
    x = np.asarray(x, dtype=float)
    single = x.shape == tuple(graph.input_shape)
    if single:
        x = x[None]
    if x.shape[1:] != tuple(graph.input_shape):
        raise StructuralError(
            f"input shape {x.shape[1:]} does not match graph input "
            f"{tuple(graph.input_shape)}"
        )
    graph.validate()
    for layer in graph.layers:
        if isinstance(layer, Dense):
            x = x.reshape(x.shape[0], -1) @ layer.weights.T + layer.bias
        elif isinstance(layer, Conv2D):
            x = conv2d_forward(x, layer)
        elif isinstance(layer, MaxPool):
            x = pool2d(x, layer.k, "max")
        elif isinstance(layer, AvgPool):
            x = pool2d(x, layer.k, "avg")
        elif isinstance(layer, BatchNorm):
            x = batchnorm_eval(x, layer)
        elif isinstance(layer, Transfer):
            if not layer.readout:
                consts = constants_from(layer.params)
                x = transfer_value(x, consts, layer.params.theta0)
        elif isinstance(layer, SoftmaxReadout):
            x = _softmax(x)
    return x[0] if single else x


# ---------------------------------------------------------------------------
# batch-norm folding


def fold_batchnorm(graph: NetworkGraph) -> NetworkGraph:
    """Return an equivalent graph with every batch-norm layer absorbed.

    A batch norm following a dense/conv layer is folded into that layer's
    weights and bias. A leading batch norm (the input-encoding block) is
    replaced by an equivalent diagonal dense layer, or a 1x1 diagonal
    convolution for image inputs, so the first weight layer encodes the
    inputs directly.
    """
    graph.validate()
    layers: list = []
    for i, layer in enumerate(graph.layers):
        if not isinstance(layer, BatchNorm):
            layers.append(_copy_layer(layer))
            continue
        a, c = layer.scale_shift()
        prev = layers[-1] if layers else None
        if isinstance(prev, Dense):
            prev.weights = prev.weights * a[:, None]
            prev.bias = prev.bias * a + c
        elif isinstance(prev, Conv2D):
            prev.kernels = prev.kernels * a[:, None, None, None]
            prev.bias = prev.bias * a + c
        elif prev is None:
            layers.append(_leading_bn_to_linear(a, c, graph.input_shape))
        else:
            raise StructuralError(
                f"layer {i}: batch norm not in a foldable position "
                f"(follows {type(prev).__name__})"
            )
    return NetworkGraph(layers=layers, input_shape=tuple(graph.input_shape))


def _leading_bn_to_linear(a: np.ndarray, c: np.ndarray, input_shape: tuple):
    if len(input_shape) == 3:
        n = a.shape[0]
        kernels = np.zeros((n, n, 1, 1))
        kernels[np.arange(n), np.arange(n), 0, 0] = a
        return Conv2D(kernels=kernels, bias=c.copy(), stride=1, padding=0)
    return Dense(weights=np.diag(a), bias=c.copy())


def _copy_layer(layer):
    if isinstance(layer, Dense):
        return Dense(layer.weights.copy(), layer.bias.copy())
    if isinstance(layer, Conv2D):
        return Conv2D(layer.kernels.copy(), layer.bias.copy(), layer.stride, layer.padding)
    if isinstance(layer, BatchNorm):
        return BatchNorm(
            layer.gamma.copy(),
            layer.beta.copy(),
            layer.running_mean.copy(),
            layer.running_var.copy(),
            layer.eps,
        )
    if isinstance(layer, Transfer):
        return Transfer(params=layer.params, readout=layer.readout)
    return replace(layer)


# ---------------------------------------------------------------------------
# architecture strings


_CONV_RE = re.compile(r"^c(\d+)x(\d+)$")
_INPUT_RE = re.compile(r"^(\d+)(?:x(\d+))?(?:x(\d+))?$")


def parse_arch(arch: str) -> tuple[tuple, list[tuple]]:
    """Parse an architecture string into (input_shape, ops).

    Grammar, tokens separated by ``-``: the first token is the input shape
    (``4`` for a flat vector, ``28x28`` or ``32x32x3`` for images); later
    tokens are ``dN`` or a bare integer for a dense layer with N units,
    ``cNxM`` for a convolution with N maps and an MxM kernel, ``mP`` /
    ``aP`` for max/average pooling with a PxP window. Example:
    ``28x28-c64x3-m2-d256-d10``.
    """
    tokens = [t for t in arch.strip().split("-") if t]
    if len(tokens) < 2:
        raise StructuralError(f"architecture {arch!r} needs an input and a layer")
    m = _INPUT_RE.match(tokens[0])
    if not m:
        raise StructuralError(f"bad input token {tokens[0]!r} in {arch!r}")
    dims = [int(g) for g in m.groups() if g]
    if len(dims) == 1:
        input_shape: tuple = (dims[0],)
    elif len(dims) == 2:
        input_shape = (1, dims[0], dims[1])
    else:
        input_shape = (dims[2], dims[0], dims[1])

    ops: list[tuple] = []
    for tok in tokens[1:]:
        if tok.isdigit():
            ops.append(("dense", int(tok)))
        elif tok.startswith("d") and tok[1:].isdigit():
            ops.append(("dense", int(tok[1:])))
        elif tok.startswith("m") and tok[1:].isdigit():
            ops.append(("maxpool", int(tok[1:])))
        elif tok.startswith("a") and tok[1:].isdigit():
            ops.append(("avgpool", int(tok[1:])))
        else:
            m = _CONV_RE.match(tok)
            if not m:
                raise StructuralError(f"bad layer token {tok!r} in {arch!r}")
            ops.append(("conv", int(m.group(1)), int(m.group(2))))
    if ops[-1][0] != "dense":
        raise StructuralError(f"architecture {arch!r} must end in a dense layer")
    return input_shape, ops


def build_graph(
    arch: str,
    params: NeuronParams,
    rng: np.random.Generator,
    readout_tau_phi: float = 50.0,
) -> NetworkGraph:
    """Build an initialised classifier graph from an architecture string.

    The first block is batch-norm + transfer on the raw inputs; every
    weight layer is followed by batch-norm + transfer; the final dense
    layer feeds the readout transfer (membrane smoothing ``readout_tau_phi``)
    and the softmax marker. Weights are fan-in scaled uniform, biases zero.
    """
    input_shape, ops = parse_arch(arch)
    layers: list = []
    n_input_features = input_shape[0] if len(input_shape) == 3 else _flat_size(input_shape)
    layers.append(_fresh_bn(n_input_features))
    layers.append(Transfer(params=params))

    shape = input_shape
    for i, op in enumerate(ops):
        last = i == len(ops) - 1
        if op[0] == "dense":
            fan_in = _flat_size(shape)
            bound = 1.0 / np.sqrt(fan_in)
            layers.append(
                Dense(
                    weights=rng.uniform(-bound, bound, size=(op[1], fan_in)),
                    bias=np.zeros(op[1]),
                )
            )
            shape = (op[1],)
        elif op[0] == "conv":
            n_maps, k = op[1], op[2]
            in_c = shape[0]
            fan_in = in_c * k * k
            bound = 1.0 / np.sqrt(fan_in)
            layers.append(
                Conv2D(
                    kernels=rng.uniform(-bound, bound, size=(n_maps, in_c, k, k)),
                    bias=np.zeros(n_maps),
                    stride=1,
                    padding=(k - 1) // 2,
                )
            )
            shape = _layer_output_shape(layers[-1], shape, len(layers) - 1)
        else:
            layers.append(MaxPool(op[1]) if op[0] == "maxpool" else AvgPool(op[1]))
            shape = _layer_output_shape(layers[-1], shape, len(layers) - 1)
            continue

        n_features = shape[0] if len(shape) == 3 else _flat_size(shape)
        layers.append(_fresh_bn(n_features))
        if last:
            layers.append(
                Transfer(
                    params=replace(params, tau_phi=readout_tau_phi), readout=True
                )
            )
            layers.append(SoftmaxReadout())
        else:
            layers.append(Transfer(params=params))

    graph = NetworkGraph(layers=layers, input_shape=input_shape)
    graph.validate()
    return graph


def _fresh_bn(n: int) -> BatchNorm:
    return BatchNorm(
        gamma=np.ones(n),
        beta=np.zeros(n),
        running_mean=np.zeros(n),
        running_var=np.ones(n),
    )
