"""Feed-forward inference engine with per-neuron activation capture.

A network is an immutable stack of layers over channels-first tensors.
Selected layers are designated *coverage layers*; each contributes a
vector of scalar "neuron" activations per forward pass: the raw output
vector for 1-D layers, the per-channel spatial mean for conv-shaped
(C, H, W) outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NumericError, ShapeError
from .tensor import Tensor, as_tensor

LAYER_KINDS = ("dense", "conv2d", "maxpool2d", "avgpool2d", "flatten", "activation")
WEIGHTED_KINDS = ("dense", "conv2d")
ACTIVATION_FNS = ("relu", "tanh", "sigmoid", "softmax", "identity")


# ---------------------------------------------------------------------------
# Activations


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return _sigmoid(z)
    if name == "softmax":
        return _softmax(z)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation function {name!r}")


def _activation_backward(name: str, z: np.ndarray, y: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Pull a gradient back through an activation.

    Subgradient convention at the relu kink: derivative 0 at exactly 0.
    """
    if name == "relu":
        return g * (z > 0)
    if name == "tanh":
        return g * (1.0 - y * y)
    if name == "sigmoid":
        return g * y * (1.0 - y)
    if name == "softmax":
        # J^T g with J = diag(y) - y y^T (J is symmetric)
        return y * (g - float(np.dot(g.ravel(), y.ravel())))
    if name == "identity":
        return g
    raise ValueError(f"unknown activation function {name!r}")


# ---------------------------------------------------------------------------
# Layer specifications


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a feed-forward network.

    ``activation`` is meaningful for dense, conv2d, and activation layers;
    softmax is permitted only on the final layer of a model.
    """

    kind: str
    activation: str = "identity"
    in_dim: Optional[int] = None
    out_dim: Optional[int] = None
    in_channels: Optional[int] = None
    out_channels: Optional[int] = None
    kernel_h: Optional[int] = None
    kernel_w: Optional[int] = None
    stride: int = 1
    padding: int = 0
    window: Optional[int] = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unsupported layer kind {self.kind!r}")
        if self.activation not in ACTIVATION_FNS:
            raise ValueError(f"unknown activation function {self.activation!r}")
        if self.kind == "dense":
            if not (_pos(self.in_dim) and _pos(self.out_dim)):
                raise ValueError("dense layer requires positive in_dim and out_dim")
        elif self.kind == "conv2d":
            for name in ("in_channels", "out_channels", "kernel_h", "kernel_w"):
                if not _pos(getattr(self, name)):
                    raise ValueError(f"conv2d layer requires positive {name}")
            if self.stride < 1 or self.padding < 0:
                raise ValueError("conv2d requires stride >= 1 and padding >= 0")
        elif self.kind in ("maxpool2d", "avgpool2d"):
            if not _pos(self.window) or self.stride < 1:
                raise ValueError(f"{self.kind} requires positive window and stride")

    # Convenience constructors ------------------------------------------------

    @staticmethod
    def dense(in_dim: int, out_dim: int, activation: str = "identity") -> "LayerSpec":
        return LayerSpec(kind="dense", in_dim=in_dim, out_dim=out_dim, activation=activation)

    @staticmethod
    def conv2d(in_channels: int, out_channels: int, kernel_h: int, kernel_w: int,
               stride: int = 1, padding: int = 0, activation: str = "identity") -> "LayerSpec":
        return LayerSpec(kind="conv2d", in_channels=in_channels, out_channels=out_channels,
                         kernel_h=kernel_h, kernel_w=kernel_w, stride=stride,
                         padding=padding, activation=activation)

    @staticmethod
    def maxpool2d(window: int, stride: Optional[int] = None) -> "LayerSpec":
        return LayerSpec(kind="maxpool2d", window=window,
                         stride=window if stride is None else stride)

    @staticmethod
    def avgpool2d(window: int, stride: Optional[int] = None) -> "LayerSpec":
        return LayerSpec(kind="avgpool2d", window=window,
                         stride=window if stride is None else stride)

    @staticmethod
    def flatten() -> "LayerSpec":
        return LayerSpec(kind="flatten")

    @staticmethod
    def act(activation: str) -> "LayerSpec":
        return LayerSpec(kind="activation", activation=activation)


def _pos(v) -> bool:
    return v is not None and v > 0


def layer_output_shape(layer: LayerSpec, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Declared output shape of ``layer`` applied to ``in_shape``."""
    if layer.kind == "dense":
        if in_shape != (layer.in_dim,):
            raise ShapeError(
                f"dense layer expects input shape ({layer.in_dim},), got {in_shape}"
            )
        return (layer.out_dim,)
    if layer.kind == "conv2d":
        if len(in_shape) != 3 or in_shape[0] != layer.in_channels:
            raise ShapeError(
                f"conv2d layer expects ({layer.in_channels}, H, W) input, got {in_shape}"
            )
        h, w = in_shape[1], in_shape[2]
        oh = (h + 2 * layer.padding - layer.kernel_h) // layer.stride + 1
        ow = (w + 2 * layer.padding - layer.kernel_w) // layer.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(f"conv2d kernel {layer.kernel_h}x{layer.kernel_w} too large for input {in_shape}")
        return (layer.out_channels, oh, ow)
    if layer.kind in ("maxpool2d", "avgpool2d"):
        if len(in_shape) != 3:
            raise ShapeError(f"{layer.kind} expects a (C, H, W) input, got {in_shape}")
        c, h, w = in_shape
        oh = (h - layer.window) // layer.stride + 1
        ow = (w - layer.window) // layer.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(f"{layer.kind} window {layer.window} too large for input {in_shape}")
        return (c, oh, ow)
    if layer.kind == "flatten":
        return (int(np.prod(in_shape)),)
    if layer.kind == "activation":
        return in_shape
    raise ValueError(f"unsupported layer kind {layer.kind!r}")


# ---------------------------------------------------------------------------
# Network model


@dataclass(frozen=True)
class NetworkModel:
    """Immutable layered description of a feed-forward net.

    ``weights[i]``/``biases[i]`` are None for weightless layers. Dense
    weights have shape (out_dim, in_dim); conv2d weights have shape
    (out_channels, in_channels, kernel_h, kernel_w). ``coverage_layers``
    lists the layer indices whose activations count as coverage neurons.
    Use :meth:`build` so all structural invariants are checked.
    """

    name: str
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    weights: tuple[Optional[np.ndarray], ...]
    biases: tuple[Optional[np.ndarray], ...]
    coverage_layers: tuple[int, ...]
    output_shapes: tuple[tuple[int, ...], ...] = field(compare=False)

    @classmethod
    def build(cls, name: str, input_shape, layers, weights, biases,
              coverage_layers=None) -> "NetworkModel":
        input_shape = tuple(int(d) for d in input_shape)
        if not input_shape or any(d <= 0 for d in input_shape):
            raise ShapeError(f"invalid input shape {input_shape}")
        layers = tuple(layers)
        if not layers:
            raise ShapeError("model must have at least one layer")
        if len(weights) != len(layers) or len(biases) != len(layers):
            raise ShapeError("weights/biases must align one-to-one with layers")

        shapes = []
        cur = input_shape
        for i, layer in enumerate(layers):
            if layer.activation == "softmax" and i != len(layers) - 1:
                raise ShapeError("softmax is permitted only as the final activation")
            try:
                cur = layer_output_shape(layer, cur)
            except ShapeError as exc:
                raise ShapeError(f"layer {i}: {exc}") from None
            if layer.activation == "softmax" and len(cur) != 1:
                raise ShapeError("softmax requires a 1-D layer output")
            shapes.append(cur)

        frozen_w, frozen_b = [], []
        for i, layer in enumerate(layers):
            w, b = weights[i], biases[i]
            if layer.kind == "dense":
                expect_w, expect_b = (layer.out_dim, layer.in_dim), (layer.out_dim,)
            elif layer.kind == "conv2d":
                expect_w = (layer.out_channels, layer.in_channels, layer.kernel_h, layer.kernel_w)
                expect_b = (layer.out_channels,)
            else:
                if w is not None or b is not None:
                    raise ShapeError(f"layer {i} ({layer.kind}) takes no weights")
                frozen_w.append(None)
                frozen_b.append(None)
                continue
            if w is None or b is None:
                raise ShapeError(f"layer {i} ({layer.kind}) requires weight and bias tensors")
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.shape != expect_w:
                raise ShapeError(f"layer {i} weight shape {w.shape} != expected {expect_w}")
            if b.shape != expect_b:
                raise ShapeError(f"layer {i} bias shape {b.shape} != expected {expect_b}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericError(f"layer {i} weights contain non-finite values")
            w = w.copy()
            b = b.copy()
            w.flags.writeable = False
            b.flags.writeable = False
            frozen_w.append(w)
            frozen_b.append(b)

        if coverage_layers is None:
            coverage_layers = default_coverage_layers(layers)
        coverage_layers = tuple(int(i) for i in coverage_layers)
        if not coverage_layers:
            raise ShapeError("model must designate at least one coverage layer")
        if any(i < 0 or i >= len(layers) for i in coverage_layers):
            raise ShapeError(f"coverage layer index out of range: {coverage_layers}")
        if any(a >= b for a, b in zip(coverage_layers, coverage_layers[1:])):
            raise ShapeError(f"coverage_layers must be strictly increasing: {coverage_layers}")

        return cls(name=str(name), input_shape=input_shape, layers=layers,
                   weights=tuple(frozen_w), biases=tuple(frozen_b),
                   coverage_layers=coverage_layers, output_shapes=tuple(shapes))

    @property
    def final_activation(self) -> str:
        last = self.layers[-1]
        if last.kind in ("dense", "conv2d", "activation"):
            return last.activation
        return "identity"

    @property
    def coverage_layer_sizes(self) -> tuple[int, ...]:
        """Number of coverage neurons contributed by each coverage layer."""
        sizes = []
        for idx in self.coverage_layers:
            shape = self.output_shapes[idx]
            sizes.append(shape[0] if len(shape) == 3 else int(np.prod(shape)))
        return tuple(sizes)


def default_coverage_layers(layers) -> tuple[int, ...]:
    """Every weighted layer, except the one feeding a final softmax."""
    chosen = [i for i, l in enumerate(layers) if l.kind in WEIGHTED_KINDS
              and l.activation != "softmax"]
    last = layers[-1]
    if last.kind == "activation" and last.activation == "softmax" and chosen:
        # standalone final softmax: its producing layer is the logits layer
        if chosen[-1] == max(i for i, l in enumerate(layers) if l.kind in WEIGHTED_KINDS):
            chosen = chosen[:-1]
    return tuple(chosen)


# ---------------------------------------------------------------------------
# Forward pass


@dataclass(frozen=True)
class ActivationTrace:
    """Per-coverage-layer neuron activations recorded during one forward pass."""

    model_name: str
    values: tuple[np.ndarray, ...]
    logits: np.ndarray
    predicted_label: int


def coverage_vector(output: np.ndarray) -> np.ndarray:
    """Collapse a layer output into its coverage-neuron activation vector."""
    if output.ndim == 1:
        return output.copy()
    if output.ndim == 3:
        return output.mean(axis=(1, 2))
    raise ShapeError(f"cannot derive coverage neurons from a {output.ndim}-D output")


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    cols = np.empty((c, kh, kw, oh, ow), dtype=x.dtype)
    for dy in range(kh):
        for dx in range(kw):
            cols[:, dy, dx] = x[:, dy:dy + stride * oh:stride, dx:dx + stride * ow:stride]
    return cols.reshape(c * kh * kw, oh * ow), oh, ow


def _scatter_cols(cols: np.ndarray, in_shape, kh: int, kw: int, stride: int,
                  padding: int, oh: int, ow: int) -> np.ndarray:
    c, h, w = in_shape
    xp = np.zeros((c, h + 2 * padding, w + 2 * padding))
    cols = cols.reshape(c, kh, kw, oh, ow)
    for dy in range(kh):
        for dx in range(kw):
            xp[:, dy:dy + stride * oh:stride, dx:dx + stride * ow:stride] += cols[:, dy, dx]
    if padding:
        return xp[:, padding:padding + h, padding:padding + w]
    return xp


def _layer_forward(layer: LayerSpec, x: np.ndarray, w, b):
    """Run one layer; returns (output, cache-for-backward)."""
    if layer.kind == "dense":
        z = w @ x + b
        y = apply_activation(layer.activation, z)
        return y, ("dense", z, y)
    if layer.kind == "conv2d":
        cols, oh, ow = _im2col(x, layer.kernel_h, layer.kernel_w, layer.stride, layer.padding)
        z = (w.reshape(layer.out_channels, -1) @ cols + b[:, None]).reshape(layer.out_channels, oh, ow)
        y = apply_activation(layer.activation, z)
        return y, ("conv2d", z, y, x.shape, oh, ow)
    if layer.kind in ("maxpool2d", "avgpool2d"):
        cols, oh, ow = _im2col(x, layer.window, layer.window, layer.stride, 0)
        c = x.shape[0]
        flat = cols.reshape(c, layer.window * layer.window, oh * ow)
        if layer.kind == "maxpool2d":
            # argmax breaks ties toward the lowest flat index inside the window
            arg = flat.argmax(axis=1)
            y = np.take_along_axis(flat, arg[:, None, :], axis=1)[:, 0, :].reshape(c, oh, ow)
            return y, ("maxpool2d", arg, x.shape, oh, ow)
        y = flat.mean(axis=1).reshape(c, oh, ow)
        return y, ("avgpool2d", x.shape, oh, ow)
    if layer.kind == "flatten":
        return x.reshape(-1), ("flatten", x.shape)
    if layer.kind == "activation":
        y = apply_activation(layer.activation, x)
        return y, ("activation", x, y)
    raise ValueError(f"unsupported layer kind {layer.kind!r}")


def _layer_backward(layer: LayerSpec, cache, g: np.ndarray, w) -> np.ndarray:
    """Pull a gradient on the layer output back to the layer input."""
    kind = cache[0]
    if kind == "dense":
        _, z, y = cache
        gz = _activation_backward(layer.activation, z, y, g)
        return w.T @ gz
    if kind == "conv2d":
        _, z, y, in_shape, oh, ow = cache
        gz = _activation_backward(layer.activation, z, y, g)
        gcols = w.reshape(layer.out_channels, -1).T @ gz.reshape(layer.out_channels, -1)
        return _scatter_cols(gcols, in_shape, layer.kernel_h, layer.kernel_w,
                             layer.stride, layer.padding, oh, ow)
    if kind == "maxpool2d":
        _, arg, in_shape, oh, ow = cache
        c = in_shape[0]
        cols = np.zeros((c, layer.window * layer.window, oh * ow))
        np.put_along_axis(cols, arg[:, None, :], g.reshape(c, 1, oh * ow), axis=1)
        return _scatter_cols(cols.reshape(c * layer.window * layer.window, oh * ow),
                             in_shape, layer.window, layer.window, layer.stride, 0, oh, ow)
    if kind == "avgpool2d":
        _, in_shape, oh, ow = cache
        c = in_shape[0]
        share = g.reshape(c, 1, oh * ow) / (layer.window * layer.window)
        cols = np.broadcast_to(share, (c, layer.window * layer.window, oh * ow))
        return _scatter_cols(cols.reshape(c * layer.window * layer.window, oh * ow),
                             in_shape, layer.window, layer.window, layer.stride, 0, oh, ow)
    if kind == "flatten":
        return g.reshape(cache[1])
    if kind == "activation":
        _, x, y = cache
        return _activation_backward(layer.activation, x, y, g)
    raise ValueError(f"unsupported layer kind {kind!r}")


def _run(model: NetworkModel, x: np.ndarray):
    """Forward pass returning all per-layer outputs and backward caches.

    Overflow is reported through NumericError, not numpy warnings.
    """
    outputs, caches = [], []
    cur = x
    with np.errstate(over="ignore", invalid="ignore"):
        for i, layer in enumerate(model.layers):
            cur, cache = _layer_forward(layer, cur, model.weights[i], model.biases[i])
            if not np.all(np.isfinite(cur)):
                raise NumericError(
                    f"model {model.name!r}: layer {i} ({layer.kind}) produced a non-finite value"
                )
            outputs.append(cur)
            caches.append(cache)
    return outputs, caches


def _check_input(model: NetworkModel, input) -> np.ndarray:
    t = as_tensor(input)
    if t.shape != model.input_shape:
        raise ShapeError(
            f"model {model.name!r} expects input shape {model.input_shape}, got {t.shape}"
        )
    return t.as_array().astype(np.float64, copy=False)


def _trace_from_outputs(model: NetworkModel, outputs) -> ActivationTrace:
    values = tuple(coverage_vector(outputs[i]) for i in model.coverage_layers)
    logits = outputs[-1].copy()
    label = int(np.argmax(logits.ravel()))
    return ActivationTrace(model_name=model.name, values=values,
                           logits=logits, predicted_label=label)


def forward(model: NetworkModel, input) -> ActivationTrace:
    """Run the network on one input and record coverage-neuron activations."""
    x = _check_input(model, input)
    outputs, _ = _run(model, x)
    return _trace_from_outputs(model, outputs)


def _backward_from_seeds(model: NetworkModel, caches, seeds: dict) -> np.ndarray:
    """Reverse-mode accumulation from per-layer output gradients to the input.

    ``seeds`` maps a layer index to a gradient array on that layer's
    post-activation output; contributions are injected as the sweep
    passes each layer. Returns the gradient with the model input shape.
    """
    g = np.zeros(model.output_shapes[-1])
    for i in range(len(model.layers) - 1, -1, -1):
        if i in seeds:
            g = g + seeds[i]
        g = _layer_backward(model.layers[i], caches[i], g, model.weights[i])
    return g
