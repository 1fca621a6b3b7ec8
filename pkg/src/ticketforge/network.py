"""Network description, parameter storage, initialization, and masked forward passes.

Everything runs in float64 on the CPU: at desk scale testability beats
speed, and 64-bit arithmetic makes the bitwise reproducibility contracts
checkable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Union

import numpy as np

from .rng import RngState

if TYPE_CHECKING:
    from .pruning import MaskSet


class InvalidNetworkError(ValueError):
    """Layer stack does not describe a usable network."""


class ShapeMismatchError(ValueError):
    """Array shapes do not match the network description."""


class NumericalOverflowError(FloatingPointError):
    """Non-finite values appeared during a forward pass."""

    def __init__(self, layer_index: int, layer_name: str):
        super().__init__(
            f"non-finite activations after layer {layer_index} ({layer_name})"
        )
        self.layer_index = layer_index
        self.layer_name = layer_name


@dataclass(frozen=True)
class Dense:
    fan_in: int
    fan_out: int


@dataclass(frozen=True)
class Conv2d:
    in_ch: int
    out_ch: int
    kernel: tuple[int, int]
    stride: int = 1


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    window: int


@dataclass(frozen=True)
class Flatten:
    pass


Layer = Union[Dense, Conv2d, ReLU, MaxPool, Flatten]

#: Squared negative-slope constant of the leaky-ReLU convention under which
#: the uniform bound sqrt(6 / ((1 + a^2) * fan_in)) reduces to 1/sqrt(fan_in).
_NEG_SLOPE_SQUARED = 5.0


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description: an ordered layer stack plus I/O contract.

    Validated on construction; adjacent layer shapes must compose, the
    final output must be a flat vector of ``num_classes`` logits, and at
    least one layer must carry parameters.
    """

    layers: tuple[Layer, ...]
    input_shape: tuple[int, ...]
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        if self.num_classes < 2:
            raise InvalidNetworkError("num_classes must be at least 2")
        if not self.input_shape or any(d <= 0 for d in self.input_shape):
            raise InvalidNetworkError(f"bad input_shape {self.input_shape}")
        shapes = self._trace_shapes()
        if shapes[-1] != (self.num_classes,):
            raise InvalidNetworkError(
                f"network output shape {shapes[-1]} != ({self.num_classes},)"
            )
        if not any(isinstance(l, (Dense, Conv2d)) for l in self.layers):
            raise InvalidNetworkError("need at least one parameterized layer")

    def _trace_shapes(self) -> list[tuple[int, ...]]:
        """Per-layer output shapes (excluding batch axis), input first."""
        shape = self.input_shape
        shapes = [shape]
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dense):
                if layer.fan_in <= 0 or layer.fan_out <= 0:
                    raise InvalidNetworkError(f"layer {i}: dense fans must be positive")
                if shape != (layer.fan_in,):
                    raise InvalidNetworkError(
                        f"layer {i}: dense expects ({layer.fan_in},), got {shape}"
                    )
                shape = (layer.fan_out,)
            elif isinstance(layer, Conv2d):
                kh, kw = layer.kernel
                if min(layer.in_ch, layer.out_ch, kh, kw, layer.stride) <= 0:
                    raise InvalidNetworkError(f"layer {i}: bad conv geometry")
                if len(shape) != 3 or shape[0] != layer.in_ch:
                    raise InvalidNetworkError(
                        f"layer {i}: conv expects ({layer.in_ch}, H, W), got {shape}"
                    )
                _, h, w = shape
                if h < kh or w < kw:
                    raise InvalidNetworkError(
                        f"layer {i}: kernel {layer.kernel} larger than input {shape}"
                    )
                shape = (
                    layer.out_ch,
                    (h - kh) // layer.stride + 1,
                    (w - kw) // layer.stride + 1,
                )
            elif isinstance(layer, MaxPool):
                if layer.window <= 0:
                    raise InvalidNetworkError(f"layer {i}: bad pool window")
                if len(shape) != 3:
                    raise InvalidNetworkError(f"layer {i}: pool needs (C, H, W), got {shape}")
                c, h, w = shape
                if h % layer.window or w % layer.window:
                    raise InvalidNetworkError(
                        f"layer {i}: pool window {layer.window} must tile {shape} exactly"
                    )
                shape = (c, h // layer.window, w // layer.window)
            elif isinstance(layer, Flatten):
                shape = (int(np.prod(shape)),)
            elif isinstance(layer, ReLU):
                pass
            else:
                raise InvalidNetworkError(f"layer {i}: unknown layer {layer!r}")
            shapes.append(shape)
        return shapes

    def param_layers(self) -> list[tuple[int, Layer]]:
        return [(i, l) for i, l in enumerate(self.layers) if isinstance(l, (Dense, Conv2d))]

    def weight_shapes(self) -> list[tuple[int, ...]]:
        shapes = []
        for _, layer in self.param_layers():
            if isinstance(layer, Dense):
                shapes.append((layer.fan_out, layer.fan_in))
            else:
                shapes.append((layer.out_ch, layer.in_ch) + tuple(layer.kernel))
        return shapes

    def bias_shapes(self) -> list[tuple[int, ...]]:
        return [
            (layer.fan_out,) if isinstance(layer, Dense) else (layer.out_ch,)
            for _, layer in self.param_layers()
        ]

    def fan_ins(self) -> list[int]:
        fans = []
        for _, layer in self.param_layers():
            if isinstance(layer, Dense):
                fans.append(layer.fan_in)
            else:
                fans.append(layer.in_ch * layer.kernel[0] * layer.kernel[1])
        return fans

    def total_parameter_count(self) -> int:
        return sum(
            int(np.prod(w)) + int(np.prod(b))
            for w, b in zip(self.weight_shapes(), self.bias_shapes())
        )

    def to_dict(self) -> dict:
        out = []
        for layer in self.layers:
            if isinstance(layer, Dense):
                out.append({"kind": "dense", "fan_in": layer.fan_in, "fan_out": layer.fan_out})
            elif isinstance(layer, Conv2d):
                out.append(
                    {
                        "kind": "conv2d",
                        "in_ch": layer.in_ch,
                        "out_ch": layer.out_ch,
                        "kernel": list(layer.kernel),
                        "stride": layer.stride,
                    }
                )
            elif isinstance(layer, ReLU):
                out.append({"kind": "relu"})
            elif isinstance(layer, MaxPool):
                out.append({"kind": "maxpool", "window": layer.window})
            else:
                out.append({"kind": "flatten"})
        return {
            "layers": out,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
        }

    @staticmethod
    def from_dict(data: dict) -> "NetworkSpec":
        layers: list[Layer] = []
        for entry in data["layers"]:
            kind = entry["kind"]
            if kind == "dense":
                layers.append(Dense(entry["fan_in"], entry["fan_out"]))
            elif kind == "conv2d":
                layers.append(
                    Conv2d(
                        entry["in_ch"],
                        entry["out_ch"],
                        tuple(entry["kernel"]),
                        entry.get("stride", 1),
                    )
                )
            elif kind == "relu":
                layers.append(ReLU())
            elif kind == "maxpool":
                layers.append(MaxPool(entry["window"]))
            elif kind == "flatten":
                layers.append(Flatten())
            else:
                raise InvalidNetworkError(f"unknown layer kind {kind!r}")
        return NetworkSpec(tuple(layers), tuple(data["input_shape"]), data["num_classes"])


@dataclass
class Parameters:
    """Per-parameterized-layer weight and bias arrays, in spec order."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def total_count(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    @property
    def weight_count(self) -> int:
        return sum(w.size for w in self.weights)

    def copy(self) -> "Parameters":
        return Parameters([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_kaiming_uniform(spec: NetworkSpec, rng: RngState) -> Parameters:
    """Draw fresh parameters with the fan-in-scaled uniform scheme.

    Weights are uniform on [-b, b] with b = sqrt(6 / ((1 + a^2) * fan_in))
    and a^2 = 5, which reduces to 1/sqrt(fan_in); biases are uniform on
    [-1/sqrt(fan_in), 1/sqrt(fan_in)].  Conv fan_in counts the full
    receptive field, in_ch * kh * kw.  Draw order is fixed (weights then
    biases, layer by layer), which the determinism contract relies on.
    """
    gen = rng.generator()
    weights, biases = [], []
    for w_shape, b_shape, fan_in in zip(
        spec.weight_shapes(), spec.bias_shapes(), spec.fan_ins()
    ):
        if fan_in <= 0:
            raise InvalidNetworkError(f"zero fan_in for weight shape {w_shape}")
        bound = math.sqrt(6.0 / ((1.0 + _NEG_SLOPE_SQUARED) * fan_in))
        weights.append(gen.uniform(-bound, bound, size=w_shape))
        bias_bound = 1.0 / math.sqrt(fan_in)
        biases.append(gen.uniform(-bias_bound, bias_bound, size=b_shape))
    return Parameters(weights, biases)


def _effective_weights(params: Parameters, mask: Optional["MaskSet"]) -> list[np.ndarray]:
    if mask is None:
        return params.weights
    if len(mask.layers) != len(params.weights):
        raise ShapeMismatchError("mask layer count does not match parameters")
    out = []
    for w, m in zip(params.weights, mask.layers):
        if m.shape != w.shape:
            raise ShapeMismatchError(f"mask shape {m.shape} != weight shape {w.shape}")
        out.append(np.where(m != 0, w, 0.0))
    return out


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int):
    n, c, h, w = x.shape
    out_h = (h - kh) // stride + 1
    out_w = (w - kw) // stride + 1
    cols = np.empty((n, c, kh, kw, out_h, out_w), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[
                :, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride
            ]
    return cols.reshape(n, c * kh * kw, out_h * out_w), out_h, out_w


def _col2im(dcols: np.ndarray, x_shape, kh: int, kw: int, stride: int, out_h: int, out_w: int):
    n, c, _, _ = x_shape
    dc = dcols.reshape(n, c, kh, kw, out_h, out_w)
    dx = np.zeros(x_shape, dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            # For fixed (i, j) the strided windows are disjoint, so += is exact.
            dx[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += dc[
                :, :, i, j
            ]
    return dx


def _run_forward(
    spec: NetworkSpec,
    params: Parameters,
    mask: Optional["MaskSet"],
    batch: np.ndarray,
    keep_caches: bool,
):
    """Shared forward pass.  Returns (logits, caches); caches is None unless asked for.

    Callers silence numpy overflow warnings around this: divergence is
    reported through NumericalOverflowError instead.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.shape[1:] != spec.input_shape:
        raise ShapeMismatchError(
            f"batch shape {x.shape[1:]} != input shape {spec.input_shape}"
        )
    eff = _effective_weights(params, mask)
    caches: list[tuple] = [] if keep_caches else None
    h = x
    p = 0
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Dense):
            w, b = eff[p], params.biases[p]
            out = h @ w.T + b
            if keep_caches:
                caches.append(("dense", p, h, w))
            p += 1
        elif isinstance(layer, Conv2d):
            kh, kw = layer.kernel
            cols, out_h, out_w = _im2col(h, kh, kw, layer.stride)
            wflat = eff[p].reshape(layer.out_ch, -1)
            out = np.einsum("ok,nkp->nop", wflat, cols)
            out += params.biases[p][None, :, None]
            out = out.reshape(h.shape[0], layer.out_ch, out_h, out_w)
            if keep_caches:
                caches.append(("conv", p, cols, h.shape, wflat, layer, out_h, out_w))
            p += 1
        elif isinstance(layer, ReLU):
            active = h > 0
            out = np.where(active, h, 0.0)
            if keep_caches:
                caches.append(("relu", active))
        elif isinstance(layer, MaxPool):
            win = layer.window
            n, c, hh, ww = h.shape
            oh, ow = hh // win, ww // win
            tiles = (
                h.reshape(n, c, oh, win, ow, win)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, oh, ow, win * win)
            )
            # argmax takes the first maximum, so window ties break row-major.
            arg = tiles.argmax(axis=-1)
            out = np.take_along_axis(tiles, arg[..., None], axis=-1)[..., 0]
            if keep_caches:
                caches.append(("maxpool", arg, h.shape, win))
        else:  # Flatten
            out = h.reshape(h.shape[0], -1)
            if keep_caches:
                caches.append(("flatten", h.shape))
        if not np.isfinite(out).all():
            raise NumericalOverflowError(i, type(layer).__name__.lower())
        h = out
    return h, caches


def forward(
    spec: NetworkSpec,
    params: Parameters,
    mask: Optional["MaskSet"],
    batch: np.ndarray,
) -> np.ndarray:
    """Masked forward pass; returns pre-softmax logits of shape (batch, num_classes)."""
    # Divergence surfaces as NumericalOverflowError, not as numpy warnings.
    with np.errstate(over="ignore", invalid="ignore"):
        logits, _ = _run_forward(spec, params, mask, batch, keep_caches=False)
    return logits


def save_checkpoint(path, spec: NetworkSpec, params: Parameters, mask: Optional["MaskSet"] = None):
    """Persist a network (and optional mask) as an .npz archive."""
    payload = {"spec_json": np.array(json.dumps(spec.to_dict()))}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        payload[f"weight_{i}"] = w
        payload[f"bias_{i}"] = b
    if mask is not None:
        for i, m in enumerate(mask.layers):
            payload[f"mask_{i}"] = m
    np.savez(path, **payload)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns (spec, params, mask-or-None)."""
    from .pruning import MaskSet

    with np.load(path) as data:
        spec = NetworkSpec.from_dict(json.loads(str(data["spec_json"])))
        n = len(spec.param_layers())
        params = Parameters(
            [data[f"weight_{i}"] for i in range(n)],
            [data[f"bias_{i}"] for i in range(n)],
        )
        mask = None
        if "mask_0" in data:
            mask = MaskSet([data[f"mask_{i}"] for i in range(n)])
    return spec, params, mask
