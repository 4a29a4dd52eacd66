"""I3D (inflated Inception-V1) and CA-VGG16 as layer lists over the tensor kernels."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .tensor import ConvSpec, PoolSpec, ShapeError

NUM_CLASSES = 4

LAYER_KINDS = (
    "conv", "pool", "dense", "activation", "softmax", "ca_module",
    "inception_block", "flatten", "temporal_mean",
)


@dataclass(frozen=True)
class DenseSpec:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class InceptionSpec:
    """Four-branch block; every internal stride is 1 and 3x3x3 ops keep extent."""
    in_channels: int
    b0: int
    b1: tuple[int, int]
    b2: tuple[int, int]
    b3: int

    @property
    def out_channels(self) -> int:
        return self.b0 + self.b1[1] + self.b2[1] + self.b3

    def branches(self) -> list[tuple[str, ConvSpec]]:
        c = self.in_channels
        return [
            ("b0", ConvSpec(c, self.b0, 1)),
            ("b1a", ConvSpec(c, self.b1[0], 1)),
            ("b1b", ConvSpec(self.b1[0], self.b1[1], 3, 1, 1)),
            ("b2a", ConvSpec(c, self.b2[0], 1)),
            ("b2b", ConvSpec(self.b2[0], self.b2[1], 3, 1, 1)),
            ("b3", ConvSpec(c, self.b3, 1)),
        ]


@dataclass(frozen=True)
class CaParams:
    channels: int
    reduction: int = 16

    @property
    def mid_channels(self) -> int:
        return max(8, self.channels // self.reduction)

    def transforms(self) -> list[tuple[str, ConvSpec]]:
        c, m = self.channels, self.mid_channels
        return [
            ("conv1", ConvSpec(c, m, 1)),
            ("conv_h", ConvSpec(m, c, 1)),
            ("conv_w", ConvSpec(m, c, 1)),
        ]


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    params: object = None
    relu: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"layer {self.name}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class NetworkDesc:
    name: str
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"{self.name}: duplicate layer names")

    @property
    def rank(self) -> int:
        return len(self.input_shape) - 1

    def parameter_shapes(self) -> dict[str, tuple[int, ...]]:
        """Every named parameter tensor in forward order."""
        shapes: dict[str, tuple[int, ...]] = {}
        r = self.rank
        for layer in self.layers:
            convs: list[tuple[str, ConvSpec]] = []
            if layer.kind == "conv":
                convs = [(layer.name, layer.params)]
            elif layer.kind == "inception_block":
                convs = [(f"{layer.name}.{b}", s) for b, s in layer.params.branches()]
            elif layer.kind == "ca_module":
                # the CA transforms act on [C, H+W] strips, i.e. 1-D
                convs = [(f"{layer.name}.{b}", s) for b, s in layer.params.transforms()]
            elif layer.kind == "dense":
                d = layer.params
                shapes[f"{layer.name}.weight"] = (d.out_features, d.in_features)
                shapes[f"{layer.name}.bias"] = (d.out_features,)
            for name, spec in convs:
                rank = 1 if layer.kind == "ca_module" else r
                shapes[f"{name}.weight"] = spec.weight_shape(rank)
                shapes[f"{name}.bias"] = (spec.out_channels,)
        return shapes


# --------------------------------------------------------------------------
# builders

VGG_BLOCKS = ((64, 2), (128, 2), (256, 3), (512, 3), (512, 3))
CA_AFTER = {"three_ca": (1, 4, 5), "five_ca": (1, 2, 3, 4, 5)}


def build_cavgg16(variant: str = "three_ca", num_classes: int = NUM_CLASSES,
                  size: int = 224) -> NetworkDesc:
    """VGG16 with coordinate attention after the listed conv blocks."""
    try:
        ca_blocks = CA_AFTER[variant]
    except KeyError:
        raise ValueError(f"unknown CA-VGG16 variant {variant!r}") from None
    layers = []
    c_in, extent = 3, size
    for b, (c_out, n) in enumerate(VGG_BLOCKS, start=1):
        for i in range(1, n + 1):
            layers.append(LayerSpec(f"conv{b}_{i}", "conv", ConvSpec(c_in, c_out, 3, 1, 1), relu=True))
            c_in = c_out
        layers.append(LayerSpec(f"pool{b}", "pool", PoolSpec("max", 2, 2)))
        extent = T.out_extent(extent, 2, 2)
        if b in ca_blocks:
            layers.append(LayerSpec(f"ca{b}", "ca_module", CaParams(c_in)))
    flat = c_in * extent * extent
    layers += [
        LayerSpec("flatten", "flatten"),
        LayerSpec("fc6", "dense", DenseSpec(flat, 4096), relu=True),
        LayerSpec("fc7", "dense", DenseSpec(4096, 4096), relu=True),
        LayerSpec("fc8", "dense", DenseSpec(4096, num_classes)),
    ]
    name = "cavgg16-3" if variant == "three_ca" else "cavgg16-5"
    return NetworkDesc(name, (3, size, size), tuple(layers), num_classes)


# Inception-V1 channel plan: b0, (b1 reduce, b1 out), (b2 reduce, b2 out), b3
INCEPTION_PLAN = {
    "mixed_3b": (64, (96, 128), (16, 32), 32),
    "mixed_3c": (128, (128, 192), (32, 96), 64),
    "mixed_4b": (192, (96, 208), (16, 48), 64),
    "mixed_4c": (160, (112, 224), (24, 64), 64),
    "mixed_4d": (128, (128, 256), (24, 64), 64),
    "mixed_4e": (112, (144, 288), (32, 64), 64),
    "mixed_4f": (256, (160, 320), (32, 128), 128),
    "mixed_5b": (256, (160, 320), (32, 128), 128),
    "mixed_5c": (384, (192, 384), (48, 128), 128),
}


def build_i3d(in_channels: int = 3, num_classes: int = NUM_CLASSES,
              num_frames: int = 79, size: int = 224) -> NetworkDesc:
    """Inflated Inception-V1. ``in_channels`` is 3 for RGB and 2 for flow.

    The final average pool spans the remaining spatial extent (7x7 at 224
    input) and two time steps.
    """
    if in_channels not in (2, 3):
        raise ValueError(f"in_channels must be 3 (RGB) or 2 (flow), got {in_channels}")
    L = LayerSpec
    layers = [
        L("conv3d_1a_7x7", "conv", ConvSpec(in_channels, 64, 7, 2, 3), relu=True),
        L("maxpool3d_2a_3x3", "pool", PoolSpec("max", (1, 3, 3), (1, 2, 2), (0, 1, 1))),
        L("conv3d_2b_1x1", "conv", ConvSpec(64, 64, 1), relu=True),
        L("conv3d_2c_3x3", "conv", ConvSpec(64, 192, 3, 1, 1), relu=True),
        L("maxpool3d_3a_3x3", "pool", PoolSpec("max", (1, 3, 3), (1, 2, 2), (0, 1, 1))),
    ]
    c = 192

    def inc(name):
        nonlocal c
        spec = InceptionSpec(c, *INCEPTION_PLAN[name])
        c = spec.out_channels
        layers.append(L(name, "inception_block", spec))

    inc("mixed_3b")
    inc("mixed_3c")
    layers.append(L("maxpool3d_4a_3x3", "pool", PoolSpec("max", 3, 2, 1)))
    for n in ("mixed_4b", "mixed_4c", "mixed_4d", "mixed_4e", "mixed_4f"):
        inc(n)
    layers.append(L("maxpool3d_5a_2x2", "pool", PoolSpec("max", 2, 2, 0)))
    inc("mixed_5b")
    inc("mixed_5c")

    # size the head from the symbolic trace of everything before it
    shape: tuple[int, ...] = (in_channels, num_frames, size, size)
    for layer in layers:
        shape = _layer_output_shape(layer, shape)
    _, _, h, w = shape
    layers += [
        L("avgpool", "pool", PoolSpec("avg", (2, h, w), 1, 0)),
        L("logits", "conv", ConvSpec(c, num_classes, 1)),
        L("temporal_mean", "temporal_mean"),
    ]
    name = "rgb_i3d" if in_channels == 3 else "flow_i3d"
    return NetworkDesc(name, (in_channels, num_frames, size, size), tuple(layers), num_classes)


# --------------------------------------------------------------------------
# shapes

def _layer_output_shape(layer: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    kind, p = layer.kind, layer.params
    if kind == "conv":
        return p.output_shape(shape)
    if kind == "pool":
        return p.output_shape(shape)
    if kind == "inception_block":
        if shape[0] != p.in_channels:
            raise ShapeError(f"channel axis: input has {shape[0]}, block expects {p.in_channels}")
        return (p.out_channels,) + tuple(shape[1:])
    if kind == "ca_module":
        if len(shape) != 3 or shape[0] != p.channels:
            raise ShapeError(f"CA expects ({p.channels}, H, W), got {shape}")
        return shape
    if kind == "flatten":
        return (int(np.prod(shape)),)
    if kind == "dense":
        if shape != (p.in_features,):
            raise ShapeError(f"dense expects ({p.in_features},), got {shape}")
        return (p.out_features,)
    if kind == "temporal_mean":
        if len(shape) < 2 or any(d != 1 for d in shape[2:]):
            raise ShapeError(f"temporal_mean expects (C, T, 1, ...), got {shape}")
        return (shape[0],)
    if kind in ("activation", "softmax"):
        return shape
    raise ShapeError(f"unknown layer kind {kind!r}")


def shape_trace(net: NetworkDesc, input_shape: Sequence[int] | None = None
                ) -> list[tuple[str, tuple[int, ...]]]:
    """Symbolic pass over ``net``; one (layer name, output dims) row per layer."""
    shape = tuple(net.input_shape if input_shape is None else input_shape)
    rows = []
    for layer in net.layers:
        try:
            out = _layer_output_shape(layer, shape)
        except ShapeError as e:
            raise ShapeError(f"layer {layer.name!r} ({layer.kind}): input {shape}: {e}") from None
        rows.append((layer.name, out))
        shape = out
    if shape != (net.num_classes,):
        raise ShapeError(
            f"layer {net.layers[-1].name!r}: final output {shape}, expected ({net.num_classes},)")
    return rows


def format_trace(net: NetworkDesc, rows=None) -> str:
    rows = shape_trace(net) if rows is None else rows
    kinds = {l.name: l.kind for l in net.layers}
    w_name = max(len("layer"), *(len(n) for n, _ in rows))
    w_kind = max(len("kind"), *(len(k) for k in kinds.values()))
    lines = [f"{'layer':<{w_name}}  {'kind':<{w_kind}}  output",
             f"{'input':<{w_name}}  {'':<{w_kind}}  {_dims(net.input_shape)}"]
    for name, dims in rows:
        lines.append(f"{name:<{w_name}}  {kinds[name]:<{w_kind}}  {_dims(dims)}")
    return "\n".join(lines)


def _dims(d) -> str:
    return "x".join(str(i) for i in d)


# --------------------------------------------------------------------------
# forward

def validate_weights(net: NetworkDesc, weights: Mapping[str, np.ndarray]) -> None:
    for name, shape in net.parameter_shapes().items():
        layer = name.split(".")[0]
        if name not in weights:
            raise ShapeError(f"{net.name}: layer {layer!r}: missing tensor {name!r}")
        got = tuple(np.shape(weights[name]))
        if got != shape:
            raise ShapeError(
                f"{net.name}: layer {layer!r}: tensor {name!r} has shape {got}, expected {shape}")


def ca_gates(x, params: CaParams, weights: Mapping[str, np.ndarray],
             prefix: str = "") -> tuple[np.ndarray, np.ndarray]:
    """Per-row gates [C, H] and per-column gates [C, W] for x [C, H, W].

    Rows and columns are average-pooled into a [C, H+W] strip, squeezed through
    a shared 1x1 transform with hswish, split, and turned into sigmoid gates.
    """
    x = T.as_tensor(x)
    c, h, w = x.shape
    if c != params.channels:
        raise ShapeError(f"CA expects {params.channels} channels, got {c}")
    strip = np.concatenate([x.mean(axis=2, dtype=np.float64), x.mean(axis=1, dtype=np.float64)], axis=1)
    specs = dict(params.transforms())

    def transform(name, v):
        return T.conv(v, weights[f"{prefix}{name}.weight"], weights[f"{prefix}{name}.bias"],
                      specs[name], rank=1)

    mid = T.hswish(transform("conv1", strip))
    return T.sigmoid(transform("conv_h", mid[:, :h])), T.sigmoid(transform("conv_w", mid[:, h:]))


def coordinate_attention(x, params: CaParams, weights: Mapping[str, np.ndarray],
                         prefix: str = "") -> np.ndarray:
    """Coordinate attention on x [C, H, W]: x scaled by its row and column gates."""
    x = T.as_tensor(x)
    g_h, g_w = ca_gates(x, params, weights, prefix)
    return (x * g_h[:, :, None] * g_w[:, None, :]).astype(T.DTYPE)


def _run_inception(x, spec: InceptionSpec, weights, prefix):
    convs = dict(spec.branches())

    def cv(branch, v):
        return T.relu(T.conv(v, weights[f"{prefix}.{branch}.weight"],
                             weights[f"{prefix}.{branch}.bias"], convs[branch]))

    b0 = cv("b0", x)
    b1 = cv("b1b", cv("b1a", x))
    b2 = cv("b2b", cv("b2a", x))
    b3 = cv("b3", T.pool(x, PoolSpec("max", 3, 1, 1)))
    return T.concat_channels([b0, b1, b2, b3])


def apply_layer(layer: LayerSpec, x: np.ndarray, weights) -> np.ndarray:
    kind, p, n = layer.kind, layer.params, layer.name
    if kind == "conv":
        y = T.conv(x, weights[f"{n}.weight"], weights[f"{n}.bias"], p)
    elif kind == "pool":
        y = T.pool(x, p)
    elif kind == "dense":
        y = T.dense(x, weights[f"{n}.weight"], weights[f"{n}.bias"])
    elif kind == "inception_block":
        y = _run_inception(x, p, weights, n)
    elif kind == "ca_module":
        y = coordinate_attention(x, p, weights, prefix=f"{n}.")
    elif kind == "flatten":
        y = x.reshape(-1)
    elif kind == "temporal_mean":
        y = x.reshape(x.shape[0], -1).mean(axis=1, dtype=np.float64).astype(T.DTYPE)
    elif kind == "activation":
        y = T.activation(x, p)
    elif kind == "softmax":
        y = T.softmax(x)
    else:
        raise ShapeError(f"unknown layer kind {kind!r}")
    return T.relu(y) if layer.relu else y


def forward(net: NetworkDesc, weights: Mapping[str, np.ndarray], x) -> np.ndarray:
    """Run ``net`` on one input and return its 4 class probabilities.

    The last layer yields logits (time-averaged for I3D); softmax is applied
    on top unless the network already ends in a softmax layer.
    """
    x = T.as_tensor(x)
    if x.shape != tuple(net.input_shape):
        raise ShapeError(f"{net.name}: input shape {x.shape}, expected {net.input_shape}")
    shape_trace(net)
    validate_weights(net, weights)
    for layer in net.layers:
        x = apply_layer(layer, x, weights)
    if net.layers[-1].kind != "softmax":
        x = T.softmax(x)
    return x


NETWORKS = ("rgb_i3d", "flow_i3d", "cavgg16-3", "cavgg16-5")


def build_network(name: str, num_frames: int = 79, size: int = 224) -> NetworkDesc:
    if name == "rgb_i3d":
        return build_i3d(3, NUM_CLASSES, num_frames, size)
    if name == "flow_i3d":
        return build_i3d(2, NUM_CLASSES, num_frames, size)
    if name in ("cavgg16", "cavgg16-3"):
        return build_cavgg16("three_ca", NUM_CLASSES, size)
    if name == "cavgg16-5":
        return build_cavgg16("five_ca", NUM_CLASSES, size)
    raise ValueError(f"unknown network {name!r}; expected one of {NETWORKS}")
