"""Dense tensor kernels: convolution, pooling, dense, activations, softmax.

Tensors are plain ``numpy.ndarray`` objects of dtype float32 with layout
``[C, *spatial]`` (no batch axis). Reductions accumulate in float64 and the
result is cast back to float32.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

DTYPE = np.float32
_IM2COL_BUDGET = 1 << 23  # float64 elements per im2col block (64 MiB)


class ShapeError(ValueError):
    """Raised when tensor shapes do not chain."""


def as_tensor(x) -> np.ndarray:
    t = np.asarray(x, dtype=DTYPE)
    if t.ndim < 1 or t.ndim > 5:
        raise ShapeError(f"tensor rank must be 1..5, got {t.ndim}")
    if 0 in t.shape:
        raise ShapeError(f"tensor dims must be >= 1, got {t.shape}")
    return t


def _expand(v, rank: int, what: str) -> tuple[int, ...]:
    if isinstance(v, (int, np.integer)):
        return (int(v),) * rank
    v = tuple(int(i) for i in v)
    if len(v) != rank:
        raise ShapeError(f"{what} has {len(v)} axes, expected {rank}")
    return v


def out_extent(extent: int, kernel: int, stride: int, padding: int = 0) -> int:
    """Output extent of a sliding window: floor((W + 2P - K) / S) + 1."""
    span = extent + 2 * padding - kernel
    if span < 0:
        raise ShapeError(
            f"kernel {kernel} larger than padded extent {extent + 2 * padding}")
    return span // stride + 1


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int | tuple[int, ...] = 3
    stride: int | tuple[int, ...] = 1
    padding: int | tuple[int, ...] = 0

    def axes(self, rank: int):
        k = _expand(self.kernel, rank, "kernel")
        s = _expand(self.stride, rank, "stride")
        p = _expand(self.padding, rank, "padding")
        if min(k) < 1 or min(s) < 1 or min(p) < 0:
            raise ShapeError(f"invalid conv spec {self}")
        return k, s, p

    def weight_shape(self, rank: int) -> tuple[int, ...]:
        return (self.out_channels, self.in_channels) + self.axes(rank)[0]

    def output_shape(self, in_shape: Sequence[int]) -> tuple[int, ...]:
        rank = len(in_shape) - 1
        if in_shape[0] != self.in_channels:
            raise ShapeError(
                f"channel axis: input has {in_shape[0]}, spec expects {self.in_channels}")
        k, s, p = self.axes(rank)
        spatial = []
        for ax, (n, ki, si, pi) in enumerate(zip(in_shape[1:], k, s, p)):
            try:
                spatial.append(out_extent(n, ki, si, pi))
            except ShapeError as e:
                raise ShapeError(f"spatial axis {ax}: {e}") from None
        return (self.out_channels, *spatial)


@dataclass(frozen=True)
class PoolSpec:
    kind: str = "max"
    kernel: int | tuple[int, ...] = 2
    stride: int | tuple[int, ...] = 2
    padding: int | tuple[int, ...] = 0

    def axes(self, rank: int):
        if self.kind not in ("max", "avg"):
            raise ValueError(f"unknown pool kind {self.kind!r}")
        k = _expand(self.kernel, rank, "kernel")
        s = _expand(self.stride, rank, "stride")
        p = _expand(self.padding, rank, "padding")
        if min(k) < 1 or min(s) < 1 or min(p) < 0:
            raise ShapeError(f"invalid pool spec {self}")
        for ax, (ki, pi) in enumerate(zip(k, p)):
            # a window made only of padding has no defined value
            if pi >= ki:
                raise ShapeError(f"spatial axis {ax}: padding {pi} >= kernel {ki}")
        return k, s, p

    def output_shape(self, in_shape: Sequence[int]) -> tuple[int, ...]:
        k, s, p = self.axes(len(in_shape) - 1)
        spatial = []
        for ax, (n, ki, si, pi) in enumerate(zip(in_shape[1:], k, s, p)):
            try:
                spatial.append(out_extent(n, ki, si, pi))
            except ShapeError as e:
                raise ShapeError(f"spatial axis {ax}: {e}") from None
        return (in_shape[0], *spatial)


def _window_slices(offset, stride, out_ext):
    return (slice(None),) + tuple(
        slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offset, stride, out_ext))


def _check_rank(x: np.ndarray, rank: int | None) -> int:
    if rank is None:
        rank = x.ndim - 1
    if rank not in (1, 2, 3) or x.ndim != rank + 1:
        raise ShapeError(f"input of shape {x.shape} does not have {rank} spatial axes")
    return rank


def conv(x, weight, bias, spec: ConvSpec, rank: int | None = None) -> np.ndarray:
    """Cross-correlate ``x`` [C_in, *S] with ``weight`` [C_out, C_in, *K], plus bias.

    Zero padding. Implemented as one matrix product per kernel offset so the
    working set stays at one shifted copy of the input.
    """
    x = as_tensor(x)
    rank = _check_rank(x, rank)
    k, s, p = spec.axes(rank)
    out_shape = spec.output_shape(x.shape)
    weight = np.asarray(weight)
    bias = np.asarray(bias)
    expected = spec.weight_shape(rank)
    if weight.shape != expected:
        for ax, (got, want) in enumerate(zip(weight.shape, expected)):
            if got != want:
                raise ShapeError(f"weight axis {ax}: got {got}, expected {want}")
        raise ShapeError(f"weight shape {weight.shape} != {expected}")
    if bias.shape != (spec.out_channels,):
        raise ShapeError(f"bias shape {bias.shape} != ({spec.out_channels},)")

    cin, cout = spec.in_channels, spec.out_channels
    out_ext = out_shape[1:]
    xp = x.astype(np.float64)
    if any(p):
        xp = np.pad(xp, [(0, 0)] + [(pi, pi) for pi in p])
    positions = int(np.prod(out_ext))
    offsets = list(np.ndindex(*k))
    # [C_out, offset, C_in]
    w = weight.astype(np.float64).reshape(cout, cin, -1).transpose(0, 2, 1)
    # offsets are batched into im2col blocks of bounded size so thin inputs
    # (e.g. 3 channels) still give the matmul a useful inner dimension
    group = max(1, min(len(offsets), _IM2COL_BUDGET // max(1, cin * positions)))
    acc = np.zeros((cout, positions), dtype=np.float64)
    for g0 in range(0, len(offsets), group):
        block = offsets[g0:g0 + group]
        cols = np.empty((len(block), cin, positions), dtype=np.float64)
        for j, offset in enumerate(block):
            cols[j] = xp[_window_slices(offset, s, out_ext)].reshape(cin, -1)
        wg = np.ascontiguousarray(w[:, g0:g0 + len(block)]).reshape(cout, -1)
        acc += wg @ cols.reshape(-1, positions)
    acc += bias.astype(np.float64)[:, None]
    return acc.reshape(out_shape).astype(DTYPE)


def pool(x, spec: PoolSpec, rank: int | None = None) -> np.ndarray:
    """Max or average pooling. Padded cells never contribute to the result."""
    x = as_tensor(x)
    rank = _check_rank(x, rank)
    k, s, p = spec.axes(rank)
    out_shape = spec.output_shape(x.shape)
    out_ext = out_shape[1:]
    pads = [(0, 0)] + [(pi, pi) for pi in p]
    offsets = list(np.ndindex(*k))

    if spec.kind == "max":
        xp = np.pad(x, pads, constant_values=-np.inf) if any(p) else x
        out = np.full(out_shape, -np.inf, dtype=DTYPE)
        for offset in offsets:
            np.maximum(out, xp[_window_slices(offset, s, out_ext)], out=out)
        return out

    xp = np.pad(x.astype(np.float64), pads) if any(p) else x.astype(np.float64)
    total = np.zeros(out_shape, dtype=np.float64)
    for offset in offsets:
        total += xp[_window_slices(offset, s, out_ext)]
    if not any(p):
        return (total / len(offsets)).astype(DTYPE)
    mask = np.pad(np.ones((1,) + x.shape[1:], dtype=np.float64), pads)
    count = np.zeros((1,) + tuple(out_ext), dtype=np.float64)
    for offset in offsets:
        count += mask[_window_slices(offset, s, out_ext)]
    return (total / count).astype(DTYPE)


def dense(x, weight, bias) -> np.ndarray:
    x = as_tensor(x)
    weight = np.asarray(weight)
    bias = np.asarray(bias)
    if x.ndim != 1:
        raise ShapeError(f"dense input must be 1-D, got shape {x.shape}")
    if weight.ndim != 2 or weight.shape[1] != x.shape[0]:
        raise ShapeError(
            f"dense weight shape {weight.shape} does not match input length {x.shape[0]}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"dense bias shape {bias.shape} != ({weight.shape[0]},)")
    out = weight.astype(np.float64) @ x.astype(np.float64) + bias.astype(np.float64)
    return out.astype(DTYPE)


def relu(x) -> np.ndarray:
    return np.maximum(as_tensor(x), DTYPE(0))


def sigmoid(x) -> np.ndarray:
    return expit(as_tensor(x)).astype(DTYPE)


def hswish(x) -> np.ndarray:
    x = as_tensor(x)
    return (x * np.clip(x + DTYPE(3), 0, 6) / DTYPE(6)).astype(DTYPE)


ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "hswish": hswish}


def activation(x, kind: str) -> np.ndarray:
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


def softmax(x) -> np.ndarray:
    x = as_tensor(x).astype(np.float64)
    if x.ndim != 1:
        raise ShapeError(f"softmax expects a vector, got shape {x.shape}")
    e = np.exp(x - x.max())
    return (e / e.sum()).astype(DTYPE)


def concat_channels(inputs: Sequence) -> np.ndarray:
    ts = [as_tensor(t) for t in inputs]
    if not ts:
        raise ShapeError("concat_channels needs at least one input")
    ref = ts[0].shape[1:]
    for i, t in enumerate(ts[1:], start=1):
        if t.shape[1:] != ref:
            raise ShapeError(
                f"input {i} has non-channel dims {t.shape[1:]}, expected {ref}")
    if len(ts) == 1:
        return ts[0]
    return np.concatenate(ts, axis=0)
