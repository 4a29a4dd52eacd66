"""Sparse pyramidal Lucas-Kanade flow and its rasterisation into dense fields."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import DTYPE

SINGULAR_EIG = 1e-6
FLOW_CLAMP = 20.0
LUMA = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class LkParams:
    window: int = 21
    pyramid_levels: int = 3
    max_iters: int = 30
    epsilon: float = 0.01
    max_corners: int = 200
    quality_level: float = 0.01
    min_distance: float = 7.0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")


@dataclass(frozen=True)
class FlowVectors:
    points: np.ndarray         # [P, 2] (x, y) in the first frame
    displacements: np.ndarray  # [P, 2] (u, v) pixels, zero where invalid
    status: np.ndarray         # [P] bool

    def __len__(self):
        return len(self.status)


def gray_image(img) -> np.ndarray:
    g = np.asarray(img, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError(f"gray image must be 2-D, got shape {g.shape}")
    if g.shape[0] < 16 or g.shape[1] < 16:
        raise ValueError(f"gray image must be at least 16x16, got {g.shape}")
    return g


def to_gray(rgb) -> np.ndarray:
    """Luma of a [3, H, W] frame."""
    rgb = np.asarray(rgb, dtype=np.float64)
    return (LUMA[0] * rgb[0] + LUMA[1] * rgb[1] + LUMA[2] * rgb[2]).astype(DTYPE)


def _gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, 1:-1] = (img[:, 2:] - img[:, :-2]) / 2
    gy[1:-1, :] = (img[2:, :] - img[:-2, :]) / 2
    return gx, gy


def _box3(a: np.ndarray) -> np.ndarray:
    p = np.pad(a, 1)
    h, w = a.shape
    return sum(p[dy:dy + h, dx:dx + w] for dy in range(3) for dx in range(3))


def min_eigen_response(img) -> np.ndarray:
    """Smaller eigenvalue of the 3x3-summed gradient structure tensor, per pixel."""
    img = gray_image(img)
    gx, gy = _gradients(img)
    a, b, c = _box3(gx * gx), _box3(gx * gy), _box3(gy * gy)
    return (a + c) / 2 - np.sqrt(((a - c) / 2) ** 2 + b * b)


def shi_tomasi_corners(img, params: LkParams = LkParams()) -> list[tuple[float, float]]:
    resp = min_eigen_response(img)
    peak = resp.max()
    if peak <= 0:
        return []
    ys, xs = np.nonzero(resp > params.quality_level * peak)
    r = resp[ys, xs]
    order = np.lexsort((xs, ys, -r))
    min_d2 = params.min_distance ** 2
    kept: list[tuple[float, float]] = []
    kept_arr = np.empty((0, 2))
    for i in order:
        if len(kept) >= params.max_corners:
            break
        p = (float(xs[i]), float(ys[i]))
        if len(kept) and (((kept_arr - p) ** 2).sum(axis=1) < min_d2).any():
            continue
        kept.append(p)
        kept_arr = np.vstack([kept_arr, p])
    return kept


def build_pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    """Level 0 is ``img``; each next level is a 2x2 box mean (odd edges dropped)."""
    pyr = [img]
    for _ in range(levels - 1):
        prev = pyr[-1]
        h, w = prev.shape[0] // 2 * 2, prev.shape[1] // 2 * 2
        if h < 2 or w < 2:
            break
        p = prev[:h, :w]
        pyr.append((p[0::2, 0::2] + p[1::2, 0::2] + p[0::2, 1::2] + p[1::2, 1::2]) / 4)
    return pyr


def bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``img`` at real coordinates; reads outside clamp to the edge."""
    h, w = img.shape
    xs = np.clip(xs, 0, w - 1)
    ys = np.clip(ys, 0, h - 1)
    x0 = np.minimum(np.floor(xs).astype(np.intp), w - 2) if w > 1 else np.zeros(xs.shape, np.intp)
    y0 = np.minimum(np.floor(ys).astype(np.intp), h - 2) if h > 1 else np.zeros(ys.shape, np.intp)
    fx, fy = xs - x0, ys - y0
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def pyr_lk_flow(prev, next, points: Sequence[tuple[float, float]],
                params: LkParams = LkParams()) -> FlowVectors:
    """Track ``points`` from ``prev`` to ``next`` coarse-to-fine.

    At each level the displacement is refined by d += G^-1 b until the update
    is below ``epsilon``. G is normalised by the window area before the
    singularity test. Points that fail it at the finest level, or end outside
    the image, are invalid and report zero displacement.
    """
    prev, next = gray_image(prev), gray_image(next)
    if prev.shape != next.shape:
        raise ValueError(f"frame shapes differ: {prev.shape} vs {next.shape}")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    if n == 0:
        return FlowVectors(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0, bool))

    pyr_i = build_pyramid(prev, params.pyramid_levels)
    pyr_j = build_pyramid(next, params.pyramid_levels)
    r = params.window // 2
    oy, ox = np.mgrid[-r:r + 1, -r:r + 1]
    ox, oy = ox.ravel()[None, :], oy.ravel()[None, :]
    area = ox.size

    guess = np.zeros((n, 2))
    valid = np.ones(n, dtype=bool)
    for level in range(len(pyr_i) - 1, -1, -1):
        I, J = pyr_i[level], pyr_j[level]
        gx, gy = _gradients(I)
        # pixel centres: x_level = (x + 0.5) / 2**level - 0.5
        scale = 2.0 ** level
        px = (pts[:, 0:1] + 0.5) / scale - 0.5
        py = (pts[:, 1:2] + 0.5) / scale - 0.5
        wx, wy = px + ox, py + oy
        patch = bilinear(I, wx, wy)
        ix, iy = bilinear(gx, wx, wy), bilinear(gy, wx, wy)
        gxx, gxy, gyy = (ix * ix).sum(1), (ix * iy).sum(1), (iy * iy).sum(1)
        det = gxx * gyy - gxy * gxy
        min_eig = ((gxx + gyy) / 2 - np.sqrt(((gxx - gyy) / 2) ** 2 + gxy ** 2)) / area
        ok = min_eig >= SINGULAR_EIG
        if level == 0:
            valid &= ok

        d = np.zeros((n, 2))
        active = ok.copy()
        for _ in range(params.max_iters):
            if not active.any():
                break
            a = np.nonzero(active)[0]
            jx = wx[a] + guess[a, 0:1] + d[a, 0:1]
            jy = wy[a] + guess[a, 1:2] + d[a, 1:2]
            diff = patch[a] - bilinear(J, jx, jy)
            bx, by = (diff * ix[a]).sum(1), (diff * iy[a]).sum(1)
            eta_x = (gyy[a] * bx - gxy[a] * by) / det[a]
            eta_y = (gxx[a] * by - gxy[a] * bx) / det[a]
            d[a, 0] += eta_x
            d[a, 1] += eta_y
            active[a] = np.hypot(eta_x, eta_y) >= params.epsilon
        guess = guess + d
        if level > 0:
            guess = guess * 2

    h, w = prev.shape
    end = pts + guess
    valid &= np.isfinite(end).all(1)
    valid &= (end[:, 0] >= 0) & (end[:, 0] <= w - 1) & (end[:, 1] >= 0) & (end[:, 1] <= h - 1)
    disp = np.where(valid[:, None], guess, 0.0)
    return FlowVectors(pts, disp, valid)


def rasterize_flow(vectors: FlowVectors, height: int, width: int) -> np.ndarray:
    """Splat valid vectors onto a [2, H, W] grid scaled into [-1, 1].

    Each vector lands on the nearest pixel of its source point; where several
    land on one pixel the source with the smallest (y, x) wins.
    """
    field = np.zeros((2, height, width), dtype=np.float64)
    idx = np.nonzero(np.asarray(vectors.status, dtype=bool))[0]
    if len(idx):
        pts = np.asarray(vectors.points, dtype=np.float64)[idx]
        disp = np.asarray(vectors.displacements, dtype=np.float64)[idx]
        order = np.lexsort((pts[:, 0], pts[:, 1]))
        px = np.floor(pts[:, 0] + 0.5).astype(np.intp)
        py = np.floor(pts[:, 1] + 0.5).astype(np.intp)
        taken = np.zeros((height, width), dtype=bool)
        for i in order:
            x, y = px[i], py[i]
            if 0 <= x < width and 0 <= y < height and not taken[y, x]:
                taken[y, x] = True
                field[:, y, x] = disp[i]
    return (np.clip(field, -FLOW_CLAMP, FLOW_CLAMP) / FLOW_CLAMP).astype(DTYPE)


def flow_sequence(frames: Sequence, params: LkParams = LkParams(),
                  num_frames: int = 79) -> np.ndarray:
    """Flow fields between consecutive gray frames, [2, num_frames, H, W].

    Corners are detected afresh on every frame. The n - 1 fields are padded
    to n by repeating the last one.
    """
    if len(frames) != num_frames:
        raise ValueError(f"expected {num_frames} frames, got {len(frames)}")
    grays = [gray_image(f) for f in frames]
    h, w = grays[0].shape
    for i, g in enumerate(grays):
        if g.shape != (h, w):
            raise ValueError(f"frame {i} has shape {g.shape}, expected {(h, w)}")
    fields = []
    for a, b in zip(grays[:-1], grays[1:]):
        pts = shi_tomasi_corners(a, params)
        fields.append(rasterize_flow(pyr_lk_flow(a, b, pts, params), h, w))
    fields.append(fields[-1] if fields else np.zeros((2, h, w), dtype=DTYPE))
    return np.stack(fields, axis=1)
