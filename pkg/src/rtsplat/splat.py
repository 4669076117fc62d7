"""Differentiable splatting of shaded samples.

Each sample becomes a 3x3 Gaussian (sigma = 0.5 px) centred at its
differentiable screen position and anchored at the pixel that produced it.
Output pixels gather the splats of their 3x3 neighbourhood, so every pixel
is written exactly once and the result does not depend on thread count.
"""
from __future__ import annotations

import enum

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import value
from .evaluator import PositionBuffer
from .shading import ShadedLayer

SIGMA = 0.5
EPSILON = 0.05
_W_FLOOR = 1e-30
OFFSETS = tuple((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1))


class Bucket(enum.IntEnum):
    FRONT = 0  # S+
    CENTER = 1  # S°
    BACK = 2  # S-
    NONE = -1


def _kernel(d2):
    return ad.exp(d2 * (-0.5 / SIGMA**2))


def kernel_normalizer(p, anchor=None):
    """Sum of unnormalised weights over the 3x3 pixels around ``anchor``."""
    p = np.asarray(p, dtype=np.float64) if not ad.is_diff(p) else p
    anchor = np.floor(value(p) + 0.5) if anchor is None else np.asarray(anchor, dtype=np.float64)
    total = 0.0
    for dy, dx in OFFSETS:
        q = anchor + np.array([dx, dy], dtype=np.float64)
        total = total + _kernel(ad.sum(ad.square(q - p), axis=-1))
    return ad.maximum(total, _W_FLOOR)


def splat_weight(p, q, anchor=None):
    """Weight of the splat centred at ``p`` (x, y) at integer pixel ``q``.

    ``anchor`` is the pixel whose 3x3 neighbourhood defines the support and
    the normaliser; by default the pixel whose centre is nearest to ``p``.
    Outside the support the weight is exactly 0.
    """
    q = np.asarray(q, dtype=np.float64)
    anchor = np.floor(value(p) + 0.5) if anchor is None else np.asarray(anchor, dtype=np.float64)
    inside = np.all(np.abs(q - anchor) <= 1.0, axis=-1)
    w = (1.0 + EPSILON) / kernel_normalizer(p, anchor) * _kernel(ad.sum(ad.square(q - p), axis=-1))
    return ad.where(inside, w, 0.0)


def composite_over(front, back):
    """Premultiplied ``front + (1 - alpha_front) * back``."""
    a = front[..., 3:4]
    return front + (1.0 - a) * back


def composite_background(image, color) -> object:
    """Over-composite onto an opaque background colour."""
    bg = np.concatenate([np.asarray(color, dtype=np.float64).reshape(3), [1.0]])
    return composite_over(image, np.broadcast_to(bg, np.shape(value(image))))


def assign_layers(p_depth, q_depth, p_valid, q_valid) -> np.ndarray:
    """Accumulation buffer per p-layer, arrays shaped ``(K, ...)``.

    Each valid p-layer pairs with the valid q-layer nearest in depth.  Of the
    p-layers paired with the front-most q-layer, the closest (nearer-to-camera
    on ties) goes to S°; p-layers in front of it go to S+, the rest to S-.
    Without any valid q-layer every p-layer goes to S°.
    """
    p_depth = np.asarray(p_depth, dtype=np.float64)
    q_depth = np.asarray(q_depth, dtype=np.float64)
    p_valid = np.asarray(p_valid, dtype=bool)
    q_valid = np.asarray(q_valid, dtype=bool)
    K = p_depth.shape[0]
    dist = np.abs(p_depth[:, None] - q_depth[None, :])  # (Kp, Kq, ...)
    dist = np.where(q_valid[None, :], dist, np.inf)
    nearest = np.argmin(dist, axis=1)  # first q-layer on ties
    front_q = np.argmax(q_valid, axis=0)  # first valid q-layer
    any_q = q_valid.any(axis=0)
    paired = (nearest == front_q[None]) & p_valid
    d_front = np.take_along_axis(dist, front_q[None, None], axis=1)[:, 0]
    d_front = np.where(paired, d_front, np.inf)
    center = np.argmin(d_front, axis=0)  # first p-layer on ties
    has_center = paired.any(axis=0)
    k = np.arange(K).reshape((K,) + (1,) * (p_depth.ndim - 1))
    out = np.where(k < center[None], Bucket.FRONT, np.where(k == center[None], Bucket.CENTER, Bucket.BACK))
    out = np.where(has_center[None], out, Bucket.BACK)
    out = np.where(any_q[None], out, Bucket.CENTER)
    return np.where(p_valid, out, Bucket.NONE).astype(np.int8)


def _shift_numeric(a: np.ndarray, dy: int, dx: int, fill) -> np.ndarray:
    """``out[:, y, x] = a[:, y + dy, x + dx]`` (look at the neighbour)."""
    H, W = a.shape[1:3]
    pad = ((0, 0), (1, 1), (1, 1)) + ((0, 0),) * (a.ndim - 3)
    padded = np.pad(a, pad, constant_values=fill)
    return padded[:, 1 + dy : 1 + dy + H, 1 + dx : 1 + dx + W]


def _splat_weights(p, anchor):
    """Weights ``(N, 9)`` of samples at ``p`` (N, 2) toward the 3x3 pixels
    around their integer ``anchor`` (N, 2)."""
    g = []
    for dy, dx in OFFSETS:
        q = anchor + np.array([dx, dy], dtype=np.float64)
        g.append(_kernel(ad.sum(ad.square(q - p), axis=-1)))
    g = ad.stack(g, axis=-1)
    scale = (1.0 + EPSILON) / ad.maximum(ad.sum(g, axis=-1, keepdims=True), _W_FLOOR)
    return g * scale


def _accumulate(colors: ShadedLayer, positions: PositionBuffer, buckets):
    """Gather weighted colour and weight into 3 buffers: ``(3, H, W, 5)``.

    ``buckets`` is a list of 9 ``(K, H, W)`` arrays, one per offset.  Only
    valid samples are touched; the routing of each (sample, offset) pair to
    its buffer and pixel is a constant sparse matrix.
    """
    K, H, W = positions.valid.shape
    idx = np.flatnonzero(positions.valid)
    n = len(idx)
    k, y, x = np.unravel_index(idx, (K, H, W))
    anchor = np.stack([x, y], axis=-1).astype(np.float64)
    p = ad.take(ad.reshape(positions.screen[..., 0:2], (K * H * W, 2)), idx)
    w = ad.reshape(_splat_weights(p, anchor), (n, 9, 1))
    rgba = ad.reshape(ad.take(ad.reshape(colors.rgba, (K * H * W, 4)), idx), (n, 1, 4))
    payload = ad.reshape(ad.concatenate([w * rgba, w], axis=-1), (n * 9, 5))

    rows = np.full((n, 9), -1, dtype=np.int64)
    for o, ((dy, dx), b) in enumerate(zip(OFFSETS, buckets)):
        qy, qx = y + dy, x + dx
        bucket = np.asarray(b)[k, y, x].astype(np.int64)
        keep = (qy >= 0) & (qy < H) & (qx >= 0) & (qx < W) & (bucket >= 0)
        rows[keep, o] = bucket[keep] * (H * W) + qy[keep] * W + qx[keep]
    rows = rows.reshape(-1)
    cols = np.flatnonzero(rows >= 0)
    route = sp.csr_matrix((np.ones(len(cols)), (rows[cols], cols)), shape=(3 * H * W, n * 9))
    return ad.reshape(ad.sparse_dot(route, payload), (3, H, W, 5))


def _normalize(acc):
    """Normalised premultiplied RGBA per buffer from ``(..., 5)``."""
    return acc[..., 0:4] / ad.maximum(acc[..., 4:5], 1.0)


def splat_layer_single(colors: ShadedLayer, positions: PositionBuffer):
    """Single-layer splatting, ``(H, W, 4)``."""
    if colors.layers != 1 or positions.layers != 1:
        raise ValueError("single-layer splatting takes exactly one layer")
    b = np.where(positions.valid, Bucket.CENTER, Bucket.NONE)
    acc = _accumulate(colors, positions, [b] * len(OFFSETS))
    return _normalize(acc[int(Bucket.CENTER)])


def splat_buckets(positions: PositionBuffer) -> list:
    depth = positions.depth
    valid = positions.valid
    out = []
    for dy, dx in OFFSETS:
        q_depth = _shift_numeric(depth, dy, dx, 0.0)
        q_valid = _shift_numeric(valid, dy, dx, False)
        out.append(assign_layers(depth, q_depth, valid, q_valid))
    return out


def splat_multilayer(colors: ShadedLayer, positions: PositionBuffer, background=None, return_buffers: bool = False):
    """Depth-aware splatting of ``K`` layers, ``(H, W, 4)`` premultiplied."""
    if colors.layers != positions.layers:
        raise ValueError("colour and position buffers have different layer counts")
    acc = _accumulate(colors, positions, splat_buckets(positions))
    front = _normalize(acc[int(Bucket.FRONT)])
    center = _normalize(acc[int(Bucket.CENTER)])
    back = _normalize(acc[int(Bucket.BACK)])
    image = composite_over(front, composite_over(center, back))
    if background is not None:
        image = composite_background(image, background)
    if return_buffers:
        return image, (front, center, back)
    return image
