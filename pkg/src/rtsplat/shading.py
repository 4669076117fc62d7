"""Deferred shading: per-pixel premultiplied RGBA from G-buffer attributes."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from . import autodiff as ad
from .autodiff import EvaluationDomainError, value
from .evaluator import GBuffer
from .scene import Texture


@dataclass
class ShadedLayer:
    """Premultiplied RGBA ``(K, H, W, 4)``; invalid pixels are exactly 0."""

    valid: np.ndarray
    rgba: Any

    @property
    def layers(self) -> int:
        return self.valid.shape[0]


def _finish(gbuffer: GBuffer, rgb, alpha=None) -> ShadedLayer:
    mask = gbuffer.valid[..., None]
    shape = gbuffer.valid.shape + (1,)
    if alpha is None:
        alpha = np.ones(shape)
    else:
        alpha = ad.reshape(alpha, shape)
    alpha = alpha * np.ones(shape)
    rgba = ad.concatenate([rgb * alpha, alpha], axis=-1)
    return ShadedLayer(gbuffer.valid, ad.where(np.broadcast_to(mask, rgba.shape), rgba, 0.0))


def shade_silhouette(gbuffer: GBuffer) -> ShadedLayer:
    rgba = np.broadcast_to(gbuffer.valid[..., None], gbuffer.valid.shape + (4,)).astype(np.float64)
    return ShadedLayer(gbuffer.valid, rgba)


def shade_flat(gbuffer: GBuffer, color) -> ShadedLayer:
    return _finish(gbuffer, ad.reshape(color, (3,)))


def shade_vertex_color(gbuffer: GBuffer) -> ShadedLayer:
    if gbuffer.color is None:
        raise ValueError("G-buffer carries no interpolated colors")
    return _finish(gbuffer, gbuffer.color)


def shade_diffuse_textured(gbuffer: GBuffer, texture: Texture, light_dir, light_color, ambient) -> ShadedLayer:
    """Lambertian: ``albedo * (ambient + light * max(0, n . l))``."""
    if gbuffer.normal is None or gbuffer.uv is None:
        raise ValueError("diffuse shading needs normals and texture coordinates")
    l = np.asarray(light_dir, dtype=np.float64)
    l = l / np.linalg.norm(l)
    albedo = texture.sample(gbuffer.uv)[..., :3]
    ndotl = ad.maximum(ad.sum(gbuffer.normal * l, axis=-1), 0.0)
    shade = ambient + ad.reshape(ndotl, gbuffer.valid.shape + (1,)) * light_color
    return _finish(gbuffer, albedo * shade)


def shade_custom(gbuffer: GBuffer, fn: Callable[[GBuffer], Any]) -> ShadedLayer:
    """Any differentiable per-pixel function ``fn(gbuffer) -> (K, H, W, 4)``
    premultiplied RGBA (or ``(..., 3)`` opaque RGB)."""
    out = fn(gbuffer)
    v = value(out)
    bad = ~np.all(np.isfinite(v), axis=-1) & gbuffer.valid
    if np.any(bad):
        k, y, x = (int(i) for i in np.argwhere(bad)[0])
        raise EvaluationDomainError(f"shader produced a non-finite value at pixel (x={x}, y={y}), layer {k}")
    if v.shape[-1] == 3:
        return _finish(gbuffer, out)
    if v.shape[-1] != 4:
        raise ValueError("shader must return RGB or RGBA per pixel")
    mask = np.broadcast_to(gbuffer.valid[..., None], v.shape)
    return ShadedLayer(gbuffer.valid, ad.where(mask, out, 0.0))
