"""End-to-end rendering: sample -> evaluate -> shade -> splat."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import value
from .evaluator import GBuffer, PositionBuffer, build_position_buffer, evaluate
from .sampler import (
    SampleBuffer,
    rasterize_implicit,
    rasterize_mesh,
    rasterize_spline,
    sample_positions_for_pose,
)
from .scene import BSplineSurface, Camera, ImplicitGrid, TriangleMesh
from .shading import ShadedLayer, shade_silhouette
from .splat import composite_background, splat_layer_single, splat_multilayer

Shader = Callable[[GBuffer], ShadedLayer]


def sample(
    surface,
    camera: Camera,
    pose=None,
    layers: int = 2,
    workers: int = 1,
    fast_pose: bool = False,
    cull_backfaces: bool = False,
) -> SampleBuffer:
    """Run the non-differentiable sampler that matches ``surface``.

    ``cull_backfaces`` only affects triangle meshes.
    """
    if isinstance(surface, TriangleMesh):
        if fast_pose:
            return sample_positions_for_pose(surface, camera, pose, layers, workers, cull_backfaces)
        return rasterize_mesh(surface, camera, pose, layers, workers, cull_backfaces)
    if fast_pose:
        raise ValueError("the pose-only fast path needs a triangle mesh")
    if isinstance(surface, BSplineSurface):
        return rasterize_spline(surface, camera, pose, layers, workers)
    if isinstance(surface, ImplicitGrid):
        return rasterize_implicit(surface, camera, pose, layers, workers)
    raise TypeError(f"cannot sample {type(surface).__name__}")


@dataclass
class Frame:
    image: Any  # (H, W, 4) premultiplied
    samples: SampleBuffer
    gbuffer: GBuffer
    colors: ShadedLayer
    positions: PositionBuffer


def shade_and_splat(
    surface,
    samples: SampleBuffer,
    camera: Camera,
    pose=None,
    shader: Optional[Shader] = None,
    background=None,
    mode: str = "multi",
) -> Frame:
    """Differentiable stage for already-sampled parameters.

    ``mode`` is ``multi`` (depth-aware splatting of every layer), ``single``
    (first layer only) or ``none`` (no splatting: the shaded first layer).
    """
    shader = shader or shade_silhouette
    gbuffer = evaluate(surface, samples)
    positions = build_position_buffer(gbuffer, camera, pose)
    gbuffer.valid = positions.valid
    colors = shader(gbuffer)
    if mode == "multi":
        image = splat_multilayer(colors, positions)
    elif mode == "single":
        first = ShadedLayer(colors.valid[:1], colors.rgba[:1])
        image = splat_layer_single(first, PositionBuffer(positions.valid[:1], positions.screen[:1]))
    elif mode == "none":
        image = colors.rgba[0]
    else:
        raise ValueError(f"unknown splat mode '{mode}'")
    if background is not None:
        image = composite_background(image, background)
    return Frame(image, samples, gbuffer, colors, positions)


def render(
    surface,
    camera: Camera,
    pose=None,
    shader: Optional[Shader] = None,
    layers: int = 2,
    background=None,
    mode: str = "multi",
    workers: int = 1,
    fast_pose: bool = False,
    cull_backfaces: bool = False,
) -> Frame:
    samples = sample(surface, camera, None if pose is None else value(pose), layers, workers, fast_pose, cull_backfaces)
    return shade_and_splat(surface, samples, camera, pose, shader, background, mode)


def render_scene(
    parts,
    camera: Camera,
    layers: int = 2,
    background=None,
    mode: str = "multi",
    workers: int = 1,
    cull_backfaces: bool = False,
):
    """Render several objects together: each part is ``(surface, pose, shader)``.

    Parts are sampled jointly by merging their layers per pixel in depth
    order, so occlusion between objects is handled by the splatting stage.
    """
    frames = [render(s, camera, p, sh, layers, None, "none", workers, False, cull_backfaces) for s, p, sh in parts]
    if len(frames) == 1:
        colors, positions = frames[0].colors, frames[0].positions
    else:
        colors, positions = merge_layers(frames, layers)
    if mode == "multi":
        image = splat_multilayer(colors, positions)
    elif mode == "single":
        image = splat_layer_single(
            ShadedLayer(colors.valid[:1], colors.rgba[:1]), PositionBuffer(positions.valid[:1], positions.screen[:1])
        )
    elif mode == "none":
        image = colors.rgba[0]
    else:
        raise ValueError(f"unknown splat mode '{mode}'")
    if background is not None:
        image = composite_background(image, background)
    return image


def merge_layers(frames, layers: int):
    """Per pixel, keep the ``layers`` nearest samples over all frames."""
    valid = np.concatenate([f.positions.valid for f in frames])  # (sum K, H, W)
    depth = np.concatenate([f.positions.depth for f in frames])
    key = np.where(valid, depth, np.inf)
    order = np.argsort(key, axis=0, kind="stable")[:layers]  # (K, H, W)
    n, H, W = valid.shape
    flat = (order * H * W + np.arange(H * W).reshape(H, W)).reshape(-1)
    rgba = ad.reshape(ad.concatenate([f.colors.rgba for f in frames]), (n * H * W, 4))
    screen = ad.reshape(ad.concatenate([f.positions.screen for f in frames]), (n * H * W, 3))
    K = order.shape[0]
    sel_valid = np.take_along_axis(valid, order, 0)
    colors = ShadedLayer(sel_valid, ad.reshape(ad.take(rgba, flat), (K, H, W, 4)))
    positions = PositionBuffer(sel_valid, ad.reshape(ad.take(screen, flat), (K, H, W, 3)))
    return colors, positions


__all__ = ["Frame", "merge_layers", "render", "render_scene", "sample", "shade_and_splat"]
