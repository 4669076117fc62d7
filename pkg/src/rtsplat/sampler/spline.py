from __future__ import annotations

import logging

import numpy as np

from ..autodiff import value
from ..scene import BSplineSurface, Camera, bspline_weights, rigid_transform
from .buffers import SampleBuffer
from .raster import rasterize_camera_space

log = logging.getLogger(__name__)

#: Uniform subdivision cap (micro-quads per patch side).
MAX_SUBDIVISION = 64
_PROBE = 4


def evaluate_patches(surface: BSplineSurface, patch_ids: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Numeric surface points for patch ids with parameter grids ``u``, ``v``."""
    ctrl = value(surface.control).reshape(-1, 3)
    idx = surface.patch_indices(patch_ids)  # (P, 16)
    wu = bspline_weights(u)  # (..., 4)
    wv = bspline_weights(v)
    w = (wu[..., :, None] * wv[..., None, :]).reshape(u.shape + (16,))
    return np.einsum("p...k,pkc->p...c", w, ctrl[idx])


def _subdivision_levels(surface, camera, pose) -> np.ndarray:
    """Per-patch micro-quad count so projected edges stay under one pixel."""
    P = surface.num_patches
    t = np.linspace(0.0, 1.0, _PROBE + 1)
    uu, vv = np.meshgrid(t, t, indexing="ij")
    pts = evaluate_patches(surface, np.arange(P), np.broadcast_to(uu, (P,) + uu.shape), np.broadcast_to(vv, (P,) + vv.shape))
    cam = value(camera.to_camera(value(rigid_transform(pts, pose))))
    d = cam[..., 2]
    behind = np.all(d <= camera.near, axis=(1, 2))
    partial = np.any(d <= camera.near, axis=(1, 2)) & ~behind
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = camera.focal * cam[..., 0] / d
        sy = camera.focal * cam[..., 1] / d
    du = np.hypot(np.diff(sx, axis=1), np.diff(sy, axis=1)).max(axis=(1, 2))
    dv = np.hypot(np.diff(sx, axis=2), np.diff(sy, axis=2)).max(axis=(1, 2))
    need = np.ceil(np.maximum(du, dv) * _PROBE)
    need = np.where(partial | ~np.isfinite(need), MAX_SUBDIVISION + 1, need)
    if np.any(need[~behind] > MAX_SUBDIVISION):
        log.warning(
            "spline subdivision capped at %d; %d patch(es) tessellated coarser than 1 px",
            MAX_SUBDIVISION,
            int(np.sum(need[~behind] > MAX_SUBDIVISION)),
        )
    levels = np.clip(need, 1, MAX_SUBDIVISION).astype(np.int64)
    levels[behind] = 0
    return levels


def tessellate(surface: BSplineSurface, levels: np.ndarray):
    """Micro-mesh: positions, per-vertex (u, v), faces and face-to-patch map."""
    positions, uvs, faces, owner = [], [], [], []
    base = 0
    for s in np.unique(levels[levels > 0]):
        patches = np.nonzero(levels == s)[0]
        t = np.arange(s + 1) / s
        uu, vv = np.meshgrid(t, t, indexing="ij")
        n = len(patches)
        pts = evaluate_patches(surface, patches, np.broadcast_to(uu, (n,) + uu.shape), np.broadcast_to(vv, (n,) + vv.shape))
        positions.append(pts.reshape(-1, 3))
        uvs.append(np.tile(np.stack([uu, vv], -1).reshape(-1, 2), (n, 1)))
        i, j = np.meshgrid(np.arange(s), np.arange(s), indexing="ij")
        a = (i * (s + 1) + j).ravel()
        b = a + (s + 1)
        quad = np.concatenate([np.stack([a, b, a + 1], 1), np.stack([a + 1, b, b + 1], 1)])
        offs = base + np.arange(n)[:, None, None] * (s + 1) ** 2
        faces.append((quad[None] + offs).reshape(-1, 3))
        owner.append(np.repeat(patches, len(quad)))
        base += n * (s + 1) ** 2
    if not positions:
        return np.zeros((0, 3)), np.zeros((0, 2)), np.zeros((0, 3), np.int64), np.zeros(0, np.int64)
    return np.concatenate(positions), np.concatenate(uvs), np.concatenate(faces), np.concatenate(owner)


def rasterize_spline(surface: BSplineSurface, camera: Camera, pose=None, layers: int = 2, workers: int = 1) -> SampleBuffer:
    """Per pixel, the front-most hits as (patch id, u, v).

    The patches are tessellated and rasterized internally; only the patch
    parameters leave this function.
    """
    pose_v = None if pose is None else value(pose)
    levels = _subdivision_levels(surface, camera, pose_v)
    pts, uvs, faces, owner = tessellate(surface, levels)
    cam = value(camera.to_camera(value(rigid_transform(pts, pose_v)))) if len(pts) else pts
    frags = rasterize_camera_space(cam, faces, camera, layers, workers)
    face = np.where(frags.valid, frags.face, 0)
    if len(faces):
        uv = np.einsum("khwi,khwij->khwj", frags.bary, uvs[faces[face]])
        patch = np.where(frags.valid, owner[face], -1)
    else:
        uv = np.zeros(frags.valid.shape + (2,))
        patch = np.full(frags.valid.shape, -1)
    uv = np.clip(uv, 0.0, 1.0)
    uv[~frags.valid] = 0.0
    return SampleBuffer("spline", frags.valid, frags.depth, patch=patch, uv=uv)
