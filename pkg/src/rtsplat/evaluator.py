"""Differentiable evaluation: surface attributes re-derived from scene
parameters at the sampled (constant) surface parameters, then projected to
screen-space splat positions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from . import autodiff as ad
from .autodiff import value
from .sampler import SampleBuffer
from .scene import (
    BSPLINE_BASIS,
    BSplineSurface,
    Camera,
    ImplicitGrid,
    StructureError,
    TriangleMesh,
    bspline_weights,
    project,
    rigid_transform,
)


@dataclass
class GBuffer:
    """Interpolated attributes, arrays shaped ``(K, H, W, C)``."""

    valid: np.ndarray  # (K, H, W)
    position: Any
    normal: Any = None
    uv: Any = None
    color: Any = None

    @property
    def layers(self) -> int:
        return self.valid.shape[0]

    @property
    def shape(self) -> tuple:
        return self.valid.shape


@dataclass
class PositionBuffer:
    """Screen-space splat centres ``(K, H, W, 3)``: x, y in pixels, z normalised."""

    valid: np.ndarray
    screen: Any

    @property
    def layers(self) -> int:
        return self.valid.shape[0]

    @property
    def depth(self) -> np.ndarray:
        """Numeric depth, for layer pairing only."""
        return value(self.screen)[..., 2]


def _interpolate(attr, corner_ids: np.ndarray, weights: np.ndarray):
    """``sum_i weights[..., i] * attr[corner_ids[..., i]]``."""
    C = np.shape(value(attr))[-1]
    rows = ad.take(attr, corner_ids.reshape(-1))
    rows = ad.reshape(rows, corner_ids.shape + (C,))
    return ad.sum(rows * weights[..., None], axis=-2)


def _require(samples: SampleBuffer, kind: str) -> None:
    if samples.kind != kind:
        raise ValueError(f"expected a '{kind}' sample buffer, got '{samples.kind}'")


def _normalize(v):
    return v / ad.reshape(ad.norm(v) + 1e-12, np.shape(value(v))[:-1] + (1,))


def evaluate_mesh(mesh: TriangleMesh, samples: SampleBuffer) -> GBuffer:
    """Barycentric interpolation of every attribute the mesh carries."""
    _require(samples, "mesh")
    valid = samples.valid
    face = np.where(valid, samples.face, 0)
    if np.any(face[valid] >= mesh.num_faces) or np.any(face[valid] < 0):
        raise StructureError("sample references a triangle the mesh does not have")
    if mesh.num_faces == 0:
        zero = np.zeros(valid.shape + (3,))
        return GBuffer(valid, zero)
    corners = mesh.faces[face]  # (K, H, W, 3)
    bary = np.where(valid[..., None], samples.bary, 0.0)
    out = GBuffer(valid, _interpolate(mesh.vertices, corners, bary))
    if mesh.normals is not None:
        out.normal = _normalize(_interpolate(mesh.normals, corners, bary))
    if mesh.uvs is not None:
        out.uv = _interpolate(mesh.uvs, corners, bary)
    if mesh.colors is not None:
        out.color = _interpolate(mesh.colors, corners, bary)
    return out


def _cross(a, b):
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return ad.stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def evaluate_spline(surface: BSplineSurface, samples: SampleBuffer, normals: bool = False) -> GBuffer:
    """Tensor-product basis at the sampled ``(u, v)`` applied to the 4x4
    control points of each sample's patch."""
    _require(samples, "spline")
    valid = samples.valid
    patch = np.where(valid, samples.patch, 0)
    if np.any(patch[valid] >= surface.num_patches) or np.any(patch[valid] < 0):
        raise StructureError("sample references a patch the surface does not have")
    uv = np.where(valid[..., None], samples.uv, 0.0)
    idx = surface.patch_indices(patch)  # (K, H, W, 16)
    wu = bspline_weights(uv[..., 0])
    wv = bspline_weights(uv[..., 1])
    w = (wu[..., :, None] * wv[..., None, :]).reshape(valid.shape + (16,))
    ctrl = ad.reshape(surface.control, (-1, 3))
    out = GBuffer(valid, _interpolate(ctrl, idx, w))
    if normals:
        du = _powers_deriv(uv[..., 0]) @ BSPLINE_BASIS
        dv = _powers_deriv(uv[..., 1]) @ BSPLINE_BASIS
        tu = _interpolate(ctrl, idx, (du[..., :, None] * wv[..., None, :]).reshape(w.shape))
        tv = _interpolate(ctrl, idx, (wu[..., :, None] * dv[..., None, :]).reshape(w.shape))
        out.normal = _normalize(_cross(tu, tv))
    return out


def _powers_deriv(t):
    return np.stack([np.zeros_like(t), np.ones_like(t), 2.0 * t, 3.0 * t * t], axis=-1)


def evaluate_implicit(grid: ImplicitGrid, samples: SampleBuffer) -> GBuffer:
    """Edge crossings re-interpolated from the current lattice values.

    Samples whose edges have become nearly flat (``|f_b - f_a|`` below the
    sampling threshold) are dropped for this evaluation.
    """
    _require(samples, "implicit")
    valid = samples.valid.copy()
    lattice = np.where(valid[..., None], samples.lattice, 0)
    n = int(np.prod(grid.shape))
    if np.any(lattice[valid] >= n) or np.any(lattice[valid] < 0):
        raise StructureError("sample references a lattice point the grid does not have")
    f = ad.reshape(grid.values, (-1, 1))
    ia = lattice[..., 0::2]  # (K, H, W, 3)
    ib = lattice[..., 1::2]
    fa = ad.reshape(ad.take(f, ia.reshape(-1)), ia.shape)
    fb = ad.reshape(ad.take(f, ib.reshape(-1)), ib.shape)
    delta = fb - fa
    flat = np.abs(value(delta)) < max(samples.degenerate_eps, np.finfo(float).tiny)
    valid &= ~np.any(flat, axis=-1)
    safe = ad.where(flat | ~valid[..., None], 1.0, delta)
    alpha = ad.where(valid[..., None], (grid.iso - fa) / safe, 0.0)
    pa = grid.lattice_positions(ia)  # (K, H, W, 3, 3) numeric
    pb = grid.lattice_positions(ib)
    edge_pts = pa + ad.reshape(alpha, ia.shape + (1,)) * (pb - pa)
    beta = np.where(valid[..., None], samples.bary, 0.0)
    position = ad.sum(edge_pts * beta[..., None], axis=-2)
    return GBuffer(valid, position)


def evaluate_positions(samples: SampleBuffer) -> GBuffer:
    """Pose-only fast path: the stored positions are constants."""
    _require(samples, "position")
    return GBuffer(samples.valid, np.where(samples.valid[..., None], samples.position, 0.0))


def evaluate(surface, samples: SampleBuffer, **kwargs) -> GBuffer:
    if samples.kind == "position":
        return evaluate_positions(samples)
    if isinstance(surface, TriangleMesh):
        return evaluate_mesh(surface, samples)
    if isinstance(surface, BSplineSurface):
        return evaluate_spline(surface, samples, **kwargs)
    if isinstance(surface, ImplicitGrid):
        return evaluate_implicit(surface, samples)
    raise TypeError(f"cannot evaluate {type(surface).__name__}")


def build_position_buffer(gbuffer: GBuffer, camera: Camera, pose=None) -> PositionBuffer:
    """Object-space positions -> posed world space -> screen space."""
    world = rigid_transform(gbuffer.position, pose)
    screen, in_front = project(world, camera)
    valid = gbuffer.valid & in_front
    return PositionBuffer(valid, screen)


__all__ = [
    "GBuffer",
    "PositionBuffer",
    "build_position_buffer",
    "evaluate",
    "evaluate_implicit",
    "evaluate_mesh",
    "evaluate_positions",
    "evaluate_spline",
]
