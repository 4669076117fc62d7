"""Isosurface sampling: Marching Cubes triangles rasterized into 9-D
per-pixel parameters (six lattice indices for three crossing edges plus
three barycentrics)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import value
from ..scene import Camera, ImplicitGrid, rigid_transform
from ._mc_table import CORNER_OFFSETS, EDGE_CORNERS, TRI_TABLE
from .buffers import SampleBuffer
from .raster import rasterize_camera_space

#: Degenerate-cell threshold relative to the lattice value range.
DEGENERATE_FRACTION = 1e-4


@dataclass
class IsoTriangles:
    edges: np.ndarray  # (T, 3, 2) flat lattice indices of each vertex's edge
    positions: np.ndarray  # (T, 3, 3) vertex positions
    eps: float


def degenerate_threshold(values: np.ndarray) -> float:
    values = np.asarray(values)
    return DEGENERATE_FRACTION * float(values.max() - values.min())


def marching_cubes(values: np.ndarray, iso: float, origin=None, spacing=None, eps=None) -> IsoTriangles:
    """Triangulate ``values == iso`` with the classic 256-case table.

    Cells where any crossed edge has ``|f(a) - f(b)| < eps`` are dropped.
    """
    f = np.asarray(values, dtype=np.float64)
    X, Y, Z = f.shape
    origin = np.zeros(3) if origin is None else np.asarray(origin, dtype=np.float64)
    spacing = np.ones(3) if spacing is None else np.broadcast_to(np.asarray(spacing, dtype=np.float64), (3,))
    eps = degenerate_threshold(f) if eps is None else float(eps)

    below = f < iso
    cell = np.stack(np.meshgrid(np.arange(X - 1), np.arange(Y - 1), np.arange(Z - 1), indexing="ij"), -1).reshape(-1, 3)
    corners = cell[:, None, :] + CORNER_OFFSETS[None]  # (C, 8, 3)
    flat = (corners[..., 0] * Y + corners[..., 1]) * Z + corners[..., 2]
    inside = below.ravel()[flat]
    code = (inside * (1 << np.arange(8))).sum(axis=1)
    active = (code != 0) & (code != 255)
    flat, code, inside = flat[active], code[active], inside[active]
    if len(code) == 0:
        return IsoTriangles(np.zeros((0, 3, 2), np.int64), np.zeros((0, 3, 3)), eps)

    fv = f.ravel()[flat]  # (C, 8)
    ea, eb = EDGE_CORNERS[:, 0], EDGE_CORNERS[:, 1]
    crossed = inside[:, ea] != inside[:, eb]
    flat_delta = np.abs(fv[:, ea] - fv[:, eb])
    degenerate = np.any(crossed & (flat_delta < eps), axis=1)
    flat, code, fv = flat[~degenerate], code[~degenerate], fv[~degenerate]

    rows = TRI_TABLE[code][:, :15].reshape(-1, 5, 3)
    has = rows[:, :, 0] >= 0
    cell_of = np.repeat(np.arange(len(code)), has.sum(axis=1))
    tri_edges = rows[has]  # (T, 3)
    ca = EDGE_CORNERS[tri_edges, 0]
    cb = EDGE_CORNERS[tri_edges, 1]
    ia = np.take_along_axis(flat[cell_of], ca, 1)
    ib = np.take_along_axis(flat[cell_of], cb, 1)
    fa = np.take_along_axis(fv[cell_of], ca, 1)
    fb = np.take_along_axis(fv[cell_of], cb, 1)
    alpha = (iso - fa) / (fb - fa)
    pa = origin + spacing * np.stack(np.unravel_index(ia, (X, Y, Z)), -1)
    pb = origin + spacing * np.stack(np.unravel_index(ib, (X, Y, Z)), -1)
    pos = pa + alpha[..., None] * (pb - pa)
    return IsoTriangles(np.stack([ia, ib], -1), pos, eps)


def rasterize_implicit(grid: ImplicitGrid, camera: Camera, pose=None, layers: int = 2, workers: int = 1) -> SampleBuffer:
    """Per pixel, the front-most isosurface hits as 9-D parameters."""
    tris = marching_cubes(value(grid.values), grid.iso, grid.origin, grid.spacing)
    T = len(tris.edges)
    pts = tris.positions.reshape(-1, 3)
    if T:
        pts = value(camera.to_camera(value(rigid_transform(pts, None if pose is None else value(pose)))))
    faces = np.arange(3 * T).reshape(-1, 3)
    frags = rasterize_camera_space(pts, faces, camera, layers, workers)
    face = np.where(frags.valid, frags.face, 0)
    if T:
        lattice = tris.edges[face].reshape(face.shape + (6,))
    else:
        lattice = np.zeros(face.shape + (6,), np.int64)
    lattice[~frags.valid] = 0
    return SampleBuffer(
        "implicit", frags.valid, frags.depth, lattice=lattice, bary=frags.bary, degenerate_eps=tris.eps
    )
