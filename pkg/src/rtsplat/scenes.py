"""Procedural test geometry."""
from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull

from . import autodiff as ad
from .scene import BSplineSurface, TriangleMesh, clamp_rows


def quad(size: float = 1.0, z: float = 0.0) -> TriangleMesh:
    """Axis-aligned square in the plane ``z``, centred on the z axis."""
    h = 0.5 * size
    v = np.array([[-h, -h, z], [h, -h, z], [h, h, z], [-h, h, z]])
    return TriangleMesh(v, np.array([[0, 1, 2], [0, 2, 3]]))


def box(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    s = 0.5 * np.asarray(size, dtype=np.float64)
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64)
    v = corners * s + np.asarray(center, dtype=np.float64)
    hull = ConvexHull(v)
    return TriangleMesh(v, _outward(v, hull.simplices))


def _outward(v: np.ndarray, faces: np.ndarray) -> np.ndarray:
    c = v.mean(axis=0)
    f = faces.copy()
    n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    flip = np.einsum("ij,ij->i", n, v[f[:, 0]] - c) < 0
    f[flip] = f[flip][:, [0, 2, 1]]
    return f


def icosphere(subdivisions: int = 2, radius: float = 1.0) -> TriangleMesh:
    t = (1.0 + 5.0**0.5) / 2.0
    v = np.array(
        [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
         [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]],
        dtype=np.float64,
    )
    f = np.array(
        [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
         [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
         [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    )
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(subdivisions):
        v, f = _midpoint_subdivide(v, f)
        v /= np.linalg.norm(v, axis=1, keepdims=True)
    return TriangleMesh(v * radius, f)


def _midpoint_subdivide(v: np.ndarray, f: np.ndarray):
    """Split every triangle into four; shared edges share their midpoint."""
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    key = np.sort(edges, axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    mids = 0.5 * (v[uniq[:, 0]] + v[uniq[:, 1]])
    m = inv.reshape(3, -1).T + len(v)  # midpoint ids of edges 01, 12, 20
    a, b, c = f[:, 0], f[:, 1], f[:, 2]
    ab, bc, ca = m[:, 0], m[:, 1], m[:, 2]
    nf = np.concatenate(
        [np.stack([a, ab, ca], 1), np.stack([ab, b, bc], 1), np.stack([ca, bc, c], 1), np.stack([ab, bc, ca], 1)]
    )
    return np.concatenate([v, mids]), nf


def subdivide(mesh: TriangleMesh, times: int = 1) -> TriangleMesh:
    """Flat midpoint subdivision: 4x the triangles, identical surface."""
    v, f = np.asarray(mesh.vertices, dtype=np.float64), mesh.faces
    for _ in range(times):
        v, f = _midpoint_subdivide(v, f)
    return TriangleMesh(v, f)


def subdivide_to(mesh: TriangleMesh, n: int) -> TriangleMesh:
    """Split each triangle into ``n * n`` coplanar triangles (same surface)."""
    v = np.asarray(mesh.vertices, dtype=np.float64)
    # barycentric lattice i + j + k = n per triangle
    ij = np.array([(i, j) for i in range(n + 1) for j in range(n + 1 - i)])
    lookup = {tuple(p): k for k, p in enumerate(ij)}
    local = []
    for i in range(n):
        for j in range(n - i):
            local.append([lookup[(i, j)], lookup[(i + 1, j)], lookup[(i, j + 1)]])
            if j < n - i - 1:
                local.append([lookup[(i + 1, j)], lookup[(i + 1, j + 1)], lookup[(i, j + 1)]])
    local = np.array(local)
    w = np.stack([n - ij.sum(1), ij[:, 0], ij[:, 1]], 1) / n
    tri = v[mesh.faces]  # (F, 3, 3)
    pts = np.einsum("pk,fkc->fpc", w, tri)
    verts = pts.reshape(-1, 3)
    faces = (local[None] + len(ij) * np.arange(len(tri))[:, None, None]).reshape(-1, 3)
    return TriangleMesh(verts, faces)


def random_convex_mesh(rng: np.random.Generator, points: int = 64, radii=(1.0, 0.7, 0.5)) -> TriangleMesh:
    """Convex hull of random points on an ellipsoid (asymmetric on purpose)."""
    d = rng.normal(size=(points, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    v = d * np.asarray(radii, dtype=np.float64)
    hull = ConvexHull(v)
    used = np.unique(hull.simplices)
    remap = np.full(len(v), -1)
    remap[used] = np.arange(len(used))
    v = v[used]
    return TriangleMesh(v, _outward(v, remap[hull.simplices]))


def revolution_control(radii, heights, segments: int = 8) -> np.ndarray:
    """Control grid ``(rows, segments, 3)`` of a surface of revolution about z."""
    heights = np.asarray(heights, dtype=np.float64)
    phi = 2.0 * np.pi * np.arange(segments) / segments
    ring = np.stack([np.cos(phi), np.sin(phi), np.zeros_like(phi)], -1)
    return ad.reshape(radii, (-1, 1, 1)) * ring[None] + heights[:, None, None] * np.array([0.0, 0.0, 1.0])


def revolution_surface(radii, heights, segments: int = 8) -> BSplineSurface:
    """Profile rows replicated at both ends so the surface reaches them."""
    ctrl = clamp_rows(revolution_control(radii, heights, segments), repeats=2, axis=0)
    return BSplineSurface(ctrl, (False, True))
