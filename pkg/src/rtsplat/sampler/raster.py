"""Non-differentiable triangle rasterization with depth peeling.

Triangles are expanded into candidate (triangle, pixel) fragments over
their screen bounding boxes, tested against the three edge functions at
pixel centres (top-left fill rule on exact ties), and peeled into ``K``
depth-ordered layers.  All arithmetic is plain float64 numpy.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..scene import Camera

#: Next layer must be deeper than the previous one by more than this.
PEEL_EPSILON = 1e-6
_MAX_FRAGMENTS_PER_CHUNK = 1 << 21


@dataclass
class Fragments:
    """Per-pixel, per-layer rasterization result (layers ``K`` first)."""

    valid: np.ndarray  # (K, H, W) bool
    face: np.ndarray  # (K, H, W) int, -1 where invalid
    bary: np.ndarray  # (K, H, W, 3) perspective-correct
    depth: np.ndarray  # (K, H, W) normalised depth, 0 where invalid


def empty_fragments(layers: int, height: int, width: int) -> Fragments:
    return Fragments(
        valid=np.zeros((layers, height, width), bool),
        face=np.full((layers, height, width), -1, np.int64),
        bary=np.zeros((layers, height, width, 3)),
        depth=np.zeros((layers, height, width)),
    )


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _top_left(ax, ay, bx, by):
    # for positive-area triangles in y-down screen space, left edges run
    # upwards and top edges run right; antisymmetric under edge reversal,
    # so a shared edge owns a tie exactly once
    dx = bx - ax
    dy = by - ay
    return (dy < 0) | ((dy == 0) & (dx > 0))


def _chunk_fragments(job):
    """Fragments for one contiguous block of triangles."""
    fid, xs, ys, inv_d, x0, x1, y0, y1, width, z_scale, inv_near = job
    nx = x1 - x0 + 1
    ny = y1 - y0 + 1
    counts = nx * ny
    total = int(counts.sum())
    if total == 0:
        return None
    rep = np.repeat(np.arange(len(fid)), counts)
    start = np.repeat(np.cumsum(counts) - counts, counts)
    local = np.arange(total) - start
    px = (x0[rep] + local % nx[rep]).astype(np.float64)
    py = (y0[rep] + local // nx[rep]).astype(np.float64)

    ax, bx, cx = xs[rep, 0], xs[rep, 1], xs[rep, 2]
    ay, by, cy = ys[rep, 0], ys[rep, 1], ys[rep, 2]
    w0 = _edge(bx, by, cx, cy, px, py)
    w1 = _edge(cx, cy, ax, ay, px, py)
    w2 = _edge(ax, ay, bx, by, px, py)
    inside = (
        ((w0 > 0) | ((w0 == 0) & _top_left(bx, by, cx, cy)))
        & ((w1 > 0) | ((w1 == 0) & _top_left(cx, cy, ax, ay)))
        & ((w2 > 0) | ((w2 == 0) & _top_left(ax, ay, bx, by)))
    )
    if not inside.any():
        return None
    rep = rep[inside]
    area = _edge(ax[inside], ay[inside], bx[inside], by[inside], cx[inside], cy[inside])
    lam = np.stack([w0[inside], w1[inside], w2[inside]], axis=1) / area[:, None]
    persp = lam * inv_d[rep]
    inv_depth = persp.sum(axis=1)
    bary = persp / inv_depth[:, None]
    z = (inv_near - inv_depth) * z_scale
    keep = (z >= 0.0) & (z <= 1.0)
    pix = py[inside].astype(np.int64) * width + px[inside].astype(np.int64)
    return fid[rep][keep], pix[keep], z[keep], bary[keep]


def rasterize_camera_space(
    points_cam: np.ndarray,
    faces: np.ndarray,
    camera: Camera,
    layers: int,
    workers: int = 1,
    cull_backfaces: bool = False,
) -> Fragments:
    """Depth-peel triangles given in camera space.

    Triangles with a vertex at or behind the near plane and zero-area
    (degenerate) screen triangles are skipped.  Back faces (winding
    clockwise as seen from the camera) are kept unless ``cull_backfaces``.
    """
    if layers < 1:
        raise ValueError("need at least one layer")
    H, W = camera.height, camera.width
    out = empty_fragments(layers, H, W)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(faces) == 0:
        return out
    pts = np.asarray(points_cam, dtype=np.float64)
    d = pts[:, 2]
    tri_d = d[faces]
    front = np.all(tri_d > camera.near, axis=1)
    if cull_backfaces:
        a, b, c = pts[faces[:, 0]], pts[faces[:, 1]], pts[faces[:, 2]]
        front &= np.einsum("ij,ij->i", np.cross(b - a, c - a), a) < 0
    faces = faces[front]
    fid_all = np.nonzero(front)[0]
    if len(faces) == 0:
        return out

    f = camera.focal
    cx, cy = camera.principal_point
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = f * pts[:, 0] / d + cx
        sy = f * pts[:, 1] / d + cy
    xs = sx[faces]
    ys = sy[faces]
    area = _edge(xs[:, 0], ys[:, 0], xs[:, 1], ys[:, 1], xs[:, 2], ys[:, 2])
    # orient every triangle counter-clockwise in the edge-function sense
    flip = area < 0
    order = np.where(flip[:, None], [0, 2, 1], [0, 1, 2])
    xs = np.take_along_axis(xs, order, 1)
    ys = np.take_along_axis(ys, order, 1)
    inv_d = np.take_along_axis(1.0 / tri_d[front], order, 1)

    x0 = np.maximum(np.ceil(xs.min(1)), 0).astype(np.int64)
    x1 = np.minimum(np.floor(xs.max(1)), W - 1).astype(np.int64)
    y0 = np.maximum(np.ceil(ys.min(1)), 0).astype(np.int64)
    y1 = np.minimum(np.floor(ys.max(1)), H - 1).astype(np.int64)
    live = (area != 0) & (x1 >= x0) & (y1 >= y0)
    idx = np.nonzero(live)[0]
    if len(idx) == 0:
        return out

    counts = (x1[idx] - x0[idx] + 1) * (y1[idx] - y0[idx] + 1)
    cum = np.cumsum(counts)
    cuts = np.searchsorted(cum, np.arange(_MAX_FRAGMENTS_PER_CHUNK, cum[-1], _MAX_FRAGMENTS_PER_CHUNK))
    bounds = np.unique(np.concatenate([[0], cuts, [len(idx)]]))

    z_scale = 1.0 / (1.0 / camera.near - 1.0 / camera.far)
    inv_near = 1.0 / camera.near
    jobs = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        sel = idx[a:b]
        jobs.append(
            (fid_all[sel], xs[sel], ys[sel], inv_d[sel], x0[sel], x1[sel], y0[sel], y1[sel], W, z_scale, inv_near)
        )
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_chunk_fragments, jobs))
    else:
        results = [_chunk_fragments(j) for j in jobs]
    results = [r for r in results if r is not None]
    if not results:
        return out
    fid = np.concatenate([r[0] for r in results])
    pix = np.concatenate([r[1] for r in results])
    z = np.concatenate([r[2] for r in results])
    bary_sorted = np.concatenate([r[3] for r in results])
    flip_of = np.zeros(len(front), bool)
    flip_of[fid_all] = flip
    # undo the orientation swap so bary[i] belongs to faces[fid, i]
    swap = flip_of[fid]
    bary_sorted[swap] = bary_sorted[swap][:, [0, 2, 1]]

    order = np.lexsort((fid, z, pix))
    fid, pix, z, bary = fid[order], pix[order], z[order], bary_sorted[order]
    _peel(out, fid, pix, z, bary, layers, H * W)
    return out


def _peel(out: Fragments, fid, pix, z, bary, layers: int, npix: int) -> None:
    """Fill ``out`` with the ``layers`` nearest distinct depths per pixel.

    Fragments must be sorted by (pixel, depth, face)."""
    valid = out.valid.reshape(layers, npix)
    face = out.face.reshape(layers, npix)
    depth = out.depth.reshape(layers, npix)
    bary_out = out.bary.reshape(layers, npix, 3)
    last = np.full(npix, -np.inf)
    for k in range(layers):
        mask = z > last[pix] + PEEL_EPSILON
        if not mask.any():
            break
        cand = np.nonzero(mask)[0]
        first_pix, first = np.unique(pix[cand], return_index=True)
        sel = cand[first]
        valid[k, first_pix] = True
        face[k, first_pix] = fid[sel]
        depth[k, first_pix] = z[sel]
        bary_out[k, first_pix] = bary[sel]
        last[first_pix] = z[sel]
        # only pixels that produced a layer can produce the next one
        pix_ok = np.zeros(npix, bool)
        pix_ok[first_pix] = True
        alive = pix_ok[pix]
        fid, pix, z, bary = fid[alive], pix[alive], z[alive], bary[alive]
