import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rtsplat.autodiff import value
from rtsplat.evaluator import evaluate_mesh, evaluate_spline
from rtsplat.sampler import (
    PEEL_EPSILON,
    marching_cubes,
    rasterize_implicit,
    rasterize_mesh,
    rasterize_spline,
    sample_positions_for_pose,
)
from rtsplat.scene import BSplineSurface, Camera, ImplicitGrid, SphereUnion, TriangleMesh, bspline_weights, field_to_grid
from rtsplat.scenes import icosphere, quad, revolution_surface


def camera(size=32, fov=60.0):
    return Camera(width=size, height=size, fov_y=np.radians(fov))


def pixel_rays(cam):
    xs, ys = cam.pixel_grid()
    cx, cy = cam.principal_point
    return np.stack([(xs - cx) / cam.focal, (ys - cy) / cam.focal, np.ones_like(xs)], -1)


def ray_cast(vertices, faces, cam, layers):
    """Brute force: intersect every pixel ray with every triangle, sort by depth."""
    dirs = pixel_rays(cam)
    H, W = dirs.shape[:2]
    valid = np.zeros((layers, H, W), bool)
    face = np.full((layers, H, W), -1)
    bary = np.zeros((layers, H, W, 3))
    for j in range(H):
        for i in range(W):
            d = dirs[j, i]
            hits = []
            for t_id, (a, b, c) in enumerate(vertices[faces]):
                e1, e2 = b - a, c - a
                pvec = np.cross(d, e2)
                det = e1 @ pvec
                if abs(det) < 1e-14:
                    continue
                s = -a
                u = (s @ pvec) / det
                q = np.cross(s, e1)
                v = (d @ q) / det
                t = (e2 @ q) / det
                if u >= 0 and v >= 0 and u + v <= 1 and t > cam.near:
                    hits.append((cam.normalized_depth(t), t_id, (1 - u - v, u, v)))
            hits.sort()
            last = -np.inf
            k = 0
            for z, t_id, bc in hits:
                if k == layers:
                    break
                if z > last + PEEL_EPSILON:
                    valid[k, j, i] = True
                    face[k, j, i] = t_id
                    bary[k, j, i] = bc
                    last = z
                    k += 1
    return valid, face, bary


def random_triangles(rng, n):
    centers = np.stack([rng.uniform(-1, 1, n), rng.uniform(-1, 1, n), rng.uniform(2.5, 5.0, n)], -1)
    v = centers[:, None, :] + rng.normal(scale=0.6, size=(n, 3, 3))
    v[..., 2] = np.maximum(v[..., 2], 0.5)
    return v.reshape(-1, 3), np.arange(3 * n).reshape(n, 3)


# ---------------------------------------------------------------- meshes


@settings(max_examples=8)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_depth_peel_matches_brute_force(seed, layers):
    rng = np.random.default_rng(seed)
    v, f = random_triangles(rng, 6)
    cam = camera()
    s = rasterize_mesh(TriangleMesh(v, f), cam, layers=layers)
    valid, face, bary = ray_cast(v, f, cam, layers)
    assert np.array_equal(s.valid, valid)
    assert np.array_equal(np.where(s.valid, s.face, -1), face)
    assert np.allclose(s.bary[valid], bary[valid], atol=1e-7)


def test_full_viewport_triangle():
    cam = camera(16)
    tri = TriangleMesh(np.array([[-50.0, -50.0, 3.0], [50.0, -50.0, 3.0], [0.0, 100.0, 3.0]]), [[0, 1, 2]])
    s = rasterize_mesh(tri, cam, layers=2)
    assert s.valid[0].all() and np.all(s.face[0] == 0)
    assert not s.valid[1].any()


def test_pixel_at_vertex_has_unit_barycentric():
    cam = camera(16)
    # vertex 0 projects exactly onto pixel (4, 5) and is the corner between a
    # top and a left edge, so the top-left rule gives that pixel to it
    d = pixel_rays(cam)[5, 4] * 2.0
    tri = TriangleMesh(np.array([d, d + [3.0, 0.0, 0.0], d + [0.0, 3.0, 0.0]]), [[0, 1, 2]])
    s = rasterize_mesh(tri, cam, layers=1)
    assert s.valid[0, 5, 4]
    assert np.allclose(s.bary[0, 5, 4], [1.0, 0.0, 0.0], atol=1e-12)


def test_stacked_quads_peel_in_depth_order():
    cam = camera(24)
    near = quad(1.5, z=2.0)
    far = quad(1.5, z=3.0)
    both = TriangleMesh(np.concatenate([far.vertices, near.vertices]), np.concatenate([far.faces, near.faces + 4]))
    s = rasterize_mesh(both, cam, layers=2)
    covered = s.valid[1]
    assert covered.sum() > 50
    assert np.all(s.face[0][covered] >= 2) and np.all(s.face[1][covered] < 2)
    assert np.all(s.depth[1][covered] > s.depth[0][covered])


def test_layer_depths_strictly_increase_and_barycentrics_sum_to_one():
    s = rasterize_mesh(icosphere(2), Camera.look_at((0, 0, -3), (0, 0, 0), width=32, height=32, fov_y=0.9), layers=3)
    both = s.valid[1:] & s.valid[:-1]
    assert both.any()
    assert np.all(s.depth[1:][both] > s.depth[:-1][both])
    assert np.allclose(s.bary[s.valid].sum(-1), 1.0, atol=1e-5)
    assert np.all(s.bary[s.valid] >= -1e-12)
    assert not np.any(s.valid[1:] & ~s.valid[:-1])  # no gaps between layers


def test_invalid_layers_carry_no_parameters():
    s = rasterize_mesh(quad(0.5, z=2.0), camera(), layers=2)
    assert np.all(s.face[~s.valid] == -1) and np.all(s.bary[~s.valid] == 0.0) and np.all(s.depth[~s.valid] == 0.0)


def test_backface_culling_keeps_front_side_only():
    cam = Camera.look_at((0, 0, -3), (0, 0, 0), width=32, height=32, fov_y=0.9)
    sphere = icosphere(2)
    plain = rasterize_mesh(sphere, cam, layers=2)
    culled = rasterize_mesh(sphere, cam, layers=2, cull_backfaces=True)
    assert plain.valid[1].sum() > 0 and culled.valid[1].sum() == 0
    assert np.array_equal(plain.valid[0], culled.valid[0])
    assert np.array_equal(plain.face[0], culled.face[0])


def test_shared_edges_cover_each_pixel_once():
    cam = camera(16)
    # quad corners land exactly on pixel centres, so ties occur on every edge
    s = rasterize_mesh(quad(1.0, z=2.0), cam, layers=2)
    assert not s.valid[1].any()
    rows = np.flatnonzero(s.valid[0].any(axis=1))
    cols = np.flatnonzero(s.valid[0].any(axis=0))
    assert s.valid[0].sum() == len(rows) * len(cols)


def test_degenerate_triangle_skipped():
    cam = camera(16)
    line = TriangleMesh(np.array([[0.0, 0.0, 2.0], [0.5, 0.0, 2.0], [1.0, 0.0, 2.0]]), [[0, 1, 2]])
    assert not rasterize_mesh(line, cam).valid.any()


def test_rasterization_is_deterministic_across_workers(monkeypatch):
    monkeypatch.setattr("rtsplat.sampler.raster._MAX_FRAGMENTS_PER_CHUNK", 64)
    rng = np.random.default_rng(7)
    v, f = random_triangles(rng, 40)
    mesh = TriangleMesh(v, f)
    cam = camera(40)
    a = rasterize_mesh(mesh, cam, layers=3, workers=1)
    b = rasterize_mesh(mesh, cam, layers=3, workers=4)
    c = rasterize_mesh(mesh, cam, layers=3, workers=4)
    assert a.same_as(b) and b.same_as(c)


def test_perspective_correct_barycentrics():
    cam = camera(32)
    flat = quad(1.6, z=3.0)
    s = rasterize_mesh(flat, cam, layers=1)
    g = value(evaluate_mesh(flat, s).position)
    rays = pixel_rays(cam)
    # constant depth: every evaluated point is the ray hit at z = 3
    assert np.allclose(g[0][s.valid[0]], 3.0 * rays[s.valid[0]], atol=1e-9)
    tilted = TriangleMesh(np.array([[-2.0, -2.0, 2.0], [2.0, -2.0, 2.0], [2.0, 2.0, 5.0], [-2.0, 2.0, 5.0]]), [[0, 1, 2], [0, 2, 3]])
    t = rasterize_mesh(tilted, cam, layers=1)
    p = value(evaluate_mesh(tilted, t).position)[0][t.valid[0]]
    r = rays[t.valid[0]]
    # plane z = 3.5 + 0.75 y; ray point s*r hits it at s = 3.5 / (1 - 0.75 r_y)
    hit = (3.5 / (1.0 - 0.75 * r[:, 1]))[:, None] * r
    assert np.allclose(p, hit, atol=1e-4)
    # affine (screen-space) barycentrics would miss by far more than that
    assert np.abs(p - hit).max() < 1e-9


def test_fast_path_positions_match_evaluation():
    cam = Camera.look_at((0, 0, -3), (0, 0, 0), width=32, height=32, fov_y=0.9)
    mesh = icosphere(1)
    pose = np.array([0.1, -0.2, 0.05, 0.1, 0.0, 0.2])
    fast = sample_positions_for_pose(mesh, cam, pose, layers=2)
    full = rasterize_mesh(mesh, cam, pose, layers=2)
    assert np.array_equal(fast.valid, full.valid)
    ref = value(evaluate_mesh(mesh, full).position)
    assert np.allclose(fast.position[fast.valid], ref[full.valid], atol=1e-14)


def test_fast_path_buffer_is_pixel_bounded():
    cam = Camera.look_at((0, 0, -3), (0, 0, 0), width=24, height=24, fov_y=0.9)
    small = sample_positions_for_pose(icosphere(1), cam)
    large = sample_positions_for_pose(icosphere(3), cam)
    assert small.position.shape == large.position.shape == (2, 24, 24, 3)


def test_empty_mesh_gives_no_samples():
    empty = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), int))
    assert not sample_positions_for_pose(empty, camera()).valid.any()
    assert not rasterize_mesh(empty, camera()).valid.any()


# ---------------------------------------------------------------- splines


def test_flat_patch_uv_is_affine():
    cam = camera(32)
    g = np.linspace(-1.5, 1.5, 4)
    ctrl = np.stack(np.meshgrid(g, g, indexing="ij"), -1)
    ctrl = np.concatenate([ctrl, np.full((4, 4, 1), 3.0)], -1)
    surf = BSplineSurface(ctrl)
    s = rasterize_spline(surf, cam, layers=1)
    assert s.valid[0].sum() > 20
    pts = value(evaluate_spline(surf, s).position)[0]
    rays = pixel_rays(cam)
    # planar uniform grid: the surface is an affine image of (u, v), so the
    # sampled (u, v) must land exactly on the ray/plane intersection
    for j, i in [(13, 13), (16, 15), (18, 17)]:
        assert s.valid[0, j, i]
        assert np.allclose(pts[j, i], 3.0 * rays[j, i], atol=1e-9)
    # unit control spacing: the single patch spans x = -0.5 + u, y = -0.5 + v
    uv = s.uv[0][s.valid[0]]
    assert np.allclose(pts[s.valid[0]][:, :2], uv - 0.5, atol=1e-12)


def test_cylinder_silhouette_width():
    size = 64
    cam = Camera.look_at((0.0, -4.0, 1.0), (0.0, 0.0, 1.0), up=(0, 0, 1), width=size, height=size, fov_y=0.9)
    r = 0.6
    surf = revolution_surface(np.full(8, r), np.linspace(0, 2, 8))
    s = rasterize_spline(surf, cam, layers=1)
    row = size // 2
    # oracle: dense cross-section of the periodic spline at the same height,
    # projected with the closed-form pinhole model
    t = np.linspace(0, 1, 400, endpoint=False)
    phi = 2 * np.pi * np.arange(8) / 8
    ring = r * np.stack([np.cos(phi), np.sin(phi)], -1)
    curve = np.concatenate([bspline_weights(t) @ ring[[(k + m) % 8 for m in range(4)]] for k in range(8)])
    cx, _ = cam.principal_point
    depth = curve[:, 1] + 4.0
    xs = cam.focal * curve[:, 0] / depth + cx
    covered = np.flatnonzero(s.valid[0, row])
    expected = np.floor(xs.max()) - np.ceil(xs.min()) + 1
    assert abs(len(covered) - expected) <= 1
    assert covered.max() - covered.min() + 1 == len(covered)


def test_patch_behind_camera_invalid():
    ctrl = np.concatenate([np.stack(np.meshgrid(np.arange(4.0), np.arange(4.0), indexing="ij"), -1), np.full((4, 4, 1), -3.0)], -1)
    assert not rasterize_spline(BSplineSurface(ctrl), camera()).valid.any()


def test_subdivision_cap_warns(caplog):
    g = np.linspace(-30, 30, 4)
    ctrl = np.concatenate([np.stack(np.meshgrid(g, g, indexing="ij"), -1), np.full((4, 4, 1), 1.0)], -1)
    with caplog.at_level(logging.WARNING, logger="rtsplat.sampler.spline"):
        rasterize_spline(BSplineSurface(ctrl), camera(128))
    assert "capped" in caplog.text


# ---------------------------------------------------------------- implicit surfaces


def test_single_corner_cell():
    f = np.ones((2, 2, 2))
    f[0, 0, 0] = -1.0
    tris = marching_cubes(f, 0.0)
    assert len(tris.edges) == 1
    # the three crossing edges all start at corner 0
    assert sorted(map(tuple, np.sort(tris.edges[0], axis=1).tolist())) == [(0, 1), (0, 2), (0, 4)]
    assert np.allclose(np.sort(tris.positions[0], axis=0), [[0, 0, 0], [0, 0, 0], [0.5, 0.5, 0.5]])


def test_uniform_grid_has_no_surface():
    grid = ImplicitGrid(np.full((5, 5, 5), 2.0), origin=np.full(3, -1.0), spacing=0.5)
    assert len(marching_cubes(grid.values, 0.0).edges) == 0
    assert not rasterize_implicit(grid, Camera.look_at((0, 0, -3), (0, 0, 0), width=16, height=16, fov_y=0.9)).valid.any()


def sphere_grid(n=40, radius=0.8):
    spacing = 2.0 / (n - 1)
    return field_to_grid(SphereUnion(np.zeros((1, 3)), np.array([radius])), (n, n, n), np.full(3, -1.0), spacing)


def test_implicit_sphere_silhouette_area():
    size, dist, radius = 128, 3.0, 0.8
    cam = Camera.look_at((0, 0, -dist), (0, 0, 0), width=size, height=size, fov_y=0.9)
    s = rasterize_implicit(sphere_grid(radius=radius), cam, layers=1)
    # a sphere projects to a disk of angular radius asin(r / d)
    disk_radius = cam.focal * np.tan(np.arcsin(radius / dist))
    analytic = np.pi * disk_radius**2
    assert abs(s.valid[0].sum() - analytic) / analytic < 0.05


def test_recorded_edges_cross_the_isovalue():
    grid = sphere_grid(24)
    cam = Camera.look_at((0.3, -0.2, -3), (0, 0, 0), width=48, height=48, fov_y=0.9)
    s = rasterize_implicit(grid, cam, layers=2)
    f = value(grid.values).ravel()
    edges = s.lattice[s.valid].reshape(-1, 3, 2)
    assert len(edges) > 100
    assert np.all(np.sign(f[edges[..., 0]]) != np.sign(f[edges[..., 1]]))
    assert np.all(np.abs(f[edges[..., 0]] - f[edges[..., 1]]) >= s.degenerate_eps)


def test_degenerate_cells_dropped():
    f = np.ones((2, 2, 2))
    f[0, 0, 0] = 1.0 - 1e-7
    iso = 1.0 - 5e-8
    assert len(marching_cubes(f, iso, eps=1e-6).edges) == 0
    assert len(marching_cubes(f, iso, eps=1e-8).edges) == 1
