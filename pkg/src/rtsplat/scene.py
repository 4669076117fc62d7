"""Scene parameters: surfaces, cameras, poses, textures and projection.

Conventions
-----------
* Camera space is x right, y down, z forward (view depth ``d = z``).
* Pixel ``(i, j)`` (column, row) has its centre at screen coordinate
  ``(i, j)``; the optical axis lands on ``(W/2 - 0.5, H/2 - 0.5)``.
* Normalised depth is ``(1/near - 1/d) / (1/near - 1/far)``: 0 at the near
  plane, 1 at the far plane, monotonic in ``d``.
* Rotations are axis-angle vectors (3 reals).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional, Union

import numpy as np

from . import autodiff as ad
from .autodiff import value


class StructureError(ValueError):
    """Topology or indexing is inconsistent with the data it refers to."""


# ---------------------------------------------------------------- rotations


def rotation_matrix(omega):
    """Rodrigues' formula, differentiable and smooth through the identity."""
    th2 = ad.sum(omega * omega)
    small = value(th2) < 1e-8
    th2_safe = ad.where(small, 1.0, th2)
    th = ad.sqrt(th2_safe)
    a = ad.where(small, 1.0 - th2 / 6.0, ad.sin(th) / th)
    b = ad.where(small, 0.5 - th2 / 24.0, (1.0 - ad.cos(th)) / th2_safe)
    wx, wy, wz = omega[0], omega[1], omega[2]
    zero = 0.0 * wx
    skew = ad.stack(
        [
            ad.stack([zero, -wz, wy]),
            ad.stack([wz, zero, -wx]),
            ad.stack([-wy, wx, zero]),
        ]
    )
    outer = ad.reshape(omega, (3, 1)) * ad.reshape(omega, (1, 3))
    return np.eye(3) * (1.0 - b * th2) + a * skew + b * outer


def rotation_to_axis_angle(R: np.ndarray) -> np.ndarray:
    from scipy.spatial.transform import Rotation

    return Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_rotvec()


def rotation_angle(R: np.ndarray) -> float:
    """Angle (radians) of the rotation matrix ``R``."""
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def apply_rotation(R, points):
    """``R @ p`` for every point in ``points[..., 3]``."""
    return ad.sum(ad.reshape(points, np.shape(value(points))[:-1] + (1, 3)) * R, axis=-1)


# ---------------------------------------------------------------- poses


@dataclass
class PoseParams:
    """Rigid transform applied to an object: rotate (axis-angle), then translate."""

    params: Any = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self) -> None:
        v = value(self.params)
        if v.shape != (6,) or not np.all(np.isfinite(v)):
            raise ValueError("pose must be 6 finite reals (3 rotation, 3 translation)")

    @property
    def rotation(self):
        return self.params[0:3]

    @property
    def translation(self):
        return self.params[3:6]


def _pose_vector(pose):
    if pose is None:
        return None
    if isinstance(pose, PoseParams):
        return pose.params
    return pose


def rigid_transform(points, pose):
    """Apply ``pose`` (6-vector or :class:`PoseParams`) to ``points[..., 3]``."""
    p = _pose_vector(pose)
    if p is None:
        return points
    R = rotation_matrix(p[0:3])
    return apply_rotation(R, points) + p[3:6]


def invert_pose(pose) -> np.ndarray:
    p = value(_pose_vector(pose))
    R_inv = value(rotation_matrix(-p[:3]))
    return np.concatenate([-p[:3], -R_inv @ p[3:]])


def compose_poses(outer, inner) -> np.ndarray:
    """Numeric pose equal to applying ``inner`` first, then ``outer``."""
    a = value(_pose_vector(outer))
    b = value(_pose_vector(inner))
    Ra = value(rotation_matrix(a[:3]))
    Rb = value(rotation_matrix(b[:3]))
    return np.concatenate([rotation_to_axis_angle(Ra @ Rb), Ra @ b[3:] + a[3:]])


# ---------------------------------------------------------------- surfaces


@dataclass
class TriangleMesh:
    vertices: Any
    faces: np.ndarray
    normals: Any = None
    uvs: Any = None
    colors: Any = None

    def __post_init__(self) -> None:
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        v = value(self.vertices)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError("vertices must have shape (V, 3)")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(v)):
            raise StructureError("face index out of range")
        if not np.all(np.isfinite(v)):
            raise ValueError("vertex coordinates must be finite")
        for name, width in (("normals", 3), ("uvs", 2), ("colors", 3)):
            attr = getattr(self, name)
            if attr is not None and value(attr).shape != (len(v), width):
                raise ValueError(f"{name} must have shape ({len(v)}, {width})")

    @property
    def num_vertices(self) -> int:
        return int(value(self.vertices).shape[0])

    @property
    def num_faces(self) -> int:
        return int(self.faces.shape[0])

    def with_(self, **changes) -> "TriangleMesh":
        from dataclasses import replace

        return replace(self, **changes)

    def vertex_normals(self) -> np.ndarray:
        """Area-weighted vertex normals from the current (numeric) positions."""
        v = value(self.vertices)
        f = self.faces
        fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        n = np.zeros_like(v)
        for k in range(3):
            np.add.at(n, f[:, k], fn)
        length = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.maximum(length, 1e-12)


#: Uniform cubic B-spline basis; row vector (1, u, u^2, u^3) @ BSPLINE_BASIS gives
#: the four control-point weights.
BSPLINE_BASIS = (
    np.array(
        [
            [1.0, 4.0, 1.0, 0.0],
            [-3.0, 0.0, 3.0, 0.0],
            [3.0, -6.0, 3.0, 0.0],
            [-1.0, 3.0, -3.0, 1.0],
        ]
    )
    / 6.0
)


def bspline_weights(t) -> np.ndarray:
    """Basis weights ``(..., 4)`` for parameters ``t`` in [0, 1]."""
    t = np.asarray(t, dtype=np.float64)
    powers = np.stack([np.ones_like(t), t, t * t, t * t * t], axis=-1)
    return powers @ BSPLINE_BASIS


@dataclass
class BSplineSurface:
    """Bicubic uniform B-spline surface over a control grid ``(M, N, 3)``.

    ``periodic[d]`` wraps direction ``d``; otherwise it is open and yields
    ``count - 3`` patches (replicate end rows with :func:`clamp_rows` to pin
    the surface to its boundary control points).
    """

    control: Any
    periodic: tuple = (False, False)

    def __post_init__(self) -> None:
        c = value(self.control)
        if c.ndim != 3 or c.shape[2] != 3:
            raise ValueError("control grid must have shape (M, N, 3)")
        if min(c.shape[:2]) < 4:
            raise ValueError("control grid needs at least 4x4 points")
        self.periodic = tuple(bool(p) for p in self.periodic)

    @property
    def grid_shape(self) -> tuple:
        return tuple(value(self.control).shape[:2])

    @property
    def patch_shape(self) -> tuple:
        return tuple(n if p else n - 3 for n, p in zip(self.grid_shape, self.periodic))

    @property
    def num_patches(self) -> int:
        a, b = self.patch_shape
        return a * b

    def patch_indices(self, patch_ids) -> np.ndarray:
        """Flat control-point indices ``(..., 16)`` (row-major over 4x4)."""
        patch_ids = np.asarray(patch_ids, dtype=np.int64)
        M, N = self.grid_shape
        pa, pb = self.patch_shape
        a = patch_ids // pb
        b = patch_ids % pb
        k = np.arange(4)
        rows = a[..., None] + k
        cols = b[..., None] + k
        if self.periodic[0]:
            rows = rows % M
        if self.periodic[1]:
            cols = cols % N
        return (rows[..., :, None] * N + cols[..., None, :]).reshape(patch_ids.shape + (16,))


def clamp_rows(control, repeats: int = 2, axis: int = 0):
    """Replicate the first/last control rows so an open direction ends at them."""
    n = np.shape(value(control))[axis]
    idx = np.concatenate([np.zeros(repeats, int), np.arange(n), np.full(repeats, n - 1)])
    moved = ad.transpose(control, (1, 0, 2)) if axis == 1 else control
    out = ad.take(moved, idx)
    return ad.transpose(out, (1, 0, 2)) if axis == 1 else out


@dataclass
class ImplicitGrid:
    """Scalar lattice ``values[X, Y, Z]``; lattice point ``(i, j, k)`` sits at
    ``origin + spacing * (i, j, k)``.  The surface is ``values == iso``."""

    values: Any
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    spacing: Union[float, np.ndarray] = 1.0
    iso: float = 0.0

    def __post_init__(self) -> None:
        v = value(self.values)
        if v.ndim != 3 or min(v.shape) < 2:
            raise ValueError("lattice must be 3-D with every size >= 2")
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.spacing = np.broadcast_to(np.asarray(self.spacing, dtype=np.float64), (3,)).copy()
        if np.any(self.spacing <= 0):
            raise ValueError("lattice spacing must be positive")

    @property
    def shape(self) -> tuple:
        return tuple(value(self.values).shape)

    def lattice_positions(self, flat_indices=None) -> np.ndarray:
        X, Y, Z = self.shape
        if flat_indices is None:
            ijk = np.stack(np.meshgrid(np.arange(X), np.arange(Y), np.arange(Z), indexing="ij"), -1)
        else:
            ijk = np.stack(np.unravel_index(np.asarray(flat_indices), (X, Y, Z)), -1)
        return self.origin + self.spacing * ijk


@dataclass
class SweptSphere:
    """Torus-like SDF: a sphere of radius ``tube_radius`` swept along a circle
    of radius ``ring_radius`` around ``axis`` through ``center``."""

    tube_radius: Any
    ring_radius: Any
    center: Any = field(default_factory=lambda: np.zeros(3))
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self) -> None:
        if value(self.tube_radius) <= 0:
            raise ValueError("tube radius must be positive")
        a = np.asarray(self.axis, dtype=np.float64)
        self.axis = a / np.linalg.norm(a)

    def sdf(self, points):
        d = points - self.center
        h = ad.sum(d * self.axis, axis=-1)
        radial = d - ad.reshape(h, np.shape(value(h)) + (1,)) * self.axis
        rho = ad.norm(radial)
        return ad.sqrt(ad.square(rho - self.ring_radius) + h * h + 1e-24) - self.tube_radius


@dataclass
class SphereUnion:
    """Union of spheres; 2-D centres are embedded in the plane spanned by
    ``plane_axes`` through ``plane_origin``."""

    centers: Any
    radii: Any
    plane_origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    plane_axes: np.ndarray = field(default_factory=lambda: np.array([[1.0, 0, 0], [0, 1.0, 0]]))

    def __post_init__(self) -> None:
        c = value(self.centers)
        r = value(self.radii)
        if c.ndim != 2 or c.shape[1] not in (2, 3) or r.shape != (c.shape[0],):
            raise ValueError("expected centers (n, 2|3) and radii (n,)")
        if np.any(r <= 0):
            raise ValueError("sphere radii must be positive")

    def centers3d(self):
        c = self.centers
        if value(c).shape[1] == 3:
            return c
        axes = np.asarray(self.plane_axes, dtype=np.float64)
        u = ad.reshape(c[:, 0], (-1, 1))
        v = ad.reshape(c[:, 1], (-1, 1))
        return self.plane_origin + u * axes[0] + v * axes[1]

    def nearest_sphere(self, points: np.ndarray, chunk: int = 8192) -> np.ndarray:
        """Index of the sphere attaining the min SDF (first on ties).

        Squared distances come from one matrix product per chunk of points;
        the expanded form is only used to pick the branch, never differentiated.
        """
        c = value(self.centers3d())
        r = value(self.radii)
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        cc = np.einsum("ij,ij->i", c, c)
        ct = -2.0 * c.T
        arg = np.empty(len(pts), dtype=np.int64)
        for s in range(0, len(pts), chunk):
            p = pts[s : s + chunk]
            d = p @ ct
            d += cc
            d += np.einsum("ij,ij->i", p, p)[:, None]
            np.maximum(d, 0.0, out=d)
            np.sqrt(d, out=d)
            d -= r
            arg[s : s + chunk] = np.argmin(d, axis=1)
        return arg.reshape(np.shape(points)[:-1])

    def sdf(self, points):
        # min over spheres: select the minimising sphere without derivatives,
        # then differentiate only that branch (identical to min's derivative)
        idx = self.nearest_sphere(value(points))
        c = ad.take(self.centers3d(), idx)
        r = ad.take(self.radii, idx)
        return ad.norm(points - c) - r


SphereField = Union[SweptSphere, SphereUnion]


def field_to_grid(field_: SphereField, grid_shape, origin, spacing, iso: float = 0.0) -> ImplicitGrid:
    """Sample an analytic field onto a lattice (differentiable in its parameters)."""
    shape = tuple(int(s) for s in grid_shape)
    if len(shape) != 3 or min(shape) < 2:
        raise ValueError("grid shape must be three sizes >= 2")
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    spacing = np.broadcast_to(np.asarray(spacing, dtype=np.float64), (3,))
    ijk = np.stack(np.meshgrid(*(np.arange(s) for s in shape), indexing="ij"), -1)
    return ImplicitGrid(field_.sdf(origin + spacing * ijk), origin, spacing, iso)


# ---------------------------------------------------------------- cameras & textures


@dataclass(frozen=True)
class Camera:
    """Pinhole camera.  ``rotation`` is the camera-to-world axis-angle."""

    width: int
    height: int
    fov_y: float
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    near: float = 0.1
    far: float = 100.0

    def __post_init__(self) -> None:
        if not (0.0 < self.fov_y < np.pi):
            raise ValueError("field of view must lie in (0, pi)")
        if not (0.0 < self.near < self.far):
            raise ValueError("need 0 < near < far")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3))

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 1.0, 0.0), **kwargs) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        up = np.asarray(up, dtype=np.float64)
        down = -(up - np.dot(up, forward) * forward)
        down /= np.linalg.norm(down)
        right = np.cross(down, forward)
        R = np.stack([right, down, forward], axis=1)
        return cls(position=eye, rotation=rotation_to_axis_angle(R), **kwargs)

    @property
    def focal(self) -> float:
        return 0.5 * self.height / np.tan(0.5 * self.fov_y)

    @property
    def principal_point(self) -> tuple:
        return 0.5 * self.width - 0.5, 0.5 * self.height - 0.5

    @property
    def world_to_camera(self) -> np.ndarray:
        return value(rotation_matrix(self.rotation)).T

    def to_camera(self, points):
        return apply_rotation(self.world_to_camera, points - self.position)

    def normalized_depth(self, d):
        return (1.0 / self.near - 1.0 / d) / (1.0 / self.near - 1.0 / self.far)

    def pixel_grid(self) -> tuple:
        """Integer pixel-centre coordinates ``(xs, ys)`` of shape ``(H, W)``."""
        ys, xs = np.mgrid[0 : self.height, 0 : self.width]
        return xs.astype(np.float64), ys.astype(np.float64)


def project(points, camera: Camera):
    """World points ``(..., 3)`` to screen ``(x_px, y_px, z_norm)``.

    Returns ``(screen, in_front)``; ``in_front`` is False for points at or
    behind the near plane, whose screen values are placeholders.
    """
    pc = camera.to_camera(points)
    d = pc[..., 2]
    in_front = value(d) >= camera.near * (1.0 - 1e-12)
    d_safe = ad.where(in_front, d, 1.0)
    cx, cy = camera.principal_point
    f = camera.focal
    x = f * pc[..., 0] / d_safe + cx
    y = f * pc[..., 1] / d_safe + cy
    z = camera.normalized_depth(d_safe)
    return ad.stack([x, y, z], axis=-1), in_front


@dataclass
class Texture:
    texels: Any  # (H, W, C)

    def __post_init__(self) -> None:
        t = value(self.texels)
        if t.ndim != 3 or t.shape[0] < 1 or t.shape[1] < 1:
            raise ValueError("texture must be (H, W, C) with H, W >= 1")
        if not np.all(np.isfinite(t)):
            raise ValueError("texels must be finite")

    def sample(self, uv):
        """Bilinear lookup with clamp addressing; texel centres sit at
        ``u = (i + 0.5) / W`` and ``v = 1 - (j + 0.5) / H`` (v up)."""
        H, W, C = value(self.texels).shape
        x = ad.clip(uv[..., 0] * W - 0.5, 0.0, W - 1.0)
        y = ad.clip((1.0 - uv[..., 1]) * H - 0.5, 0.0, H - 1.0)
        x0 = np.minimum(ad.floor(x), W - 2) if W > 1 else np.zeros(np.shape(value(x)))
        y0 = np.minimum(ad.floor(y), H - 2) if H > 1 else np.zeros(np.shape(value(y)))
        fx = x - x0
        fy = y - y0
        x0 = x0.astype(np.int64)
        y0 = y0.astype(np.int64)
        x1 = np.minimum(x0 + 1, W - 1)
        y1 = np.minimum(y0 + 1, H - 1)
        flat = ad.reshape(self.texels, (H * W, C))
        shp = np.shape(value(fx)) + (1,)

        def fetch(yy, xx):
            return ad.take(flat, yy * W + xx)

        fx = ad.reshape(fx, shp)
        fy = ad.reshape(fy, shp)
        top = fetch(y0, x0) * (1.0 - fx) + fetch(y0, x1) * fx
        bottom = fetch(y1, x0) * (1.0 - fx) + fetch(y1, x1) * fx
        return top * (1.0 - fy) + bottom * fy
