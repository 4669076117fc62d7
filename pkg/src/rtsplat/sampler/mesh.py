from __future__ import annotations

import numpy as np

from ..autodiff import value
from ..scene import Camera, TriangleMesh, rigid_transform
from .buffers import SampleBuffer
from .raster import rasterize_camera_space


def _camera_points(vertices, camera: Camera, pose) -> np.ndarray:
    world = value(rigid_transform(value(vertices), None if pose is None else value(pose)))
    return value(camera.to_camera(world))


def rasterize_mesh(
    mesh: TriangleMesh, camera: Camera, pose=None, layers: int = 2, workers: int = 1, cull_backfaces: bool = False
) -> SampleBuffer:
    """Per pixel, the ``layers`` front-most triangle hits (face id + barycentrics).

    Back faces are sampled by default; a closed mesh can cull them so its
    hidden side does not occupy the deeper layers.
    """
    pts = _camera_points(mesh.vertices, camera, pose)
    frags = rasterize_camera_space(pts, mesh.faces, camera, layers, workers, cull_backfaces)
    return SampleBuffer("mesh", frags.valid, frags.depth, face=frags.face, bary=frags.bary)


def sample_positions_for_pose(
    mesh: TriangleMesh, camera: Camera, pose=None, layers: int = 2, workers: int = 1, cull_backfaces: bool = False
) -> SampleBuffer:
    """Pose-only fast path: store interpolated object-space positions.

    The positions are constants; only the pose and projection stay
    differentiable downstream, so that stage never touches the mesh.
    """
    samples = rasterize_mesh(mesh, camera, pose, layers, workers, cull_backfaces)
    v = value(mesh.vertices)
    face = np.where(samples.valid, samples.face, 0)
    corners = v[mesh.faces[face]] if len(mesh.faces) else np.zeros(face.shape + (3, 3))
    position = np.einsum("khwi,khwij->khwj", samples.bary, corners)
    position[~samples.valid] = 0.0
    return SampleBuffer("position", samples.valid, samples.depth, position=position)
