"""The non-differentiable sampling oracle: surface parameters per pixel."""
from .buffers import SampleBuffer
from .implicit import marching_cubes, rasterize_implicit
from .mesh import rasterize_mesh, sample_positions_for_pose
from .raster import PEEL_EPSILON, Fragments, rasterize_camera_space
from .spline import MAX_SUBDIVISION, rasterize_spline, tessellate

__all__ = [
    "SampleBuffer",
    "Fragments",
    "PEEL_EPSILON",
    "MAX_SUBDIVISION",
    "marching_cubes",
    "rasterize_camera_space",
    "rasterize_implicit",
    "rasterize_mesh",
    "rasterize_spline",
    "sample_positions_for_pose",
    "tessellate",
]
