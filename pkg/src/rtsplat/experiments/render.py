"""Render a mesh (an OBJ file or a built-in sphere) to image files."""
from __future__ import annotations

import os

import numpy as np

from ..autodiff import value
from ..io import load_obj, save_csv, save_pfm, save_png
from ..render import render
from ..scene import Texture
from ..scenes import icosphere
from ..shading import shade_diffuse_textured, shade_flat, shade_vertex_color
from .common import camera_for, ensure_dir, over_black
from .config import ExperimentConfig

LIGHT = (0.4, -0.6, -0.7)


def _default_mesh():
    mesh = icosphere(3, 1.0)
    v = value(mesh.vertices)
    return mesh.with_(colors=0.5 + 0.45 * v * np.array([1.0, -1.0, 1.0]))


def _shader(mesh):
    if mesh.colors is not None:
        return shade_vertex_color
    if mesh.uvs is not None and mesh.normals is not None:
        checker = np.add.outer(np.arange(8), np.arange(8)) % 2
        texture = Texture(np.stack([0.3 + 0.6 * checker] * 3, axis=-1))
        return lambda g: shade_diffuse_textured(g, texture, LIGHT, (1.0, 1.0, 1.0), 0.2)
    return lambda g: shade_flat(g, (0.8, 0.8, 0.8))


def run_render(cfg: ExperimentConfig) -> dict:
    out = ensure_dir(cfg.out)
    mesh = load_obj(cfg.mesh) if cfg.mesh else _default_mesh()
    v = value(mesh.vertices)
    center = 0.5 * (v.min(0) + v.max(0))
    radius = 0.5 * float(np.linalg.norm(v.max(0) - v.min(0)))
    eye = center - np.array([0.0, 0.0, 1.0]) * radius / np.tan(np.radians(cfg.fov_deg) / 2) * 1.3
    camera = camera_for(cfg, eye, center)
    frame = render(mesh, camera, None, _shader(mesh), cfg.layers, workers=cfg.workers)
    image = value(frame.image)
    save_png(os.path.join(out, "render.png"), over_black(image))
    save_pfm(os.path.join(out, "alpha.pfm"), image[..., 3])
    coverage = frame.samples.valid.reshape(cfg.layers, -1).sum(axis=1)
    save_csv(os.path.join(out, "layers.csv"), ("layer", "pixels"), enumerate(coverage.tolist()))
    return {"image": image, "coverage": coverage}
