"""Refine vertex positions and colours of a mesh to match several views.

The template is a sphere; the target is an ellipsoid with smoothly varying
vertex colours, rendered from three cameras in front of a backdrop quad.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import List

import numpy as np

from .. import autodiff as ad
from ..autodiff import value
from ..io import save_csv, save_obj
from ..optim import loss_l2, regularize_laplacian, uniform_laplacian
from ..plotting import image_grid
from ..render import render_scene
from ..scene import Camera, TriangleMesh
from ..scenes import icosphere, quad
from ..shading import shade_flat, shade_vertex_color
from .common import FitResult, camera_for, ensure_dir, optimize, over_black, write_standard_outputs
from .config import ExperimentConfig

VIEW_ANGLES_DEG = (-35.0, 0.0, 35.0)
DISTANCE = 4.0
STRETCH = np.array([1.25, 0.8, 1.0])
BACKDROP_COLOR = (0.25, 0.3, 0.4)
TEMPLATE_COLOR = 0.5


def target_colors(vertices: np.ndarray) -> np.ndarray:
    """Low-frequency colour field over the unit sphere."""
    d = vertices / np.linalg.norm(vertices, axis=1, keepdims=True)
    return 0.5 + 0.35 * d[:, [0, 1, 2]] * np.array([1.0, -1.0, 1.0])


def backdrop() -> TriangleMesh:
    """Large square behind the object, wound to face the cameras."""
    q = quad(10.0, 2.5)
    return TriangleMesh(q.vertices, q.faces[:, ::-1])


@dataclass
class MeshProblem:
    template: TriangleMesh
    cameras: List[Camera]
    targets: List[np.ndarray]
    colors_true: np.ndarray
    vertices_true: np.ndarray
    layers: int = 2
    workers: int = 1
    reg_weight: float = 0.5
    colors_only: bool = False

    def __post_init__(self) -> None:
        self.laplacian = uniform_laplacian(self.template.faces, self.template.num_vertices)
        self.V = self.template.num_vertices

    def initial_params(self) -> np.ndarray:
        colors = np.full((self.V, 3), TEMPLATE_COLOR)
        if self.colors_only:
            return colors.reshape(-1)
        return np.concatenate([value(self.template.vertices).reshape(-1), colors.reshape(-1)])

    def unpack(self, params):
        if self.colors_only:
            return self.template.vertices, ad.reshape(params, (self.V, 3))
        n = 3 * self.V
        return ad.reshape(params[:n], (self.V, 3)), ad.reshape(params[n:], (self.V, 3))

    def images(self, params, mode: str = "multi") -> list:
        vertices, colors = self.unpack(params)
        mesh = self.template.with_(vertices=vertices, colors=colors)
        parts = [(mesh, None, shade_vertex_color), (backdrop(), None, lambda g: shade_flat(g, BACKDROP_COLOR))]
        return [
            render_scene(parts, cam, self.layers, mode=mode, workers=self.workers, cull_backfaces=True)[..., :3]
            for cam in self.cameras
        ]

    def image_loss(self, params, mode: str = "multi"):
        total = 0.0
        for image, target in zip(self.images(params, mode), self.targets):
            total = total + loss_l2(image, target)
        return total / len(self.cameras)

    def loss(self, params, mode: str = "multi"):
        total = self.image_loss(params, mode)
        if not self.colors_only and self.reg_weight > 0:
            vertices, _ = self.unpack(params)
            shift = vertices - value(self.template.vertices)
            total = total + self.reg_weight * regularize_laplacian(self.template, shift, self.laplacian)
        return total

    def visible_vertices(self) -> np.ndarray:
        """Vertices of the target surface that some camera sees the front of."""
        seen = np.zeros(self.V, bool)
        n = self.template.with_(vertices=self.vertices_true).vertex_normals()
        for cam in self.cameras:
            to_cam = cam.position - self.vertices_true
            seen |= np.einsum("ij,ij->i", n, to_cam) > 0
        return seen


def make_problem(cfg: ExperimentConfig, subdivisions: int = 2) -> MeshProblem:
    template = icosphere(subdivisions, 1.0)
    v0 = value(template.vertices)
    v_true = v0 * STRETCH
    c_true = target_colors(v0)
    cameras = []
    for angle in np.radians(VIEW_ANGLES_DEG):
        eye = DISTANCE * np.array([np.sin(angle), 0.0, -np.cos(angle)])
        cameras.append(camera_for(cfg, eye))
    truth = template.with_(vertices=v_true if not cfg.colors_only else v0, colors=c_true)
    parts = [(truth, None, shade_vertex_color), (backdrop(), None, lambda g: shade_flat(g, BACKDROP_COLOR))]
    targets = [
        value(render_scene(parts, cam, cfg.layers, workers=cfg.workers, cull_backfaces=True))[..., :3] for cam in cameras
    ]
    return MeshProblem(
        template,
        cameras,
        targets,
        c_true,
        v_true if not cfg.colors_only else v0,
        cfg.layers,
        cfg.workers,
        cfg.reg_weight,
        cfg.colors_only,
    )


def fit(problem: MeshProblem, iters: int, lr: float, mode: str = "multi", optimizer: str = "adam") -> FitResult:
    clamp = (lambda x: np.clip(x, 0.0, 1.0)) if problem.colors_only else None
    return optimize(lambda x: problem.loss(x, mode), problem.initial_params(), optimizer, iters, lr, project=clamp)


def color_error(problem: MeshProblem, params) -> float:
    """Mean absolute colour error over the vertices the cameras can see."""
    _, colors = problem.unpack(np.asarray(params))
    seen = problem.visible_vertices()
    return float(np.mean(np.abs(value(colors) - problem.colors_true)[seen]))


def run_mesh_fit(cfg: ExperimentConfig) -> dict:
    out = ensure_dir(cfg.out)
    problem = make_problem(cfg)
    result = fit(problem, cfg.iters, cfg.lr, "multi" if cfg.layers > 1 else "single", cfg.optimizer)
    x0 = problem.initial_params()
    initial = [over_black(im) for im in problem.images(x0)]
    final = [over_black(im) for im in problem.images(result.params)]
    write_standard_outputs(out, initial[1], final[1], problem.targets[1], result.history)
    image_grid(
        os.path.join(out, "views.png"),
        {f"{kind} {i}": im for kind, ims in (("target", problem.targets), ("final", final)) for i, im in enumerate(ims)},
    )
    vertices, colors = problem.unpack(result.params)
    save_obj(os.path.join(out, "final.obj"), problem.template.with_(vertices=value(vertices), colors=None))
    initial_loss = float(value(problem.image_loss(x0)))
    final_loss = float(value(problem.image_loss(result.params)))
    err = color_error(problem, result.params)
    save_csv(
        os.path.join(out, "meshfit.csv"),
        ("initial_image_loss", "final_image_loss", "ratio", "visible_color_error", "aborted"),
        [(initial_loss, final_loss, final_loss / initial_loss, err, result.aborted or "")],
    )
    return {"result": result, "initial_loss": initial_loss, "final_loss": final_loss, "color_error": err, "problem": problem}
