"""Fit sphere-based implicit fields to an image of a torus.

Two parameterizations: a swept sphere (two radii) and a union of spheres
whose centres live in a plane.  The union starts as a solid disk and has to
open a hole to match the target, i.e. change genus.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .. import autodiff as ad
from ..autodiff import value
from ..io import save_csv, save_png
from ..optim import OptimizationAborted, loss_l1
from ..render import render
from ..sampler import marching_cubes
from ..scene import Camera, SphereUnion, SweptSphere, field_to_grid
from ..shading import shade_custom
from .common import FitResult, camera_for, ensure_dir, optimize, write_standard_outputs
from .config import ExperimentConfig

BOUND = 1.5  # the lattice spans [-BOUND, BOUND]^3
TARGET_RING = 0.8
TARGET_TUBE = 0.3
SWEPT_INIT = (0.45, 0.35)  # (tube, ring): a fat torus centred in the target
UNION_DISK = 0.55  # initial sphere centres fill a disk of this radius
UNION_RADIUS = 0.3
MIN_RADIUS = 0.02
DISTANCE = 4.5
TILTED_EYE_DEG = 35.0


def height_shader(g):
    """Opaque colour that darkens with height along the torus axis (z),
    which points away from the front camera."""
    shade = ad.exp(-2.5 * (g.position[..., 2] + TARGET_TUBE))
    return ad.reshape(shade, np.shape(value(shade)) + (1,)) * np.array([0.95, 0.7, 0.45])


def _shade(g):
    return shade_custom(g, height_shader)


def lattice(grid: int):
    spacing = 2.0 * BOUND / (grid - 1)
    return (grid, grid, grid), np.full(3, -BOUND), spacing


def target_field() -> SweptSphere:
    return SweptSphere(TARGET_TUBE, TARGET_RING)


def initial_union(rng: np.random.Generator, count: int) -> np.ndarray:
    """Flat parameter vector ``[centres (count, 2), radii (count,)]``."""
    r = UNION_DISK * np.sqrt(rng.uniform(size=count))
    phi = rng.uniform(0.0, 2.0 * np.pi, size=count)
    centers = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=-1)
    return np.concatenate([centers.reshape(-1), np.full(count, UNION_RADIUS)])


@dataclass
class ImplicitProblem:
    variant: str
    camera: Camera
    grid: int
    target: np.ndarray  # (H, W, 3)
    initial: np.ndarray
    layers: int = 2
    workers: int = 1

    def field(self, params):
        if self.variant == "swept-sphere":
            return SweptSphere(params[0], params[1])
        n = len(value(params)) // 3
        return SphereUnion(ad.reshape(params[: 2 * n], (n, 2)), params[2 * n :])

    def grid_of(self, params):
        shape, origin, spacing = lattice(self.grid)
        return field_to_grid(self.field(params), shape, origin, spacing)

    def image(self, params):
        return render(self.grid_of(params), self.camera, None, _shade, self.layers, workers=self.workers).image[..., :3]

    def loss(self, params):
        return loss_l1(self.image(params), self.target)

    def project(self, params: np.ndarray) -> np.ndarray:
        out = params.copy()
        if self.variant == "swept-sphere":
            out[:2] = np.maximum(out[:2], MIN_RADIUS)
        else:
            n = len(out) // 3
            out[2 * n :] = np.maximum(out[2 * n :], MIN_RADIUS)
        return out


def front_camera(cfg: ExperimentConfig) -> Camera:
    """Looks down the torus axis."""
    return camera_for(cfg, (0.0, 0.0, -DISTANCE))


def tilted_camera(cfg: ExperimentConfig) -> Camera:
    """Off-axis view; the swept sphere needs it because its two radii trade
    off against each other in a head-on silhouette."""
    a = np.radians(TILTED_EYE_DEG)
    return camera_for(cfg, (0.0, -DISTANCE * np.sin(a), -DISTANCE * np.cos(a)))


def make_problem(cfg: ExperimentConfig) -> ImplicitProblem:
    variant = cfg.variant or "sphere-union"
    if variant == "swept-sphere":
        camera = tilted_camera(cfg)
        init = np.array(SWEPT_INIT)
    elif variant == "sphere-union":
        camera = front_camera(cfg)
        init = initial_union(np.random.default_rng(cfg.seed), cfg.spheres)
    else:
        raise ValueError(f"unknown implicit variant '{variant}'")
    problem = ImplicitProblem(variant, camera, cfg.grid, None, init, cfg.layers, cfg.workers)
    shape, origin, spacing = lattice(cfg.grid)
    target_grid = field_to_grid(target_field(), shape, origin, spacing)
    problem.target = value(render(target_grid, camera, None, _shade, cfg.layers, workers=cfg.workers).image[..., :3])
    if len(marching_cubes(value(problem.grid_of(init).values), 0.0).edges) == 0:
        raise OptimizationAborted("initial field has no isosurface inside the lattice")
    return problem


def fit(problem: ImplicitProblem, iters: int, lr: float, optimizer: str = "adam") -> FitResult:
    return optimize(problem.loss, problem.initial, optimizer, iters, lr, project=problem.project)


def coverage_mask(image) -> np.ndarray:
    return np.asarray(value(image)).sum(axis=-1) > 0.5


def holes(mask: np.ndarray) -> int:
    """Background components that do not touch the image border."""
    labels, count = ndimage.label(~mask)
    border = set(np.unique(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]])))
    return sum(1 for i in range(1, count + 1) if i not in border)


def run_implicit_fit(cfg: ExperimentConfig) -> dict:
    out = ensure_dir(cfg.out)
    problem = make_problem(cfg)
    result = fit(problem, cfg.iters, cfg.lr, cfg.optimizer)
    initial = value(problem.image(problem.initial))
    final = value(problem.image(result.params))
    write_standard_outputs(out, initial, final, problem.target, result.history)
    save_png(os.path.join(out, "mask_initial.png"), coverage_mask(initial).astype(float))
    save_png(os.path.join(out, "mask_final.png"), coverage_mask(final).astype(float))
    summary = {
        "variant": problem.variant,
        "initial_loss": result.history.records[0].loss,
        "final_loss": result.history.records[-1].loss,
        "initial_holes": holes(coverage_mask(initial)),
        "final_holes": holes(coverage_mask(final)),
        "target_holes": holes(coverage_mask(problem.target)),
    }
    if problem.variant == "swept-sphere":
        summary["tube"], summary["ring"] = (float(v) for v in result.params[:2])
    save_csv(os.path.join(out, "implicit.csv"), list(summary), [list(summary.values())])
    return {"result": result, "summary": summary, "problem": problem}

