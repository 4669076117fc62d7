"""Fit the profile radii of a spline surface of revolution to a silhouette."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..autodiff import value
from ..io import save_csv, save_png
from ..optim import loss_l2
from ..plotting import overlap_image
from ..render import render
from ..scene import Camera
from ..scenes import revolution_surface
from .common import FitResult, camera_for, ensure_dir, optimize, write_standard_outputs
from .config import ExperimentConfig

HEIGHTS = np.linspace(0.0, 2.0, 8)
INITIAL_RADIUS = 0.4
# base, collar, neck, waist, shoulder, head, crown, tip
CHESS_RADII = np.array([0.55, 0.5, 0.3, 0.22, 0.26, 0.38, 0.3, 0.16])
MIN_RADIUS = 0.02


@dataclass
class SplineProblem:
    camera: Camera
    target: np.ndarray  # (H, W) silhouette
    true_radii: np.ndarray
    initial_radii: np.ndarray
    layers: int = 2
    workers: int = 1

    def alpha(self, radii):
        surface = revolution_surface(radii, HEIGHTS)
        return render(surface, self.camera, None, layers=self.layers, workers=self.workers).image[..., 3]

    def loss(self, radii):
        return loss_l2(self.alpha(radii), self.target)

    def relative_error(self, radii) -> np.ndarray:
        return np.abs(np.asarray(radii) - self.true_radii) / self.true_radii


def side_camera(cfg: ExperimentConfig) -> Camera:
    """Looks at the middle of the profile from the side, axis pointing up."""
    mid = 0.5 * (HEIGHTS[0] + HEIGHTS[-1])
    return camera_for(cfg, (0.0, -3.6, mid), (0.0, 0.0, mid), up=(0.0, 0.0, 1.0))


def make_problem(cfg: ExperimentConfig, true_radii=CHESS_RADII, initial_radii=None) -> SplineProblem:
    camera = side_camera(cfg)
    true_radii = np.asarray(true_radii, dtype=np.float64)
    init = np.full(len(HEIGHTS), INITIAL_RADIUS) if initial_radii is None else np.asarray(initial_radii, dtype=np.float64)
    problem = SplineProblem(camera, None, true_radii, init, cfg.layers, cfg.workers)
    problem.target = value(problem.alpha(true_radii))
    return problem


def fit(problem: SplineProblem, optimizer: str, iters: int, lr: float) -> FitResult:
    return optimize(
        problem.loss,
        problem.initial_radii,
        optimizer,
        iters,
        lr,
        project=lambda r: np.maximum(r, MIN_RADIUS),
    )


def run_spline_fit(cfg: ExperimentConfig) -> dict:
    out = ensure_dir(cfg.out)
    problem = make_problem(cfg)
    result = fit(problem, cfg.optimizer, cfg.iters, cfg.lr)
    initial = value(problem.alpha(problem.initial_radii))
    final = value(problem.alpha(result.params))
    write_standard_outputs(out, initial, final, problem.target, result.history)
    save_png(os.path.join(out, "overlap_initial.png"), overlap_image(initial, problem.target))
    save_png(os.path.join(out, "overlap_final.png"), overlap_image(final, problem.target))
    err = problem.relative_error(result.params)
    save_csv(
        os.path.join(out, "radii.csv"),
        ("index", "height", "target", "initial", "final", "relative_error"),
        [(i, HEIGHTS[i], problem.true_radii[i], problem.initial_radii[i], result.params[i], err[i]) for i in range(len(HEIGHTS))],
    )
    return {"result": result, "relative_error": err, "problem": problem}
