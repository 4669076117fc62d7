"""Recover a 6-DOF object pose from its silhouette."""
from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import value
from ..io import save_csv
from ..optim import loss_l2
from ..plotting import loss_curves
from ..render import render, sample, shade_and_splat
from ..scene import Camera, TriangleMesh, rotation_angle, rotation_matrix
from ..scenes import random_convex_mesh, subdivide_to
from .common import FitResult, camera_for, ensure_dir, optimize, write_loss_csv, write_standard_outputs
from .config import ExperimentConfig

EYE = (0.0, 0.0, -3.0)
LOSS_THRESHOLD = 1e-4
HULL_POINTS = 24  # few points keep the hull faceted, so rotations show in the silhouette
SCALING_SIZES = (8, 107)  # subdivisions of the 44-face hull: ~2.8K and ~504K triangles


@dataclass
class PoseProblem:
    mesh: TriangleMesh
    camera: Camera
    target_pose: np.ndarray
    initial_pose: np.ndarray
    target: np.ndarray  # (H, W) silhouette
    extent: float
    layers: int = 2
    workers: int = 1
    fast: bool = False

    def alpha(self, pose):
        frame = render(
            self.mesh, self.camera, pose, layers=self.layers, workers=self.workers, fast_pose=self.fast, cull_backfaces=True
        )
        return frame.image[..., 3]

    def residuals(self, pose):
        return ad.reshape(self.alpha(pose) - self.target, (-1,))

    def loss(self, pose):
        return loss_l2(self.alpha(pose), self.target)

    def errors(self, pose) -> tuple:
        """(rotation error in degrees, translation error as a fraction of the extent)."""
        pose = np.asarray(pose, dtype=np.float64)
        R = value(rotation_matrix(pose[:3]))
        R_t = value(rotation_matrix(self.target_pose[:3]))
        rot = np.degrees(rotation_angle(R @ R_t.T))
        trans = np.linalg.norm(pose[3:] - self.target_pose[3:]) / self.extent
        return float(rot), float(trans)


def perturbation(rng: np.random.Generator, degrees: float, distance: float) -> np.ndarray:
    """Rotation of exactly ``degrees`` and translation of length ``distance``,
    both along random directions."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    return np.concatenate([np.radians(degrees) * axis, distance * direction])


def make_problem(cfg: ExperimentConfig, mesh: TriangleMesh = None) -> PoseProblem:
    rng = np.random.default_rng(cfg.seed)
    base = random_convex_mesh(rng, points=HULL_POINTS)
    mesh = base if mesh is None else mesh
    v = value(mesh.vertices)
    extent = float(np.linalg.norm(v.max(0) - v.min(0)))
    camera = camera_for(cfg, EYE)
    target_pose = np.zeros(6)
    initial = target_pose + perturbation(rng, cfg.perturb_deg, cfg.perturb_frac * extent)
    problem = PoseProblem(mesh, camera, target_pose, initial, None, extent, cfg.layers, cfg.workers, cfg.fast_pose)
    problem.target = value(problem.alpha(target_pose))
    return problem


def fit(problem: PoseProblem, optimizer: str, iters: int, lr: float, stop_below=None) -> FitResult:
    return optimize(problem.loss, problem.initial_pose, optimizer, iters, lr, residual_fn=problem.residuals, stop_below=stop_below)


def _differentiable_stage(mesh: TriangleMesh, camera: Camera, pose, layers: int):
    """Loss + gradient for fixed fast-path samples (the sampler is excluded)."""
    samples = sample(mesh, camera, pose, layers, fast_pose=True, cull_backfaces=True)
    target = np.zeros((camera.height, camera.width))
    pose = np.asarray(pose, dtype=np.float64)

    def loss(p):
        return loss_l2(shade_and_splat(mesh, samples, camera, p).image[..., 3], target)

    return lambda: ad.value_and_grad(loss, pose)


def scaling_study(cfg: ExperimentConfig, repeats: int = 15) -> list:
    """``(triangles, median ms)`` of the differentiable stage for the small and
    large versions of the hull.  Runs are interleaved so drift in machine load
    hits both sizes alike."""
    rng = np.random.default_rng(cfg.seed)
    base = random_convex_mesh(rng, points=HULL_POINTS)
    camera = camera_for(cfg, EYE)
    meshes = [subdivide_to(base, n) for n in SCALING_SIZES]
    stages = [_differentiable_stage(m, camera, np.zeros(6), cfg.layers) for m in meshes]
    times = [[] for _ in stages]
    for it in range(repeats + 1):
        for stage, acc in zip(stages, times):
            start = time.perf_counter()
            stage()
            if it:  # the first round warms caches
                acc.append((time.perf_counter() - start) * 1e3)
    return [(m.num_faces, float(np.median(t))) for m, t in zip(meshes, times)]


def run_pose_fit(cfg: ExperimentConfig) -> dict:
    out = ensure_dir(cfg.out)
    problem = make_problem(cfg)
    result = fit(problem, cfg.optimizer, cfg.iters, cfg.lr)
    rot, trans = problem.errors(result.params)
    initial = value(problem.alpha(problem.initial_pose))
    final = value(problem.alpha(result.params))
    write_standard_outputs(out, initial, final, problem.target, result.history)
    save_csv(
        os.path.join(out, "pose.csv"),
        ("optimizer", "path", "iterations", "final_loss", "rotation_error_deg", "translation_error_frac", "aborted"),
        [(
            cfg.optimizer,
            "fast" if cfg.fast_pose else "standard",
            result.history.records[-1].iteration,
            result.history.records[-1].loss,
            rot,
            trans,
            result.aborted or "",
        )],
    )
    return {"result": result, "rotation_error_deg": rot, "translation_error_frac": trans, "problem": problem}


def compare_optimizers(cfg: ExperimentConfig, adam_iters: int = 300, adam_lr: float = 0.02) -> dict:
    """LM and Adam from the same start, each stopped at the loss threshold."""
    problem = make_problem(cfg)
    return {
        "lm": fit(problem, "lm", cfg.iters, 0.0, stop_below=LOSS_THRESHOLD),
        "adam": fit(problem, "adam", adam_iters, adam_lr, stop_below=LOSS_THRESHOLD),
    }


def run_comparison(cfg: ExperimentConfig) -> dict:
    out = ensure_dir(cfg.out)
    runs = compare_optimizers(cfg)
    for name, result in runs.items():
        write_loss_csv(os.path.join(out, f"{name}_loss.csv"), result.history)
    curves = {k: ([r.iteration for r in v.history.records], np.maximum(v.history.losses, 1e-300)) for k, v in runs.items()}
    loss_curves(os.path.join(out, "lm_vs_adam.png"), curves)
    reached = {k: v.history.first_below(LOSS_THRESHOLD) for k, v in runs.items()}
    save_csv(
        os.path.join(out, "comparison.csv"),
        ("optimizer", "iterations_to_threshold", "threshold"),
        [(k, "" if n is None else n, LOSS_THRESHOLD) for k, n in reached.items()],
    )
    return {"runs": runs, "iterations": reached}


def run_scaling(cfg: ExperimentConfig) -> dict:
    """Timing only, so the CSV is deliberately not reproducible bit for bit."""
    out = ensure_dir(cfg.out)
    rows = scaling_study(cfg)
    save_csv(os.path.join(out, "scaling.csv"), ("triangles", "differentiable_ms"), rows)
    return {"rows": rows}
