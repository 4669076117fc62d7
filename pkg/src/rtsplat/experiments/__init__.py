"""Experiment runners, one per CLI subcommand."""
from __future__ import annotations

from .config import ExperimentConfig


def run(cfg: ExperimentConfig) -> dict:
    """Dispatch on ``cfg.kind``; imports stay lazy so one runner's
    dependencies do not slow down the others."""
    if cfg.kind == "render":
        from .render import run_render

        return run_render(cfg)
    if cfg.kind == "gradviz":
        from .gradviz import run_derivative_viz

        return run_derivative_viz(cfg)
    if cfg.kind == "fit-pose":
        from . import pose

        if cfg.variant == "compare":
            return pose.run_comparison(cfg)
        if cfg.variant == "scaling":
            return pose.run_scaling(cfg)
        return pose.run_pose_fit(cfg)
    if cfg.kind == "fit-mesh":
        from .meshfit import run_mesh_fit

        return run_mesh_fit(cfg)
    if cfg.kind == "fit-spline":
        from .splinefit import run_spline_fit

        return run_spline_fit(cfg)
    if cfg.kind == "fit-implicit":
        from .implicitfit import run_implicit_fit

        return run_implicit_fit(cfg)
    raise ValueError(f"unknown experiment kind '{cfg.kind}'")


__all__ = ["ExperimentConfig", "run"]
