"""Shared pieces for the experiment runners."""
from __future__ import annotations

import os
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .. import autodiff as ad
from ..autodiff import value
from ..io import save_csv, save_png
from ..optim import (
    AdamState,
    DivergenceGuard,
    History,
    LMState,
    OptimizationAborted,
    step_adam,
    step_gd,
    step_lm,
)
from ..plotting import loss_curves
from ..scene import Camera
from .config import ExperimentConfig

LOSS_HEADER = ("iteration", "loss", "param_hash", "wall_ms")


def camera_for(cfg: ExperimentConfig, eye, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> Camera:
    return Camera.look_at(eye, target, up, width=cfg.width, height=cfg.height, fov_y=np.deg2rad(cfg.fov_deg))


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def over_black(image) -> np.ndarray:
    """Premultiplied RGBA -> RGB on black (just the colour channels)."""
    return np.asarray(value(image))[..., :3]


def write_loss_csv(path: str, history: History) -> None:
    save_csv(path, LOSS_HEADER, ((r.iteration, r.loss, r.param_hash, r.wall_ms) for r in history.records))


def write_standard_outputs(out: str, initial, final, target, history: History, prefix: str = "") -> None:
    """Initial, final and target renders plus the loss CSV and curve."""
    ensure_dir(out)
    save_png(os.path.join(out, f"{prefix}initial.png"), initial)
    save_png(os.path.join(out, f"{prefix}final.png"), final)
    save_png(os.path.join(out, f"{prefix}target.png"), target)
    write_loss_csv(os.path.join(out, f"{prefix}loss.csv"), history)
    if history.records:
        losses = np.maximum(history.losses, 1e-300)
        loss_curves(os.path.join(out, f"{prefix}loss.png"), {"loss": ([r.iteration for r in history.records], losses)})


@dataclass
class FitResult:
    params: np.ndarray
    history: History
    aborted: Optional[str] = None
    extras: dict = field(default_factory=dict)


def optimize(
    loss_fn: Callable,
    x0,
    optimizer: str,
    iters: int,
    lr: float,
    residual_fn: Optional[Callable] = None,
    stop_below: Optional[float] = None,
    project: Optional[Callable] = None,
    guard: Optional[DivergenceGuard] = None,
) -> FitResult:
    """Generic loop; records the loss *before* each update (iteration 0 is
    the initial loss) and once more after the last update.  Stops early at
    an exact zero loss or below ``stop_below``.

    ``loss_fn(x)`` must return a scalar expression (reverse mode is applied);
    LM instead uses ``residual_fn(x)`` (forward-mode Jacobian) with loss
    ``mean(r^2)``.
    """
    x = np.array(x0, dtype=np.float64)
    history = History()
    guard = guard or DivergenceGuard()
    adam = AdamState.zeros_like(x)
    lm = LMState()
    start = time.perf_counter()
    aborted = None

    def record(it: int, loss: float) -> None:
        history.append(it, loss, x, (time.perf_counter() - start) * 1e3)

    try:
        for it in range(iters + 1):
            if optimizer == "lm":
                if residual_fn is None:
                    raise ValueError("Levenberg-Marquardt needs a residual function")
                r = np.asarray(value(residual_fn(x))).reshape(-1)
                loss = float(np.mean(r * r))
            else:
                loss, g = ad.value_and_grad(loss_fn, x)
            record(it, loss)
            guard.check(loss, it)
            if it == iters or loss == 0.0 or (stop_below is not None and loss < stop_below):
                break
            if optimizer == "lm":
                x, lm, _ = step_lm(residual_fn, x, lm)
            elif optimizer == "adam":
                x, adam = step_adam(x, g, adam, lr)
            else:
                x = step_gd(x, g, lr)
            if project is not None:
                x = project(x)
    except OptimizationAborted as exc:
        aborted = str(exc)
    return FitResult(x, history, aborted)
