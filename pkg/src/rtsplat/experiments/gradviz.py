"""Image derivatives with respect to an object translation.

For each scene the derivative image dS/dt is computed four ways: central
finite differences of the full pipeline (one pixel of motion), forward-mode
autodiff through 1-layer and 2-layer splatting, and the shaded buffer
without splatting.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable, List

import numpy as np
from scipy import ndimage

from .. import autodiff as ad
from ..autodiff import value
from ..io import save_csv, save_pfm, save_png
from ..optim import loss_l2
from ..plotting import derivative_panel
from ..render import render_scene, sample
from ..scene import Camera
from ..scenes import icosphere, quad
from ..shading import shade_flat
from .common import ensure_dir, over_black
from .config import ExperimentConfig

GREEN = (0.0, 1.0, 0.0)
RED = (1.0, 0.0, 0.0)
METHODS = ("fd", "rts1", "rts2", "nosplat")
_MODE = {"rts1": "single", "rts2": "multi", "nosplat": "none"}


@dataclass
class Part:
    mesh: object
    offset: np.ndarray
    color: tuple
    moving: bool


@dataclass
class GradScene:
    name: str
    parts: List[Part]
    depth: float  # of the moving object, for the one-pixel step
    closed: bool = False  # closed meshes cull back faces

    def image(self, t, camera: Camera, mode: str, layers: int = 2, workers: int = 1):
        items = []
        for part in self.parts:
            if part.moving:
                pose = ad.concatenate([np.zeros(3), ad.reshape(t, (1,)) + part.offset[0], part.offset[1:]])
            else:
                pose = np.concatenate([np.zeros(3), part.offset])
            items.append((part.mesh, pose, _flat(part.color)))
        return render_scene(items, camera, layers=layers, mode=mode, workers=workers, cull_backfaces=self.closed)

    def coverage(self, camera: Camera, layers: int = 2):
        """Per part, the sampled validity ``(K, H, W)`` at ``t = 0``."""
        out = []
        for part in self.parts:
            pose = np.concatenate([np.zeros(3), part.offset])
            out.append(sample(part.mesh, camera, pose, layers, cull_backfaces=self.closed).valid)
        return out


def _flat(color) -> Callable:
    return lambda g: shade_flat(g, color)


def scenes() -> List[GradScene]:
    return [
        GradScene("square", [Part(quad(1.2), np.array([0.0, 0.0, 5.0]), GREEN, True)], 5.0),
        GradScene("blob", [Part(icosphere(3, 0.7), np.array([0.0, 0.0, 5.0]), GREEN, True)], 4.3, closed=True),
        GradScene(
            "occlusion",
            [
                Part(quad(1.0), np.array([0.0, 0.0, 4.0]), GREEN, False),
                Part(quad(1.4), np.array([-0.5, 0.0, 6.0]), RED, True),
            ],
            6.0,
        ),
    ]


def gradviz_camera(cfg: ExperimentConfig) -> Camera:
    return Camera(cfg.width, cfg.height, np.deg2rad(cfg.fov_deg))


def derivative_images(scene: GradScene, camera: Camera, layers: int = 2, workers: int = 1) -> dict:
    """``method -> (H, W, 4)`` derivative images at ``t = 0``."""
    h = scene.depth / camera.focal  # one pixel of screen motion
    out = {}
    plus = value(scene.image(np.array(h), camera, "multi", layers, workers))
    minus = value(scene.image(np.array(-h), camera, "multi", layers, workers))
    out["fd"] = (plus - minus) / (2.0 * h)
    for method, mode in _MODE.items():
        _, tangent = ad.jvp(lambda t: scene.image(t, camera, mode, layers, workers), np.array(0.0), np.array(1.0))
        out[method] = tangent[..., 0]
    return out


def loss_derivatives(scene: GradScene, camera: Camera, target_px: float = 1.0, layers: int = 2, workers: int = 1) -> dict:
    """d(L2 loss)/dt against a target shifted by ``target_px`` pixels."""
    h = scene.depth / camera.focal
    target = value(scene.image(np.array(target_px * h), camera, "multi", layers, workers))

    def loss(t, mode="multi"):
        return loss_l2(scene.image(t, camera, mode, layers, workers), target)

    fd = (float(value(loss(np.array(h)))) - float(value(loss(np.array(-h))))) / (2.0 * h)
    out = {"fd": fd}
    for method, mode in _MODE.items():
        out[method] = float(ad.grad(lambda t: loss(t, mode), np.array(0.0)))
    return out


def correlation(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt((a @ a) * (b @ b))
    return float(a @ b / den) if den > 0 else 0.0


def energy(image, mask) -> float:
    return float(np.sum(np.asarray(image)[mask] ** 2))


def regions(scene: GradScene, camera: Camera, layers: int = 2) -> dict:
    """Masks used for the metrics.

    ``boundary``: pixels within 2 px of the moving object's visible outline.
    ``occluded``: pixels where a static part is in front of the moving one.
    """
    cov = scene.coverage(camera, layers)
    moving = [c for c, p in zip(cov, scene.parts) if p.moving][0]
    static = [c for c, p in zip(cov, scene.parts) if not p.moving]
    front_static = np.zeros(moving.shape[1:], bool)
    for c in static:
        front_static |= c[0]
    visible = moving[0] & ~front_static
    edge = ndimage.binary_dilation(visible, iterations=2) & ~ndimage.binary_erosion(visible, iterations=2)
    occluded = front_static & moving.any(axis=0)
    return {"boundary": edge, "occluded": occluded}


def run_derivative_viz(cfg: ExperimentConfig) -> dict:
    out = ensure_dir(cfg.out)
    camera = gradviz_camera(cfg)
    chosen = [s for s in scenes() if not cfg.variant or s.name == cfg.variant]
    if not chosen:
        raise ValueError(f"unknown gradviz scene '{cfg.variant}'")
    rows, results = [], {}
    for scene in chosen:
        imgs = derivative_images(scene, camera, cfg.layers, cfg.workers)
        dl = loss_derivatives(scene, camera, layers=cfg.layers, workers=cfg.workers)
        masks = regions(scene, camera, cfg.layers)
        rgb = {m: imgs[m][..., :3] for m in METHODS}
        signed = {m: rgb[m].sum(axis=-1) for m in METHODS}
        vmax = derivative_panel(os.path.join(out, f"{scene.name}_derivatives.png"), signed, title=f"dS/dt, {scene.name}")
        save_png(os.path.join(out, f"{scene.name}_render.png"), over_black(scene.image(np.array(0.0), camera, "multi", cfg.layers, cfg.workers)))
        for m in METHODS:
            save_pfm(os.path.join(out, f"{scene.name}_{m}.pfm"), rgb[m])
        for m in METHODS:
            row = {
                "scene": scene.name,
                "method": m,
                "dloss_dt": dl[m],
                "fd_dloss_dt": dl["fd"],
                "rel_err": abs(dl[m] - dl["fd"]) / max(abs(dl["fd"]), 1e-300),
                "correlation": correlation(imgs[m], imgs["fd"]),
                "energy_total": energy(imgs[m], np.ones(masks["boundary"].shape, bool)),
                "energy_boundary": energy(imgs[m], masks["boundary"]),
                "energy_occluded": energy(imgs[m], masks["occluded"]),
                "vmax": vmax,
            }
            rows.append(row)
        results[scene.name] = {"images": imgs, "loss": dl, "masks": masks}
    header = list(rows[0].keys())
    save_csv(os.path.join(out, "metrics.csv"), header, ([r[k] for k in header] for r in rows))
    return {"rows": rows, "scenes": results}
