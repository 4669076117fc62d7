"""Figures written to files (matplotlib, non-interactive backend)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def signed_range(*images) -> float:
    """Symmetric colour range shared by several signed images."""
    m = max(float(np.max(np.abs(im))) for im in images) if images else 0.0
    return m if m > 0 else 1.0


def derivative_panel(path, images: dict, vmax: float = None, title: str = "") -> float:
    """Side-by-side signed images with a blue-white-red map; returns the range."""
    vmax = signed_range(*images.values()) if vmax is None else vmax
    n = len(images)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.4), squeeze=False)
    for ax, (name, im) in zip(axes[0], images.items()):
        h = ax.imshow(im, cmap="bwr", vmin=-vmax, vmax=vmax, interpolation="nearest")
        ax.set_title(name, fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(h, ax=list(axes[0]), shrink=0.8)
    if title:
        fig.suptitle(title, fontsize=10)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return vmax


def loss_curves(path, curves: dict, log_scale: bool = True, ylabel: str = "loss") -> None:
    """One line per named ``(iterations, losses)`` pair."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, (it, loss) in curves.items():
        ax.plot(it, loss, label=name)
    if log_scale:
        ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def overlap_image(current: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Mask agreement in RGB: both set -> black, only target -> red,
    only current -> green, neither -> white."""
    cur = np.asarray(current) > 0.5
    tgt = np.asarray(target) > 0.5
    out = np.ones(cur.shape + (3,))
    out[cur & tgt] = 0.0
    out[tgt & ~cur] = [1.0, 0.0, 0.0]
    out[cur & ~tgt] = [0.0, 1.0, 0.0]
    return out


def image_grid(path, images: dict) -> None:
    n = len(images)
    fig, axes = plt.subplots(1, n, figsize=(3.0 * n, 3.2), squeeze=False)
    for ax, (name, im) in zip(axes[0], images.items()):
        ax.imshow(np.clip(im, 0, 1), interpolation="nearest")
        ax.set_title(name, fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
