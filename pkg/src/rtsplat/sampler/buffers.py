from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass
class SampleBuffer:
    """Non-differentiable surface parameters for ``K`` layers of pixels.

    Only the fields matching ``kind`` are populated:

    ``mesh``      face id + perspective-correct barycentrics
    ``spline``    patch id + patch parameters ``(u, v)``
    ``implicit``  six lattice indices (three crossing edges) + barycentrics
    ``position``  constant object-space positions (pose-only fast path)

    ``depth`` (normalised, sampling-time) is used only to pair layers.
    Invalid entries carry zeros (ids of -1).
    """

    kind: str
    valid: np.ndarray  # (K, H, W)
    depth: np.ndarray  # (K, H, W)
    face: Optional[np.ndarray] = None  # (K, H, W)
    bary: Optional[np.ndarray] = None  # (K, H, W, 3)
    patch: Optional[np.ndarray] = None  # (K, H, W)
    uv: Optional[np.ndarray] = None  # (K, H, W, 2)
    lattice: Optional[np.ndarray] = None  # (K, H, W, 6) flat lattice indices
    position: Optional[np.ndarray] = None  # (K, H, W, 3)
    degenerate_eps: float = 0.0

    @property
    def layers(self) -> int:
        return self.valid.shape[0]

    @property
    def height(self) -> int:
        return self.valid.shape[1]

    @property
    def width(self) -> int:
        return self.valid.shape[2]

    def arrays(self) -> dict:
        names = ("valid", "depth", "face", "bary", "patch", "uv", "lattice", "position")
        return {n: getattr(self, n) for n in names if getattr(self, n) is not None}

    def channels(self) -> dict:
        """Float32 image channels ``name -> (H, W)`` for debug dumps."""
        out = {}
        for name, arr in self.arrays().items():
            arr = np.asarray(arr)
            for k in range(self.layers):
                layer = arr[k]
                if layer.ndim == 2:
                    out[f"{name}_L{k}"] = layer.astype(np.float32)
                else:
                    for c in range(layer.shape[-1]):
                        out[f"{name}{c}_L{k}"] = layer[..., c].astype(np.float32)
        return out

    def same_as(self, other: "SampleBuffer") -> bool:
        """Bit-identical comparison of every populated field."""
        a, b = self.arrays(), other.arrays()
        if self.kind != other.kind or a.keys() != b.keys():
            return False
        return all(np.array_equal(a[k], b[k]) and a[k].dtype == b[k].dtype for k in a)
