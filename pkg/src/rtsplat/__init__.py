"""Differentiable surface rendering via non-differentiable sampling and
depth-aware splatting ("rasterize then splat")."""

__version__ = "0.1.0"
