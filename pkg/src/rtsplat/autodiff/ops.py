"""Differentiable numpy-style functions built on the core primitives."""
from __future__ import annotations

import numpy as np

from . import core
from .core import apply, value


def exp(x):
    return apply(core.EXP, x)


def log(x):
    return apply(core.LOG, x)


def sqrt(x):
    return apply(core.SQRT, x)


def sin(x):
    return apply(core.SIN, x)


def cos(x):
    return apply(core.COS, x)


def tanh(x):
    return apply(core.TANH, x)


def absolute(x):
    return apply(core.ABS, x)


def maximum(a, b):
    """Elementwise max; on ties the derivative follows ``a``."""
    return apply(core.MAXIMUM, a, b)


def minimum(a, b):
    """Elementwise min; on ties the derivative follows ``a``."""
    return apply(core.MINIMUM, a, b)


def clip(x, lo, hi):
    return minimum(maximum(x, lo), hi)


def where(cond, a, b):
    return apply(core.WHERE, a, b, cond=np.asarray(cond, dtype=bool))


def floor(x) -> np.ndarray:
    """Floor as a locally constant function: the result carries no derivative."""
    return np.floor(value(x))


def sum(x, axis=None, keepdims=False):  # noqa: A001
    return apply(core.SUM, x, axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims=False):
    shape = np.shape(value(x))
    n = np.prod(shape) if axis is None else np.prod([shape[a] for a in np.atleast_1d(axis)])
    return sum(x, axis=axis, keepdims=keepdims) / float(n)


def reshape(x, shape):
    return apply(core.RESHAPE, x, shape=tuple(shape))


def transpose(x, axes=None):
    return apply(core.TRANSPOSE, x, axes=None if axes is None else tuple(axes))


def stack(arrays, axis=0):
    return apply(core.STACK, *arrays, axis=axis)


def concatenate(arrays, axis=0):
    return apply(core.CONCATENATE, *arrays, axis=axis)


def pad(x, pad_width):
    """Zero padding; ``pad_width`` is one ``(before, after)`` pair per axis."""
    return apply(core.PAD, x, pad_width=tuple(tuple(int(v) for v in p) for p in pad_width))


def take(x, indices):
    """Gather rows of ``x`` (axis 0); the backward pass scatter-adds."""
    return apply(core.TAKE, x, indices=np.asarray(indices, dtype=np.int64))


def broadcast_to(x, shape):
    return apply(core.BROADCAST_TO, x, shape=tuple(shape))


def sparse_dot(matrix, x):
    """``matrix @ x`` for a constant scipy sparse ``matrix`` and differentiable ``x``."""
    return apply(core.SPARSE_DOT, x, matrix=matrix)


def square(x):
    return x * x


def norm(x, axis=-1, eps=1e-24):
    """Euclidean norm along ``axis``; ``eps`` keeps the derivative finite at 0."""
    return sqrt(sum(x * x, axis=axis) + eps)


def dot(a, b, axis=-1):
    return sum(a * b, axis=axis)


def zeros_like(x) -> np.ndarray:
    return np.zeros(np.shape(value(x)))


def stop_gradient(x) -> np.ndarray:
    return np.array(value(x))
