"""Derivative transformations: gradients, forward Jacobians, gradient checks."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .core import Dual, Tape, Var, value


def _as_tuple(x):
    if isinstance(x, (tuple, list)):
        return tuple(np.asarray(v, dtype=np.float64) for v in x), True
    return (np.asarray(x, dtype=np.float64),), False


def value_and_grad(f: Callable, x):
    """Evaluate scalar ``f(x)`` and its gradient with one reverse sweep.

    ``x`` is an array or a tuple/list of arrays; the gradient mirrors it.
    """
    xs, multi = _as_tuple(x)
    tape = Tape()
    inputs = [tape.variable(v) for v in xs]
    out = f(*inputs) if multi else f(inputs[0])
    if not isinstance(out, Var):
        grads = tuple(np.zeros(v.shape) for v in xs)
        return float(np.asarray(out)), (grads if multi else grads[0])
    if out.size != 1:
        raise ValueError(f"gradient needs a scalar output, got shape {out.shape}")
    adj = tape.backward(out)
    grads = tuple(
        np.zeros(v.shape) if adj[i.index] is None else np.array(adj[i.index]).reshape(v.shape)
        for i, v in zip(inputs, xs)
    )
    return float(out.value), (grads if multi else grads[0])


def grad(f: Callable, x):
    return value_and_grad(f, x)[1]


def jvp(f: Callable, x, directions):
    """Push ``directions`` (``x.shape + (n,)``) through ``f`` in forward mode.

    Returns ``(value, tangent)`` with ``tangent.shape == value.shape + (n,)``.
    """
    x = np.asarray(x, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    if directions.shape == x.shape:
        directions = directions[..., None]
    out = f(Dual(x, directions))
    if isinstance(out, Dual):
        return out.value, out.tangent
    out = np.asarray(out, dtype=np.float64)
    return out, np.zeros(out.shape + (directions.shape[-1],))


def value_and_jacobian(f: Callable, x):
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    seeds = np.eye(n).reshape(x.shape + (n,))
    val, tan = jvp(f, x, seeds)
    return val, tan.reshape(val.size, n)


def jacobian_forward(f: Callable, x) -> np.ndarray:
    """Full ``(m, n)`` Jacobian by seeding all ``n`` input directions at once."""
    return value_and_jacobian(f, x)[1]


def relative_error(a, b, floor: float = 1e-8) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def central_difference(f: Callable, x, h) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    h = np.broadcast_to(np.asarray(h, dtype=np.float64), x.shape)
    out = np.zeros(x.shape)
    for i in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        out[i] = (float(value(f(xp))) - float(value(f(xm)))) / (2.0 * h[i])
    return out


def check_gradient(f: Callable, x, h=1e-5, floor: float = 1e-8) -> float:
    """Worst componentwise relative error of the reverse-mode gradient
    against central differences with step ``h`` (scalar or per component)."""
    if np.any(np.asarray(h) <= 0):
        raise ValueError("finite-difference step must be positive")
    analytic = grad(f, x)
    numeric = central_difference(f, x, h)
    return relative_error(analytic, numeric, floor)
