"""Losses, the Laplacian regularizer, and GD / Adam / Levenberg-Marquardt."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import value
from .scene import TriangleMesh

log = logging.getLogger(__name__)


class OptimizationAborted(RuntimeError):
    """An optimizer could not continue (divergence or a singular system)."""


# ---------------------------------------------------------------- losses


def _check_shapes(rendered, target) -> None:
    a, b = np.shape(value(rendered)), np.shape(value(target))
    if a != b:
        raise ValueError(f"image shapes differ: {a} vs {b}")


def loss_l2(rendered, target):
    """Mean squared difference over pixels and channels."""
    _check_shapes(rendered, target)
    return ad.mean(ad.square(rendered - target))


def loss_l1(rendered, target):
    """Mean absolute difference; the subgradient at 0 is 0."""
    _check_shapes(rendered, target)
    return ad.mean(ad.absolute(rendered - target))


def uniform_laplacian(faces: np.ndarray, num_vertices: int) -> sp.csr_matrix:
    """``L v`` = vertex minus the mean of its one-ring; isolated rows are 0."""
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    i = np.concatenate([f[:, 0], f[:, 1], f[:, 2], f[:, 1], f[:, 2], f[:, 0]])
    j = np.concatenate([f[:, 1], f[:, 2], f[:, 0], f[:, 0], f[:, 1], f[:, 2]])
    adj = sp.coo_matrix((np.ones(len(i)), (i, j)), shape=(num_vertices, num_vertices)).tocsr()
    adj.data[:] = 1.0  # each undirected edge once
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    lap = sp.diags((deg > 0).astype(np.float64)) - sp.diags(inv) @ adj
    return lap.tocsr()


def regularize_laplacian(mesh: TriangleMesh, vertices=None, laplacian: Optional[sp.csr_matrix] = None):
    """Mean over vertices of ``|L v|^2``."""
    v = mesh.vertices if vertices is None else vertices
    if mesh.num_faces == 0:
        raise ValueError("the regularizer needs at least one edge")
    L = uniform_laplacian(mesh.faces, mesh.num_vertices) if laplacian is None else laplacian
    d = ad.sparse_dot(L, v)
    return ad.sum(ad.square(d)) / float(mesh.num_vertices)


# ---------------------------------------------------------------- records


def param_hash(params) -> str:
    arr = np.ascontiguousarray(value(params), dtype=np.float64)
    return hashlib.sha256(arr.tobytes()).hexdigest()[:16]


@dataclass
class LossRecord:
    iteration: int
    loss: float
    param_hash: str
    wall_ms: float


@dataclass
class History:
    records: List[LossRecord] = field(default_factory=list)

    def append(self, iteration: int, loss: float, params, wall_ms: float) -> None:
        if self.records and iteration <= self.records[-1].iteration:
            raise ValueError("iterations must be strictly increasing")
        self.records.append(LossRecord(iteration, float(loss), param_hash(params), float(wall_ms)))

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    def first_below(self, threshold: float) -> Optional[int]:
        for r in self.records:
            if r.loss < threshold:
                return r.iteration
        return None


# ---------------------------------------------------------------- first-order steps


def step_gd(params, grad, lr: float) -> np.ndarray:
    return np.asarray(params, dtype=np.float64) - lr * np.asarray(grad, dtype=np.float64)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        shape = np.shape(params)
        return cls(np.zeros(shape), np.zeros(shape), 0)


def step_adam(params, grad, state: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam; returns ``(new_params, new_state)``."""
    g = np.asarray(grad, dtype=np.float64)
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new = np.asarray(params, dtype=np.float64) - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new, AdamState(m, v, t)


# ---------------------------------------------------------------- Levenberg-Marquardt


@dataclass
class LMState:
    damping: float = 1e-3
    loss: Optional[float] = None
    jacobian: Optional[np.ndarray] = None
    residuals: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if not self.damping > 0:
            raise ValueError("damping must be positive")


LM_ACCEPT = 0.5
LM_REJECT = 4.0
LM_MAX_RETRIES = 12
LM_MIN_DAMPING = 1e-12


def step_lm(residual_fn: Callable, params, state: LMState, max_retries: int = LM_MAX_RETRIES):
    """One damped Gauss-Newton step on ``0.5 * |r|^2``.

    Solves ``(J^T J + lambda diag(J^T J)) delta = -J^T r`` with the forward-mode
    Jacobian; accepted steps halve lambda, rejected ones quadruple it and retry.
    Returns ``(params, state, accepted)``.
    """
    x = np.asarray(params, dtype=np.float64)
    r, J = ad.value_and_jacobian(residual_fn, x)
    r = r.reshape(-1)
    loss = 0.5 * float(r @ r)
    g = J.T @ r
    JtJ = J.T @ J
    diag = np.diag(JtJ).copy()
    lam = state.damping
    if loss == 0.0 or not np.any(g):
        return x, LMState(lam, loss, J, r), True
    for _ in range(max_retries + 1):
        A = JtJ + lam * np.diag(np.where(diag > 0, diag, 1.0))
        try:
            delta = np.linalg.solve(A, -g)
        except np.linalg.LinAlgError as exc:
            raise OptimizationAborted(f"singular normal equations at damping {lam:g}") from exc
        trial = x + delta
        r_new = np.asarray(value(residual_fn(trial)), dtype=np.float64).reshape(-1)
        new_loss = 0.5 * float(r_new @ r_new)
        if np.isfinite(new_loss) and new_loss <= loss:
            lam = max(lam * LM_ACCEPT, LM_MIN_DAMPING)
            return trial, LMState(lam, new_loss, J, r_new), True
        lam *= LM_REJECT
    return x, LMState(lam, loss, J, r), False


# ---------------------------------------------------------------- loop helpers


class DivergenceGuard:
    """Abort once the loss exceeds ``factor`` times its first value."""

    def __init__(self, factor: float = 10.0) -> None:
        self.factor = factor
        self.initial: Optional[float] = None

    def check(self, loss: float, iteration: int) -> None:
        if self.initial is None:
            self.initial = loss
            return
        if not np.isfinite(loss) or loss > self.factor * max(self.initial, 1e-300):
            raise OptimizationAborted(
                f"diverged at iteration {iteration}: loss {loss:g} > {self.factor:g} x initial {self.initial:g}"
            )
