"""Forward- and reverse-mode automatic differentiation over numpy arrays."""
from .core import (
    DiffArray,
    Dual,
    EvaluationDomainError,
    Tape,
    Var,
    is_diff,
    value,
)
from .ops import (
    absolute,
    broadcast_to,
    clip,
    concatenate,
    cos,
    dot,
    exp,
    floor,
    log,
    maximum,
    mean,
    minimum,
    norm,
    pad,
    reshape,
    sin,
    sparse_dot,
    sqrt,
    square,
    stack,
    stop_gradient,
    sum,
    take,
    tanh,
    transpose,
    where,
    zeros_like,
)
from .transforms import (
    central_difference,
    check_gradient,
    grad,
    jacobian_forward,
    jvp,
    relative_error,
    value_and_grad,
    value_and_jacobian,
)

__all__ = [name for name in dir() if not name.startswith("_")]
