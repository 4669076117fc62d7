"""Array-valued automatic differentiation.

Two differentiable array types share one set of primitives:

* :class:`Var` records every operation on a :class:`Tape`; a single reverse
  sweep over the tape yields gradients of a scalar output (reverse mode).
* :class:`Dual` carries, next to its value, a tangent array with one extra
  trailing axis holding the partials w.r.t. ``n`` seeded directions
  (forward mode, batched duals).

Each primitive is declared once with its value, JVP and VJP rules; plain
``numpy`` inputs pass straight through, so the same pipeline code evaluates
undifferentiated (e.g. for finite differences).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

import numpy as np


class EvaluationDomainError(ArithmeticError):
    """A differentiable operation produced a non-finite value."""


#: When set, every differentiable op checks its output for NaN/inf.
CHECK_FINITE = True


@dataclass(frozen=True)
class Primitive:
    name: str
    impl: Callable[..., np.ndarray]
    # jvp(values, tangents, out, **params); tangents entries are None for constants
    jvp: Callable[..., Optional[np.ndarray]]
    # vjp(g, values, out, **params) -> one cotangent (or None) per argument
    vjp: Callable[..., Sequence[Optional[np.ndarray]]]


@dataclass
class Node:
    op: str
    parents: tuple
    vjp: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]]


class Tape:
    """Ordered record of operations; node ``i`` only references nodes ``< i``."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def variable(self, value) -> "Var":
        value = np.array(value, dtype=np.float64)
        self.nodes.append(Node("input", (), None))
        return Var(value, self, len(self.nodes) - 1)

    def _record(self, op: str, parents: tuple, vjp) -> int:
        self.nodes.append(Node(op, parents, vjp))
        return len(self.nodes) - 1

    def backward(self, out: "Var", seed=None) -> list:
        """Reverse sweep from ``out``; returns the adjoint of every node."""
        if out.tape is not self:
            raise ValueError("output was not recorded on this tape")
        grads: list = [None] * len(self.nodes)
        grads[out.index] = np.ones(out.shape) if seed is None else np.asarray(seed, float)
        for i in range(out.index, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.vjp is None:
                continue
            for parent, ct in zip(node.parents, node.vjp(g)):
                if parent is None or ct is None:
                    continue
                grads[parent] = ct if grads[parent] is None else grads[parent] + ct
        return grads


class DiffArray:
    """Operator overloading shared by :class:`Var` and :class:`Dual`."""

    __slots__ = ()
    __array_ufunc__ = None  # make numpy defer to our reflected operators
    __array_priority__ = 1000

    value: np.ndarray

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def __len__(self):
        return len(self.value)

    def __add__(self, other):
        return apply(ADD, self, other)

    def __radd__(self, other):
        return apply(ADD, other, self)

    def __sub__(self, other):
        return apply(SUB, self, other)

    def __rsub__(self, other):
        return apply(SUB, other, self)

    def __mul__(self, other):
        return apply(MUL, self, other)

    def __rmul__(self, other):
        return apply(MUL, other, self)

    def __truediv__(self, other):
        return apply(DIV, self, other)

    def __rtruediv__(self, other):
        return apply(DIV, other, self)

    def __neg__(self):
        return apply(NEG, self)

    def __pos__(self):
        return self

    def __pow__(self, exponent):
        if isinstance(exponent, DiffArray):
            raise TypeError("only constant exponents are supported")
        return apply(POW, self, exponent=float(exponent))

    def __abs__(self):
        return apply(ABS, self)

    def __getitem__(self, idx):
        return apply(GETITEM, self, idx=idx)

    def sum(self, axis=None, keepdims=False):
        return apply(SUM, self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply(RESHAPE, self, shape=shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return apply(TRANSPOSE, self, axes=axes or None)

    @property
    def T(self):
        return self.transpose()


class Var(DiffArray):
    """Reverse-mode array: a value plus its node index on a tape."""

    __slots__ = ("value", "tape", "index")

    def __init__(self, value: np.ndarray, tape: Tape, index: int) -> None:
        value.flags.writeable = False
        self.value = value
        self.tape = tape
        self.index = index

    def __repr__(self) -> str:
        return f"Var(node={self.index}, value={self.value!r})"


class Dual(DiffArray):
    """Forward-mode array; ``tangent.shape == value.shape + (n,)``."""

    __slots__ = ("value", "tangent")

    def __init__(self, value, tangent) -> None:
        value = np.asarray(value, dtype=np.float64)
        tangent = np.asarray(tangent, dtype=np.float64)
        if tangent.shape[:-1] != value.shape:
            raise ValueError(f"tangent shape {tangent.shape} does not extend {value.shape}")
        self.value = value
        self.tangent = tangent

    @property
    def directions(self) -> int:
        return self.tangent.shape[-1]

    def __repr__(self) -> str:
        return f"Dual(value={self.value!r}, directions={self.directions})"


def value(x) -> np.ndarray:
    """The plain numeric value of ``x`` (no derivative information)."""
    if isinstance(x, DiffArray):
        return x.value
    return np.asarray(x, dtype=np.float64)


def is_diff(x) -> bool:
    return isinstance(x, DiffArray)


def _domain_error(prim: Primitive, out: np.ndarray, where: str) -> EvaluationDomainError:
    bad = np.argwhere(~np.isfinite(out))
    at = tuple(int(i) for i in bad[0]) if bad.size else ()
    return EvaluationDomainError(
        f"non-finite result from '{prim.name}' at {where}, element {at}"
    )


def apply(prim: Primitive, *args, **params):
    vals = tuple(value(a) for a in args)
    # non-finite results are reported below as EvaluationDomainError
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        out = np.asarray(prim.impl(*vals, **params), dtype=np.float64)
    vars_ = [a for a in args if isinstance(a, Var)]
    duals = [a for a in args if isinstance(a, Dual)]
    if not vars_ and not duals:
        return out
    if vars_ and duals:
        raise TypeError("cannot mix forward- and reverse-mode values in one op")
    if vars_:
        tape = vars_[0].tape
        if any(v.tape is not tape for v in vars_):
            raise ValueError("operands were recorded on different tapes")
        if CHECK_FINITE and not np.all(np.isfinite(out)):
            raise _domain_error(prim, out, f"tape node {len(tape)}")
        parents = tuple(a.index if isinstance(a, Var) else None for a in args)
        idx = tape._record(prim.name, parents, lambda g: prim.vjp(g, vals, out, **params))
        return Var(out, tape, idx)
    if CHECK_FINITE and not np.all(np.isfinite(out)):
        raise _domain_error(prim, out, "forward evaluation")
    n = duals[0].directions
    if any(d.directions != n for d in duals):
        raise ValueError("dual operands carry different numbers of directions")
    tangents = tuple(a.tangent if isinstance(a, Dual) else None for a in args)
    t = prim.jvp(vals, tangents, out, **params)
    if t is None:
        t = np.zeros(out.shape + (n,))
    else:
        t = np.broadcast_to(t, out.shape + (n,))
    return Dual(out, t)


# ---------------------------------------------------------------- helpers


def _e(x):
    """Append a broadcast axis so a value array lines up with tangents."""
    return np.asarray(x)[..., None]


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _tsum(*terms):
    terms = [t for t in terms if t is not None]
    if not terms:
        return None
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    return tuple(sorted(a % ndim for a in np.atleast_1d(axis)))


def _tangent_index(idx):
    idx = idx if isinstance(idx, tuple) else (idx,)
    if any(i is Ellipsis for i in idx):
        return idx + (slice(None),)
    return idx


def _is_basic_index(idx) -> bool:
    idx = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis for i in idx)


# ---------------------------------------------------------------- elementwise


def _binary_vjp(da, db):
    def vjp(g, vals, out, **_):
        a, b = vals
        return _unbroadcast(da(g, a, b, out), a.shape), _unbroadcast(db(g, a, b, out), b.shape)

    return vjp


ADD = Primitive(
    "add",
    np.add,
    lambda v, t, out: _tsum(t[0], t[1]),
    _binary_vjp(lambda g, a, b, o: g, lambda g, a, b, o: g),
)

SUB = Primitive(
    "sub",
    np.subtract,
    lambda v, t, out: _tsum(t[0], None if t[1] is None else -t[1]),
    _binary_vjp(lambda g, a, b, o: g, lambda g, a, b, o: -g),
)

MUL = Primitive(
    "mul",
    np.multiply,
    lambda v, t, out: _tsum(
        None if t[0] is None else t[0] * _e(v[1]),
        None if t[1] is None else _e(v[0]) * t[1],
    ),
    _binary_vjp(lambda g, a, b, o: g * b, lambda g, a, b, o: g * a),
)

DIV = Primitive(
    "div",
    np.divide,
    lambda v, t, out: _tsum(
        None if t[0] is None else t[0] / _e(v[1]),
        None if t[1] is None else -_e(out / v[1]) * t[1],
    ),
    _binary_vjp(lambda g, a, b, o: g / b, lambda g, a, b, o: -g * o / b),
)


def _unary(name, impl, deriv):
    """Elementwise primitive with derivative ``deriv(x, out)``."""
    return Primitive(
        name,
        impl,
        lambda v, t, out: None if t[0] is None else _e(deriv(v[0], out)) * t[0],
        lambda g, v, out: (g * deriv(v[0], out),),
    )


NEG = Primitive("neg", np.negative, lambda v, t, out: None if t[0] is None else -t[0], lambda g, v, out: (-g,))
EXP = _unary("exp", np.exp, lambda x, out: out)
LOG = _unary("log", np.log, lambda x, out: 1.0 / x)
SQRT = _unary("sqrt", np.sqrt, lambda x, out: 0.5 / out)
SIN = _unary("sin", np.sin, lambda x, out: np.cos(x))
COS = _unary("cos", np.cos, lambda x, out: -np.sin(x))
TANH = _unary("tanh", np.tanh, lambda x, out: 1.0 - out * out)
# subgradient 0 at 0
ABS = _unary("abs", np.abs, lambda x, out: np.sign(x))

POW = Primitive(
    "pow",
    lambda a, exponent: np.power(a, exponent),
    lambda v, t, out, exponent: None if t[0] is None else _e(exponent * np.power(v[0], exponent - 1)) * t[0],
    lambda g, v, out, exponent: (g * exponent * np.power(v[0], exponent - 1),),
)


def _select_prim(name, impl, pick_first):
    # ties go to the first argument
    def jvp(v, t, out):
        mask = _e(pick_first(v[0], v[1]))
        ta = 0.0 if t[0] is None else t[0]
        tb = 0.0 if t[1] is None else t[1]
        return np.where(mask, ta, tb)

    def vjp(g, v, out):
        a, b = v
        mask = pick_first(a, b)
        return _unbroadcast(np.where(mask, g, 0.0), a.shape), _unbroadcast(np.where(mask, 0.0, g), b.shape)

    return Primitive(name, impl, jvp, vjp)


MAXIMUM = _select_prim("maximum", lambda a, b: np.where(a >= b, a, b), lambda a, b: a >= b)
MINIMUM = _select_prim("minimum", lambda a, b: np.where(a <= b, a, b), lambda a, b: a <= b)


def _where_jvp(v, t, out, cond):
    ta = 0.0 if t[0] is None else t[0]
    tb = 0.0 if t[1] is None else t[1]
    return np.where(_e(cond), ta, tb)


def _where_vjp(g, v, out, cond):
    a, b = v
    return (
        _unbroadcast(np.where(cond, g, 0.0), a.shape),
        _unbroadcast(np.where(cond, 0.0, g), b.shape),
    )


WHERE = Primitive("where", lambda a, b, cond: np.where(cond, a, b), _where_jvp, _where_vjp)


# ---------------------------------------------------------------- reductions & shape


def _sum_jvp(v, t, out, axis, keepdims):
    if t[0] is None:
        return None
    axes = _norm_axes(axis, v[0].ndim)
    return t[0].sum(axis=axes, keepdims=keepdims)


def _sum_vjp(g, v, out, axis, keepdims):
    shape = v[0].shape
    axes = _norm_axes(axis, len(shape))
    if not keepdims:
        g = np.expand_dims(g, axes)
    return (np.broadcast_to(g, shape),)


SUM = Primitive("sum", lambda a, axis, keepdims: np.sum(a, axis=axis, keepdims=keepdims), _sum_jvp, _sum_vjp)

RESHAPE = Primitive(
    "reshape",
    lambda a, shape: np.reshape(a, shape),
    lambda v, t, out, shape: None if t[0] is None else t[0].reshape(out.shape + (t[0].shape[-1],)),
    lambda g, v, out, shape: (g.reshape(v[0].shape),),
)


def _transpose_axes(axes, ndim):
    return tuple(range(ndim))[::-1] if axes is None else tuple(a % ndim for a in axes)


TRANSPOSE = Primitive(
    "transpose",
    lambda a, axes: np.transpose(a, axes),
    lambda v, t, out, axes: None
    if t[0] is None
    else t[0].transpose(_transpose_axes(axes, v[0].ndim) + (v[0].ndim,)),
    lambda g, v, out, axes: (g.transpose(np.argsort(_transpose_axes(axes, v[0].ndim))),),
)


def _getitem_vjp(g, v, out, idx):
    z = np.zeros(v[0].shape)
    if _is_basic_index(idx):
        z[idx] = g
    else:
        np.add.at(z, idx, g)
    return (z,)


GETITEM = Primitive(
    "getitem",
    lambda a, idx: a[idx],
    lambda v, t, out, idx: None if t[0] is None else t[0][_tangent_index(idx)],
    _getitem_vjp,
)


def _take_vjp(g, v, out, indices):
    src = v[0]
    n = src.shape[0]
    flat_idx = np.asarray(indices).ravel()
    g2 = g.reshape(flat_idx.size, -1)
    cols = [np.bincount(flat_idx, weights=g2[:, c], minlength=n) for c in range(g2.shape[1])]
    return (np.stack(cols, axis=1).reshape(src.shape),)


TAKE = Primitive(
    "take",
    lambda a, indices: np.take(a, indices, axis=0),
    lambda v, t, out, indices: None if t[0] is None else np.take(t[0], indices, axis=0),
    _take_vjp,
)


def _stack_jvp(v, t, out, axis):
    if all(x is None for x in t):
        return None
    n = next(x for x in t if x is not None).shape[-1]
    parts = [np.zeros(a.shape + (n,)) if x is None else np.broadcast_to(x, a.shape + (n,)) for a, x in zip(v, t)]
    return np.stack(parts, axis=axis % out.ndim)


def _stack_vjp(g, v, out, axis):
    ax = axis % out.ndim
    return tuple(np.take(g, i, axis=ax) for i in range(len(v)))


STACK = Primitive("stack", lambda *a, axis: np.stack(a, axis=axis), _stack_jvp, _stack_vjp)


def _concat_jvp(v, t, out, axis):
    if all(x is None for x in t):
        return None
    n = next(x for x in t if x is not None).shape[-1]
    parts = [np.zeros(a.shape + (n,)) if x is None else np.broadcast_to(x, a.shape + (n,)) for a, x in zip(v, t)]
    return np.concatenate(parts, axis=axis % out.ndim)


def _concat_vjp(g, v, out, axis):
    ax = axis % out.ndim
    bounds = np.cumsum([a.shape[ax] for a in v])[:-1]
    return tuple(np.split(g, bounds, axis=ax))


CONCATENATE = Primitive(
    "concatenate", lambda *a, axis: np.concatenate(a, axis=axis), _concat_jvp, _concat_vjp
)


def _pad_slices(pad_width, shape):
    return tuple(slice(lo, lo + s) for (lo, _), s in zip(pad_width, shape))


PAD = Primitive(
    "pad",
    lambda a, pad_width: np.pad(a, pad_width),
    lambda v, t, out, pad_width: None if t[0] is None else np.pad(t[0], list(pad_width) + [(0, 0)]),
    lambda g, v, out, pad_width: (g[_pad_slices(pad_width, v[0].shape)],),
)

BROADCAST_TO = Primitive(
    "broadcast_to",
    lambda a, shape: np.broadcast_to(a, shape),
    lambda v, t, out, shape: None if t[0] is None else np.broadcast_to(t[0], tuple(shape) + (t[0].shape[-1],)),
    lambda g, v, out, shape: (_unbroadcast(g, v[0].shape),),
)


def _sparse_jvp(v, t, out, matrix):
    if t[0] is None:
        return None
    x = t[0]
    res = matrix @ x.reshape(x.shape[0], int(np.prod(x.shape[1:])))
    return np.asarray(res).reshape((matrix.shape[0],) + x.shape[1:])


def _sparse_vjp(g, v, out, matrix):
    res = matrix.T @ g.reshape(g.shape[0], int(np.prod(g.shape[1:])))
    return (np.asarray(res).reshape(v[0].shape),)


def _sparse_impl(a, matrix):
    res = matrix @ a.reshape(a.shape[0], int(np.prod(a.shape[1:])))
    return np.asarray(res).reshape((matrix.shape[0],) + a.shape[1:])


SPARSE_DOT = Primitive("sparse_dot", _sparse_impl, _sparse_jvp, _sparse_vjp)
