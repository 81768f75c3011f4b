"""Reverse-mode automatic differentiation over dense float64 arrays.

Nodes are vector-level: one tape entry per array operation. Every public
operation accepts plain numpy arrays as well; when none of the arguments is a
:class:`DVar` the result is computed directly and nothing is recorded, so the
same numerical code serves the differentiable training rollout and the fast
ensemble forecast.

Subgradient conventions at kinks: ``relu'(0) = 0``, ``abs'(0) = 0`` and ties in
``maximum``/``minimum`` send the whole gradient to the first argument.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tape",
    "DVar",
    "record",
    "backward",
    "vjp",
    "jacobian",
    "value_of",
    "is_dvar",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "matvec",
    "maximum",
    "minimum",
    "absolute",
    "sigmoid",
    "relu",
    "silu",
    "square",
    "total",
    "where",
    "concatenate",
    "reshape",
    "take",
    "swapaxes",
]


class ShapeError(ValueError):
    """Operands of a primitive have incompatible shapes."""


@dataclass
class _Node:
    op: str
    parents: tuple[int | None, ...]
    saved: tuple
    kwargs: dict = field(default_factory=dict)


class Tape:
    """Append-only record of primitive applications.

    ``nodes[k]`` only references ids smaller than ``k`` so a single reverse
    sweep over the list is a valid topological order.
    """

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self.values: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, value) -> "DVar":
        value = np.array(value, dtype=np.float64)
        return self._append(_Node("leaf", (), ()), value)

    def _append(self, node: _Node, value: np.ndarray) -> "DVar":
        self.nodes.append(node)
        self.values.append(value)
        return DVar(self, len(self.nodes) - 1)


class DVar:
    """Handle to one node of a :class:`Tape`."""

    __slots__ = ("tape", "id")
    __array_priority__ = 100.0

    def __init__(self, tape: Tape, node_id: int) -> None:
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.id]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"DVar(id={self.id}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return take(self, index)


def is_dvar(x) -> bool:
    return isinstance(x, DVar)


def value_of(x) -> np.ndarray:
    """Forward value of ``x``; detaches a DVar from its tape."""
    return x.value if isinstance(x, DVar) else x


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(*vals) -> None:
    try:
        np.broadcast_shapes(*(np.shape(v) for v in vals))
    except ValueError as exc:
        raise ShapeError(
            "cannot broadcast shapes " + ", ".join(str(np.shape(v)) for v in vals)
        ) from exc


# Each primitive: forward(*values, **kw) -> array and
# backward(g, out, values, needs, **kw) -> tuple of input gradients (None where
# not needed).


def _fw_add(a, b):
    _check_broadcast(a, b)
    return np.add(a, b)


def _bw_add(g, out, vals, needs):
    a, b = vals
    return (
        _unbroadcast(g, np.shape(a)) if needs[0] else None,
        _unbroadcast(g, np.shape(b)) if needs[1] else None,
    )


def _fw_sub(a, b):
    _check_broadcast(a, b)
    return np.subtract(a, b)


def _bw_sub(g, out, vals, needs):
    a, b = vals
    return (
        _unbroadcast(g, np.shape(a)) if needs[0] else None,
        _unbroadcast(-g, np.shape(b)) if needs[1] else None,
    )


def _fw_mul(a, b):
    _check_broadcast(a, b)
    return np.multiply(a, b)


def _bw_mul(g, out, vals, needs):
    a, b = vals
    return (
        _unbroadcast(g * b, np.shape(a)) if needs[0] else None,
        _unbroadcast(g * a, np.shape(b)) if needs[1] else None,
    )


def _fw_div(a, b):
    _check_broadcast(a, b)
    return np.divide(a, b)


def _bw_div(g, out, vals, needs):
    a, b = vals
    ga = g / b
    return (
        _unbroadcast(ga, np.shape(a)) if needs[0] else None,
        _unbroadcast(-ga * out, np.shape(b)) if needs[1] else None,
    )


def _fw_neg(a):
    return np.negative(a)


def _bw_neg(g, out, vals, needs):
    return (-g,)


def _fw_scale(a, c):
    return a * c


def _bw_scale(g, out, vals, needs, c):
    return (g * c,)


def _fw_matvec(w, x):
    w = np.asarray(w)
    x = np.asarray(x)
    if w.ndim != 2 or x.ndim < 1 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"matvec: matrix {w.shape} incompatible with vector {x.shape}")
    return x @ w.T


def _bw_matvec(g, out, vals, needs):
    w, x = vals
    gw = gx = None
    if needs[0]:
        gw = g.reshape(-1, g.shape[-1]).T @ np.reshape(x, (-1, x.shape[-1]))
    if needs[1]:
        gx = g @ w
    return gw, gx


def _fw_maximum(a, b):
    _check_broadcast(a, b)
    return np.maximum(a, b)


def _bw_maximum(g, out, vals, needs):
    a, b = vals
    first = np.asarray(a >= b)
    return (
        _unbroadcast(np.where(first, g, 0.0), np.shape(a)) if needs[0] else None,
        _unbroadcast(np.where(first, 0.0, g), np.shape(b)) if needs[1] else None,
    )


def _fw_minimum(a, b):
    _check_broadcast(a, b)
    return np.minimum(a, b)


def _bw_minimum(g, out, vals, needs):
    a, b = vals
    first = np.asarray(a <= b)
    return (
        _unbroadcast(np.where(first, g, 0.0), np.shape(a)) if needs[0] else None,
        _unbroadcast(np.where(first, 0.0, g), np.shape(b)) if needs[1] else None,
    )


def _fw_abs(a):
    return np.abs(a)


def _bw_abs(g, out, vals, needs):
    return (g * np.sign(vals[0]),)


def _sigmoid(a):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-a))


def _fw_sigmoid(a):
    return _sigmoid(a)


def _bw_sigmoid(g, out, vals, needs):
    return (g * out * (1.0 - out),)


def _fw_relu(a):
    return np.maximum(a, 0.0)


def _bw_relu(g, out, vals, needs):
    return (np.where(vals[0] > 0.0, g, 0.0),)


def _fw_silu(a):
    # a / (1 + e^-a) rather than a * sigmoid(a): one rounding fewer, and the
    # same expression the batched inference path evaluates in place
    with np.errstate(over="ignore"):
        return a / (1.0 + np.exp(-a))


def _bw_silu(g, out, vals, needs):
    a = vals[0]
    s = _sigmoid(a)
    return (g * (s + a * s * (1.0 - s)),)


def _fw_square(a):
    return np.square(a)


def _bw_square(g, out, vals, needs):
    return (2.0 * g * vals[0],)


def _fw_sum(a, axis=None):
    return np.sum(a, axis=axis)


def _bw_sum(g, out, vals, needs, axis=None):
    shape = np.shape(vals[0])
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, shape).copy(),)


def _fw_where(a, b, mask):
    _check_broadcast(a, b, mask)
    return np.where(mask, a, b)


def _bw_where(g, out, vals, needs, mask):
    a, b = vals
    return (
        _unbroadcast(np.where(mask, g, 0.0), np.shape(a)) if needs[0] else None,
        _unbroadcast(np.where(mask, 0.0, g), np.shape(b)) if needs[1] else None,
    )


def _fw_concat(*parts, axis=0):
    try:
        return np.concatenate(parts, axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc


def _bw_concat(g, out, vals, needs, axis=0):
    sizes = [np.shape(v)[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]
    pieces = np.split(g, splits, axis=axis)
    return tuple(p if n else None for p, n in zip(pieces, needs))


def _fw_reshape(a, shape):
    try:
        return np.reshape(a, shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc


def _bw_reshape(g, out, vals, needs, shape):
    return (g.reshape(np.shape(vals[0])),)


def _fw_swapaxes(a):
    return np.swapaxes(a, -1, -2)


def _bw_swapaxes(g, out, vals, needs):
    return (np.swapaxes(g, -1, -2),)


def _fw_take(a, index):
    return np.asarray(a)[index]


def _bw_take(g, out, vals, needs, index):
    full = np.zeros(np.shape(vals[0]))
    if _fancy(index):
        np.add.at(full, index, g)
    else:
        full[index] = g
    return (full,)


def _fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


_PRIMITIVES: dict[str, tuple[Callable, Callable]] = {
    "add": (_fw_add, _bw_add),
    "sub": (_fw_sub, _bw_sub),
    "mul": (_fw_mul, _bw_mul),
    "div": (_fw_div, _bw_div),
    "neg": (_fw_neg, _bw_neg),
    "scale": (_fw_scale, _bw_scale),
    "matvec": (_fw_matvec, _bw_matvec),
    "max": (_fw_maximum, _bw_maximum),
    "min": (_fw_minimum, _bw_minimum),
    "abs": (_fw_abs, _bw_abs),
    "sigmoid": (_fw_sigmoid, _bw_sigmoid),
    "relu": (_fw_relu, _bw_relu),
    "silu": (_fw_silu, _bw_silu),
    "square": (_fw_square, _bw_square),
    "sum": (_fw_sum, _bw_sum),
    "where": (_fw_where, _bw_where),
    "concat": (_fw_concat, _bw_concat),
    "reshape": (_fw_reshape, _bw_reshape),
    "take": (_fw_take, _bw_take),
    "swapaxes": (_fw_swapaxes, _bw_swapaxes),
}


def record(op: str, inputs: Sequence, **kwargs):
    """Apply primitive ``op`` to ``inputs``, appending a node when any input is a DVar.

    Non-DVar inputs are treated as constants. With no DVar among the inputs the
    plain numpy result is returned.
    """
    try:
        forward, _ = _PRIMITIVES[op]
    except KeyError:
        raise ValueError(f"unknown primitive {op!r}") from None
    tape = None
    for x in inputs:
        if isinstance(x, DVar):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ValueError("inputs live on different tapes")
    vals = tuple(value_of(x) for x in inputs)
    out = np.asarray(forward(*vals, **kwargs), dtype=np.float64)
    if tape is None:
        return out
    parents = tuple(x.id if isinstance(x, DVar) else None for x in inputs)
    saved = tuple(None if isinstance(x, DVar) else v for x, v in zip(inputs, vals))
    return tape._append(_Node(op, parents, saved, kwargs), out)


def vjp(output: DVar, seed) -> dict[int, np.ndarray]:
    """Pull ``seed`` back from ``output`` to every leaf reached.

    Returns a map from leaf node id to its gradient.
    """
    tape = output.tape
    seed = np.broadcast_to(np.asarray(seed, dtype=np.float64), output.shape)
    grads: list[np.ndarray | None] = [None] * (output.id + 1)
    grads[output.id] = np.array(seed)
    leaves: dict[int, np.ndarray] = {}
    for k in range(output.id, -1, -1):
        g = grads[k]
        if g is None:
            continue
        grads[k] = None
        node = tape.nodes[k]
        if node.op == "leaf":
            leaves[k] = g
            continue
        vals = tuple(
            tape.values[p] if p is not None else s for p, s in zip(node.parents, node.saved)
        )
        needs = tuple(p is not None for p in node.parents)
        _, bw = _PRIMITIVES[node.op]
        in_grads = bw(g, tape.values[k], vals, needs, **node.kwargs)
        for p, ig in zip(node.parents, in_grads):
            if p is None or ig is None:
                continue
            grads[p] = ig if grads[p] is None else grads[p] + ig
    return leaves


def backward(loss: DVar) -> dict[int, np.ndarray]:
    """Gradient of a scalar ``loss`` with respect to every leaf it depends on."""
    if not isinstance(loss, DVar):
        raise TypeError("backward needs a DVar")
    if loss.value.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    return vjp(loss, 1.0)


def jacobian(f: Callable, u) -> np.ndarray:
    """Jacobian of a pointwise map ``f: R^p -> R^p`` at ``u``.

    ``u`` may carry leading batch dimensions, ``(..., p)``; ``f`` must act on
    each row independently. Returns ``(..., p, p)`` with ``J[..., i, j] =
    d f_i / d u_j``.
    """
    u = np.asarray(u, dtype=np.float64)
    tape = Tape()
    x = tape.leaf(u)
    out = f(x)
    if out.shape[-1:] != u.shape[-1:] and out.shape != u.shape:
        raise ShapeError(f"jacobian: output shape {out.shape} vs input {u.shape}")
    q = out.shape[-1]
    rows = []
    for i in range(q):
        seed = np.zeros(out.shape)
        seed[..., i] = 1.0
        g = vjp(out, seed).get(x.id)
        rows.append(np.zeros(u.shape) if g is None else g)
    return np.stack(rows, axis=-2)


# Convenience wrappers; each dispatches to numpy when no DVar is involved.


def add(a, b):
    return record("add", (a, b))


def sub(a, b):
    return record("sub", (a, b))


def mul(a, b):
    return record("mul", (a, b))


def div(a, b):
    return record("div", (a, b))


def neg(a):
    return record("neg", (a,))


def scale(a, c: float):
    return record("scale", (a,), c=float(c))


def matvec(w, x):
    """``W x`` applied along the last axis of ``x`` (rows are batched)."""
    return record("matvec", (w, x))


def maximum(a, b):
    return record("max", (a, b))


def minimum(a, b):
    return record("min", (a, b))


def absolute(a):
    return record("abs", (a,))


def sigmoid(a):
    return record("sigmoid", (a,))


def relu(a):
    return record("relu", (a,))


def silu(a):
    """``x * sigmoid(x)``."""
    return record("silu", (a,))


def square(a):
    return record("square", (a,))


def total(a, axis=None):
    return record("sum", (a,), axis=axis)


def where(mask, a, b):
    """Select ``a`` where the constant boolean ``mask`` holds, else ``b``."""
    return record("where", (a, b), mask=np.asarray(value_of(mask), dtype=bool))


def concatenate(parts: Sequence, axis: int = 0):
    return record("concat", tuple(parts), axis=axis)


def reshape(a, shape):
    return record("reshape", (a,), shape=tuple(shape))


def take(a, index):
    return record("take", (a,), index=index)


def swapaxes(a):
    """Exchange the last two axes."""
    return record("swapaxes", (a,))
