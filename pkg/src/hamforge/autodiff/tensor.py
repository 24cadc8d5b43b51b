"""Define-by-run reverse-mode differentiation over float64 numpy arrays.

Every operation on a :class:`Tensor` that depends on a tensor with
``requires_grad`` records its parents and a backward closure.  The graph
built by one forward pass is the tape; :func:`grad` walks it once in reverse
topological order and returns gradients for the requested leaves, leaving
the leaves themselves untouched so several tapes can share parameters.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from ..exceptions import ShapeMismatch

Array = np.ndarray


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    # -- basic protocol ----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> Array:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operators -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, key):
        return getitem(self, key)

    # -- method forms ------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def astensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: Array, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# --- elementwise binary ops --------------------------------------------------

def add(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def backward(g):
        return unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)

    return _make(out, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}") from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else unbroadcast(ga, a.shape),
            None if gb is None else unbroadcast(gb, b.shape),
        )

    return _make(out, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    a = astensor(a)
    out = a.data ** exponent

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _make(out, (a,), backward)


def maximum(a, floor: float) -> Tensor:
    """``max(a, floor)`` with zero gradient wherever the floor is active."""
    a = astensor(a)
    active = a.data > floor

    def backward(g):
        return (np.where(active, g, 0.0),)

    return _make(np.where(active, a.data, floor), (a,), backward)


def where(cond, a, b) -> Tensor:
    cond = np.asarray(cond, dtype=bool)
    a, b = astensor(a), astensor(b)

    def backward(g):
        return unbroadcast(np.where(cond, g, 0.0), a.shape), unbroadcast(np.where(cond, 0.0, g), b.shape)

    return _make(np.where(cond, a.data, b.data), (a, b), backward)


# --- elementwise unary ops ---------------------------------------------------

def _unary(a, out: Array, dfn: Callable[[Array], Array]) -> Tensor:
    a = astensor(a)

    def backward(g):
        return (g * dfn(out),)

    return _make(out, (a,), backward)


def exp(a) -> Tensor:
    a = astensor(a)
    return _unary(a, np.exp(a.data), lambda out: out)


def log(a) -> Tensor:
    a = astensor(a)
    x = a.data
    return _unary(a, np.log(x), lambda out: 1.0 / x)


def sqrt(a) -> Tensor:
    """Square root; the gradient at exactly 0 is taken as 0 (subgradient)."""
    a = astensor(a)
    out = np.sqrt(a.data)

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g * 0.5 / safe, 0.0),)

    return _make(out, (a,), backward)


def square(a) -> Tensor:
    a = astensor(a)
    x = a.data

    def backward(g):
        return (2.0 * g * x,)

    return _make(x * x, (a,), backward)


def sigmoid(a) -> Tensor:
    a = astensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _unary(a, out, lambda o: o * (1.0 - o))


def tanh(a) -> Tensor:
    a = astensor(a)
    return _unary(a, np.tanh(a.data), lambda o: 1.0 - o * o)


def relu(a) -> Tensor:
    a = astensor(a)
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return _make(a.data * mask, (a,), backward)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = astensor(a)
    scale = np.where(a.data > 0, 1.0, slope)

    def backward(g):
        return (g * scale,)

    return _make(a.data * scale, (a,), backward)


def softmax(a, axis: int = -1, mask=None) -> Tensor:
    """Softmax along ``axis``; entries where ``mask`` is False get weight 0.

    A slice whose mask is entirely False yields all zeros.
    """
    a = astensor(a)
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    s = e.sum(axis=axis, keepdims=True)
    out = e / np.where(s > 0, s, 1.0)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), backward)


# --- reductions and shape ops ------------------------------------------------

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = astensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = astensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = astensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"cannot reshape {old} to {shape}") from None

    def backward(g):
        return (g.reshape(old),)

    return _make(out, (a,), backward)


def transpose(a, axes=None) -> Tensor:
    a = astensor(a)
    if axes is None:
        # swap the last two axes; vectors are returned unchanged
        axes = tuple(range(a.ndim))
        if a.ndim >= 2:
            axes = axes[:-2] + (a.ndim - 1, a.ndim - 2)
    inv = np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inv),)

    return _make(np.transpose(a.data, axes), (a,), backward)


def swapaxes(a, i: int, j: int) -> Tensor:
    a = astensor(a)

    def backward(g):
        return (np.swapaxes(g, i, j),)

    return _make(np.swapaxes(a.data, i, j), (a,), backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [astensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeMismatch(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, ts, backward)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [astensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeMismatch(f"stack: incompatible shapes {[t.shape for t in ts]}") from None

    def backward(g):
        return tuple(np.take(g, k, axis=axis) for k in range(len(ts)))

    return _make(out, ts, backward)


def getitem(a, key) -> Tensor:
    """Basic and advanced indexing; repeated indices accumulate gradient."""
    a = astensor(a)
    if isinstance(key, Tensor):
        key = key.data.astype(np.intp)
    out = a.data[key]
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, key, g)
        return (full,)

    return _make(np.array(out, copy=True), (a,), backward)


def segment_sum(a, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of ``a`` into ``num_segments`` buckets given by ``segment_ids``."""
    a = astensor(a)
    ids = np.asarray(segment_ids, dtype=np.intp)
    if ids.shape[0] != a.shape[0]:
        raise ShapeMismatch(f"segment_sum: {len(ids)} ids for {a.shape[0]} rows")
    out = np.zeros((num_segments,) + a.shape[1:])
    np.add.at(out, ids, a.data)

    def backward(g):
        return (g[ids],)

    return _make(out, (a,), backward)


def segment_softmax(a, segment_ids, num_segments: int) -> Tensor:
    """Softmax of a column vector within each segment."""
    a = astensor(a)
    ids = np.asarray(segment_ids, dtype=np.intp)
    seg_max = np.full((num_segments,) + a.shape[1:], -np.inf)
    np.maximum.at(seg_max, ids, a.data)
    shifted = a - Tensor(seg_max[ids])
    e = exp(shifted)
    denom = segment_sum(e, ids, num_segments)
    return e / getitem(denom, ids)


# --- differentiation ---------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Tensor, wrt: Iterable[Tensor], seed: Array | None = None) -> list[Array]:
    """Gradients of ``output`` with respect to each tensor in ``wrt``.

    Each recorded node is visited exactly once, in reverse topological
    order.  Leaves not reached by ``output`` get a zero gradient.
    """
    wrt = list(wrt)
    keep = {id(t) for t in wrt}
    grads: dict[int, Array] = {}
    if output.requires_grad:
        grads[id(output)] = np.ones(output.shape) if seed is None else np.asarray(seed, dtype=np.float64)
        for node in reversed(_topo_order(output)):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            if node._parents and id(node) not in keep:
                del grads[id(node)]
    return [grads.get(id(t), np.zeros(t.shape)) for t in wrt]


def backward(output: Tensor, params: dict[str, Tensor]) -> dict[str, Array]:
    """Convenience wrapper: gradients keyed by parameter name."""
    names = list(params)
    return dict(zip(names, grad(output, [params[k] for k in names])))
