"""Define-by-run reverse-mode automatic differentiation over float64 numpy arrays.

Every op builds a new :class:`Value` holding its output, references to its
inputs, and a closure mapping the output gradient to per-input gradients.
``backward`` walks the graph in reverse topological order.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


class NumericError(ArithmeticError):
    pass


class Value:
    __slots__ = ("data", "requires_grad", "grad", "parents", "backward_fn", "op")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward_fn=None, op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.parents: tuple[Value, ...] = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Value(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Value:
        return Value(self.data.copy())

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_value(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def parameter(data) -> Value:
    return Value(np.array(data, dtype=np.float64), requires_grad=True)


def _make(data, parents, backward_fn, op):
    req = any(p.requires_grad for p in parents)
    return Value(data, requires_grad=req, parents=parents if req else (), backward_fn=backward_fn if req else None, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def square(a: Value) -> Value:
    return _make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def exp(a: Value) -> Value:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Value) -> Value:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a: Value) -> Value:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a: Value) -> Value:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


# ---------------------------------------------------------------- reductions


def sum(a: Value, axis: int | None = None) -> Value:  # noqa: A001 - mirrors numpy
    shape = a.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(a.data.sum(axis=axis), (a,), bw, "sum")


def mean(a: Value) -> Value:
    n = a.data.size
    return mul(sum(a), 1.0 / n) if n else Value(0.0)


# ---------------------------------------------------------------- linear algebra / layout


def matmul(a: Value, b: Value) -> Value:
    a, b = as_value(a), as_value(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def concat_cols(a: Value, b: Value) -> Value:
    a, b = as_value(a), as_value(b)
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"concat_cols row mismatch: {a.shape} vs {b.shape}")
    d1 = a.shape[1]
    return _make(
        np.concatenate([a.data, b.data], axis=1),
        (a, b),
        lambda g: (g[:, :d1], g[:, d1:]),
        "concat_cols",
    )


def slice_cols(a: Value, start: int, stop: int) -> Value:
    def bw(g):
        out = np.zeros_like(a.data)
        out[:, start:stop] = g
        return (out,)

    return _make(a.data[:, start:stop].copy(), (a,), bw, "slice_cols")


def take_cols(a: Value, index: np.ndarray) -> Value:
    """Column gather; repeated indices accumulate their gradients."""
    index = np.asarray(index, dtype=np.int64)

    def bw(g):
        out = np.zeros_like(a.data)
        np.add.at(out, (slice(None), index), g)
        return (out,)

    return _make(a.data[:, index], (a,), bw, "take_cols")


def take_rows(a: Value, index) -> Value:
    index = np.asarray(index, dtype=np.int64)

    def bw(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), bw, "take_rows")


def pick(a: Value, cols) -> Value:
    """Per-row element ``a[i, cols[i]]`` as a length-n vector."""
    cols = np.asarray(cols, dtype=np.int64)
    rows = np.arange(a.shape[0])

    def bw(g):
        out = np.zeros_like(a.data)
        out[rows, cols] = g
        return (out,)

    return _make(a.data[rows, cols], (a,), bw, "pick")


def segment_mean(values: Value, segment_ids, n_segments: int) -> Value:
    """Row ``r`` of the result is the mean of the rows whose segment id is ``r``.

    Empty segments give a zero row.
    """
    ids = np.asarray(segment_ids, dtype=np.int64)
    if ids.shape[0] != values.shape[0]:
        raise DimensionError(f"segment ids length {ids.shape[0]} != rows {values.shape[0]}")
    if ids.size and (ids.min() < 0 or ids.max() >= n_segments):
        raise IndexError(f"segment id out of range [0, {n_segments})")
    counts = np.bincount(ids, minlength=n_segments).astype(np.float64)
    inv = np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)
    out = np.zeros((n_segments, values.shape[1]))
    np.add.at(out, ids, values.data)
    out *= inv[:, None]
    return _make(out, (values,), lambda g: (g[ids] * inv[ids][:, None],), "segment_mean")


# ---------------------------------------------------------------- softmax family


def softmax_rows(a: Value) -> Value:
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _make(out, (a,), bw, "softmax_rows")


def log_softmax_rows(a: Value) -> Value:
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _make(out, (a,), bw, "log_softmax_rows")


# ---------------------------------------------------------------- backward


def _topo_order(root: Value) -> list[Value]:
    order: list[Value] = []
    seen: set[int] = set()
    stack: list[tuple[Value, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Value) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf that requires grad.

    Repeated calls sum into existing leaf grads; call ``zero_grads`` to reset.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def zero_grads(params: Sequence[Value]) -> None:
    for p in params:
        p.grad = None


def grad_check(f: Callable[[Value], Value], point, eps: float = 1e-6) -> float:
    """Max over coordinates of ``|autodiff - central FD| / max(1, |FD|)``."""
    x0 = np.array(as_value(point).data, dtype=np.float64)
    x = Value(x0.copy(), requires_grad=True)
    out = f(x)
    if not np.all(np.isfinite(out.data)):
        raise NumericError("grad_check: f returned a non-finite value")
    backward(out)
    analytic = np.zeros_like(x0) if x.grad is None else x.grad
    numeric = np.zeros_like(x0)
    flat = x0.reshape(-1)
    for i in range(flat.size):
        plus = flat.copy()
        minus = flat.copy()
        plus[i] += eps
        minus[i] -= eps
        fp = f(Value(plus.reshape(x0.shape))).item()
        fm = f(Value(minus.reshape(x0.shape))).item()
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"grad_check: non-finite f at coordinate {i}")
        numeric.reshape(-1)[i] = (fp - fm) / (2.0 * eps)
    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(rel.max()) if rel.size else 0.0
