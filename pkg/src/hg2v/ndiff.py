"""Minimal reverse-mode differentiation over dense 2-D float64 tensors.

Only the primitives the embedding model needs are provided. Every primitive
computes its forward value with numpy and, when a :class:`Tape` is active
and an input requires gradients, records a closure that maps the output
gradient to input gradients. ``Tape.backward`` replays those records in
reverse execution order and accumulates gradients additively.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import NumericalError, ShapeError


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of primitive applications; use as a context manager."""

    _active: list = []

    def __init__(self):
        self.records = []

    def __enter__(self):
        Tape._active.append(self)
        return self

    def __exit__(self, *exc):
        Tape._active.pop()
        return False

    @classmethod
    def current(cls):
        return cls._active[-1] if cls._active else None

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            return
        loss.grad = np.ones_like(loss.data)
        for out, inputs, fn in reversed(self.records):
            if out.grad is None or not out.grad.any():
                continue
            grads = fn(out.grad)
            for t, gr in zip(inputs, grads):
                if gr is not None and isinstance(t, Tensor) and t.requires_grad:
                    t.grad += gr


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(data: np.ndarray, inputs, backward, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite value produced by {op}")
    needs = any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    tape = Tape.current()
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    if needs and tape is not None:
        out.requires_grad = True
        out.grad = np.zeros_like(data)
        tape.records.append((out, inputs, backward))
    else:
        out.requires_grad = False
        out.grad = None
    return out


def _shape_error(op, *shapes):
    return ShapeError(f"{op}: incompatible shapes " + " and ".join(str(s) for s in shapes))


# --- primitives -------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """``a @ b``; ``a`` may also be a constant scipy sparse matrix."""
    if sp.issparse(a):
        b = _as_tensor(b)
        if a.shape[1] != b.shape[0]:
            raise _shape_error("matmul", a.shape, b.shape)
        at = a.T.tocsr()
        return _emit(np.asarray(a @ b.data), [b], lambda g: [np.asarray(at @ g)], "matmul")
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _emit(ad @ bd, [a, b], lambda g: [g @ bd.T, ad.T @ g], "matmul")


def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may be a 1 x c row broadcast over the rows of ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        return _emit(a.data + b.data, [a, b], lambda g: [g, g], "add")
    if b.shape[0] == 1 and b.shape[1] == a.shape[1]:
        return _emit(a.data + b.data, [a, b], lambda g: [g, g.sum(axis=0, keepdims=True)], "add")
    raise _shape_error("add", a.shape, b.shape)


def concat_cols(tensors) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    rows = {t.shape[0] for t in tensors}
    if len(rows) != 1:
        raise _shape_error("concat_cols", *[t.shape for t in tensors])
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])
    return _emit(np.concatenate([t.data for t in tensors], axis=1), tensors,
                 lambda g: [g[:, s:e] for s, e in zip(bounds[:-1], bounds[1:])], "concat_cols")


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    return _emit(a.data.T.copy(), [a], lambda g: [g.T], "transpose")


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)
    return _emit(y, [a], lambda g: [g * (1.0 - y * y)], "tanh")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    y = _sigmoid(a.data)
    return _emit(y, [a], lambda g: [g * y * (1.0 - y)], "sigmoid")


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericalError("log of a non-positive value")
    x = a.data
    return _emit(np.log(x), [a], lambda g: [g / x], "log")


def log_sigmoid(a) -> Tensor:
    """Numerically stable ``log(sigmoid(a))``."""
    a = _as_tensor(a)
    x = a.data
    y = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    return _emit(y, [a], lambda g: [g * _sigmoid(-x)], "log_sigmoid")


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _emit(-a.data, [a], lambda g: [-g], "neg")


def scalar_scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _emit(a.data * c, [a], lambda g: [g * c], "scalar_scale")


def _scatter(idx: np.ndarray, n_rows: int) -> sp.csr_matrix:
    """Sparse 0/1 matrix whose product with ``g`` sums the rows of ``g`` into ``idx`` slots."""
    return sp.csr_matrix((np.ones(idx.size), (idx, np.arange(idx.size))), shape=(n_rows, idx.size))


def group_sum_rows(a, group, n_groups: int) -> Tensor:
    """Row ``c`` of the result is the sum of the rows ``u`` with ``group[u] == c``."""
    a = _as_tensor(a)
    group = np.asarray(group, dtype=np.int64)
    if group.shape[0] != a.shape[0]:
        raise _shape_error("group_sum_rows", a.shape, group.shape)
    out = np.asarray(_scatter(group, n_groups) @ a.data)
    return _emit(out, [a], lambda g: [g[group]], "group_sum_rows")


def gather_rows(a, idx) -> Tensor:
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    n = a.shape[0]
    return _emit(a.data[idx], [a], lambda g: [np.asarray(_scatter(idx, n) @ g)], "gather_rows")


def colwise_sum(a) -> Tensor:
    a = _as_tensor(a)
    n = a.shape[0]
    return _emit(a.data.sum(axis=0, keepdims=True), [a], lambda g: [np.repeat(g, n, axis=0)], "colwise_sum")


def colwise_max(a) -> Tensor:
    """Column maxima; the gradient goes to the first maximal row of each column."""
    a = _as_tensor(a)
    arg = np.argmax(a.data, axis=0)
    cols = np.arange(a.shape[1])

    def back(g):
        out = np.zeros_like(a.data)
        out[arg, cols] = g[0]
        return [out]

    return _emit(a.data[arg, cols][None, :], [a], back, "colwise_max")


def rowwise_dot(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise _shape_error("rowwise_dot", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _emit(np.einsum("ij,ij->i", ad, bd)[:, None], [a, b], lambda g: [g * bd, g * ad], "rowwise_dot")


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    size = a.data.size
    return _emit(np.array([[a.data.mean()]]), [a], lambda g: [np.full(a.shape, g[0, 0] / size)], "mean_all")


def weighted_mean(a, w) -> Tensor:
    """``sum(w * a) / sum(w)`` for a column ``a`` and nonnegative weights ``w``."""
    a = _as_tensor(a)
    w = np.asarray(w, dtype=np.float64).reshape(a.shape)
    total = w.sum()
    if total <= 0:
        raise ShapeError("weighted_mean: weights sum to zero")
    wn = w / total
    return _emit(np.array([[np.sum(wn * a.data)]]), [a], lambda g: [g[0, 0] * wn], "weighted_mean")


def masked_mean(a, mask) -> Tensor:
    """Mean of the entries of ``a`` selected by a boolean ``mask`` of the same shape."""
    a = _as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise _shape_error("masked_mean", a.shape, mask.shape)
    count = int(mask.sum())
    if count == 0:
        raise ShapeError("masked_mean: empty mask")
    w = mask / count
    return _emit(np.array([[np.sum(a.data[mask]) / count]]), [a], lambda g: [g[0, 0] * w], "masked_mean")


def sum_scalars(items) -> Tensor:
    items = [_as_tensor(t) for t in items]
    for t in items:
        if t.shape != (1, 1):
            raise _shape_error("sum_scalars", t.shape)
    total = np.array([[sum(t.data[0, 0] for t in items)]])
    return _emit(total, items, lambda g: [g] * len(items), "sum_scalars")


# --- optimization -----------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **kw) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params], **kw)


def adam_step(params, grads, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state must align")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape or m.shape != p.data.shape:
            raise _shape_error("adam_step", p.data.shape, g.shape)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def lr_schedule(step: int, total_steps: int, lr0: float) -> float:
    """Geometric decay from ``lr0`` to ``lr0 / 1000`` over ``total_steps``."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    return lr0 * 1000.0 ** (-step / total_steps)


# --- gradient checking ------------------------------------------------------

def numerical_grad(f, params, h: float = 1e-5) -> list:
    """Central finite differences of scalar ``f()`` w.r.t. every entry of ``params``."""
    out = []
    for p in params:
        g = np.zeros_like(p.data)
        it = np.nditer(p.data, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p.data[idx]
            p.data[idx] = orig + h
            up = _scalar(f())
            p.data[idx] = orig - h
            down = _scalar(f())
            p.data[idx] = orig
            g[idx] = (up - down) / (2.0 * h)
        out.append(g)
    return out


def _scalar(x) -> float:
    return x.item() if isinstance(x, Tensor) else float(x)


def analytic_grad(f, params) -> list:
    for p in params:
        p.grad = np.zeros_like(p.data)
        p.requires_grad = True
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    return [p.grad.copy() for p in params]


def relative_error(a, b) -> float:
    a = np.concatenate([np.ravel(x) for x in a])
    b = np.concatenate([np.ravel(x) for x in b])
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def gradcheck(f, params, h: float = 1e-5) -> float:
    """Relative error between tape gradients and central differences."""
    return relative_error(analytic_grad(f, params), numerical_grad(f, params, h))
