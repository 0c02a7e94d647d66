"""Minimal reverse-mode autodiff over 2-D float64 numpy arrays.

The computation graphs in this project are shallow and fixed (embedding
lookups, a couple of sparse propagations, softmaxes, a handful of scalar
reductions), so a small tape is enough: every op records a backward
closure, ``Tensor.backward()`` walks the graph in reverse topological
order and accumulates gradients into the leaves that asked for them.

Constants (plain arrays, sparse matrices, python scalars) never track
gradients; wrap trainable values with ``Tensor(value, requires_grad=True)``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.sparse as sp


class Tensor:
    """One node of the tape: a float64 ndarray plus its backward closure."""

    __slots__ = ("value", "grad", "_parents", "_backward", "requires_grad")

    def __init__(self, value, parents=(), backward=None, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in self._parents
        )

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def detach(self) -> "Tensor":
        """A constant copy of this node, cut off from the graph."""
        return Tensor(self.value)

    def backward(self) -> None:
        if self.value.size != 1:
            raise ValueError("backward() needs a scalar, got shape %r" % (self.shape,))
        order = _toposort(self)
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return asum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return amean(self, axis=axis, keepdims=keepdims)

    # arithmetic sugar; right-hand constants are wrapped on the fly
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value + b.value

    def bw(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(g, b.value.shape))

    return Tensor(out, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value - b.value

    def bw(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(-g, b.value.shape))

    return Tensor(out, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value * b.value

    def bw(g):
        _accum(a, _unbroadcast(g * b.value, a.value.shape))
        _accum(b, _unbroadcast(g * a.value, b.value.shape))

    return Tensor(out, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value / b.value

    def bw(g):
        _accum(a, _unbroadcast(g / b.value, a.value.shape))
        _accum(b, _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))

    return Tensor(out, (a, b), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value @ b.value

    def bw(g):
        _accum(a, g @ b.value.T)
        _accum(b, a.value.T @ g)

    return Tensor(out, (a, b), bw)


def spmm(a, b, a_transpose=None) -> Tensor:
    """Sparse-dense product ``a @ b`` with a constant sparse left factor.

    ``a_transpose`` may supply a prebuilt CSR transpose (the symmetric
    adjacency can just pass itself); otherwise it is derived on demand.
    """
    if not sp.issparse(a):
        raise TypeError("spmm expects a scipy sparse matrix on the left")
    b = as_tensor(b)
    if a.shape[1] != b.value.shape[0]:
        raise ValueError(f"spmm shape mismatch: {a.shape} @ {b.value.shape}")
    out = a @ b.value

    def bw(g):
        if b.requires_grad:
            at = a_transpose if a_transpose is not None else a.T.tocsr()
            _accum(b, at @ g)

    return Tensor(out, (b,), bw)


def transpose(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        _accum(a, g.T)

    return Tensor(a.value.T, (a,), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        _accum(a, g.reshape(a.value.shape))

    return Tensor(a.value.reshape(shape), (a,), bw)


def gather2d(a, col_idx) -> Tensor:
    """Per-row column gather: out[r, j] = a[r, col_idx[r, j]]."""
    a = as_tensor(a)
    col_idx = np.asarray(col_idx, dtype=np.intp)
    n, k = col_idx.shape
    row_idx = np.repeat(np.arange(n, dtype=np.intp), k)
    flat = (row_idx * a.value.shape[1] + col_idx.reshape(-1))

    def bw(g):
        if not a.requires_grad:
            return
        buf = np.bincount(flat, weights=g.reshape(-1),
                          minlength=a.value.size).reshape(a.value.shape)
        _accum(a, buf)

    return Tensor(a.value[row_idx, col_idx.reshape(-1)].reshape(n, k), (a,), bw)


def _scatter_rows(shape, idx, g) -> np.ndarray:
    """Row scatter-add; per-column bincount beats ufunc.at at these widths."""
    buf = np.zeros(shape)
    for j in range(shape[1]):
        buf[:, j] = np.bincount(idx, weights=g[:, j], minlength=shape[0])
    return buf


def rows(a, idx) -> Tensor:
    """Gather rows by integer index; backward scatter-adds (repeats allowed)."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)

    def bw(g):
        if not a.requires_grad:
            return
        _accum(a, _scatter_rows(a.value.shape, idx, g))

    return Tensor(a.value[idx], (a,), bw)


def row_slice(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        if not a.requires_grad:
            return
        buf = np.zeros_like(a.value)
        buf[start:stop] = g
        _accum(a, buf)

    return Tensor(a.value[start:stop], (a,), bw)


def col_slice(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        if not a.requires_grad:
            return
        buf = np.zeros_like(a.value)
        buf[:, start:stop] = g
        _accum(a, buf)

    return Tensor(a.value[:, start:stop], (a,), bw)


def vstack(parts: Sequence) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.concatenate([p.value for p in parts], axis=0)
    offsets = np.cumsum([0] + [p.value.shape[0] for p in parts])

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[lo:hi])

    return Tensor(out, tuple(parts), bw)


def hstack(parts: Sequence) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.concatenate([p.value for p in parts], axis=1)
    offsets = np.cumsum([0] + [p.value.shape[1] for p in parts])

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[:, lo:hi])

    return Tensor(out, tuple(parts), bw)


def asum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.value.shape))

    return Tensor(out, (a,), bw)


def amean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.value.size if axis is None else a.value.shape[axis]
    return mul(asum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)

    def bw(g):
        _accum(a, g * out)

    return Tensor(out, (a,), bw)


def log(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        _accum(a, g / a.value)

    return Tensor(np.log(a.value), (a,), bw)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.value)

    def bw(g):
        _accum(a, g * 0.5 / out)

    return Tensor(out, (a,), bw)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    out = np.power(a.value, exponent)

    def bw(g):
        _accum(a, g * exponent * np.power(a.value, exponent - 1.0))

    return Tensor(out, (a,), bw)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bw(g):
        _accum(a, g * out * (1.0 - out))

    return Tensor(out, (a,), bw)


def logsigmoid(a) -> Tensor:
    """log(sigmoid(x)) computed as -log1p(exp(-x)); stable for any margin."""
    a = as_tensor(a)
    out = -np.logaddexp(0.0, -a.value)

    def bw(g):
        _accum(a, g * _sigmoid_value(-a.value))

    return Tensor(out, (a,), bw)


def _sigmoid_value(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only through unclipped entries."""
    a = as_tensor(a)
    mask = (a.value >= lo) & (a.value <= hi)

    def bw(g):
        _accum(a, g * mask)

    return Tensor(np.clip(a.value, lo, hi), (a,), bw)


def maximum(a, floor: float) -> Tensor:
    a = as_tensor(a)
    mask = a.value >= floor

    def bw(g):
        _accum(a, g * mask)

    return Tensor(np.maximum(a.value, floor), (a,), bw)


def softmax_rows(a) -> Tensor:
    """Row-wise softmax, max-subtracted for stability."""
    a = as_tensor(a)
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        _accum(a, out * (g - inner))

    return Tensor(out, (a,), bw)


def dropout(a, rate: float, rng: np.random.Generator, training: bool):
    """Inverted dropout on the tape; returns (output, scaled keep-mask)."""
    a = as_tensor(a)
    if not (0.0 <= rate < 1.0):
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a, np.ones_like(a.value)
    mask = (rng.random(a.value.shape) >= rate) / (1.0 - rate)
    return mul(a, mask), mask


def rowwise_dot(a, b) -> Tensor:
    """Per-row inner product of two (n, d) tensors, shaped (n, 1)."""
    a, b = as_tensor(a), as_tensor(b)
    out = np.einsum("ij,ij->i", a.value, b.value)[:, None]

    def bw(g):
        _accum(a, g * b.value)
        _accum(b, g * a.value)

    return Tensor(out, (a, b), bw)
