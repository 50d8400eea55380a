"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every op accepts plain arrays or Tensors. With no Tensor among the inputs
the op is just the numpy computation, so model code written against these
functions runs unchanged in inference (arrays in, arrays out) and in
training (Tensors in, graph out). Gradients are vector-Jacobian products
accumulated by `backward` in reverse topological order.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("value", "grad", "_parents")

    def __init__(self, value, parents=()):
        self.value = np.asarray(value)
        self.grad = None
        self._parents = parents

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, dtype={self.value.dtype})"

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
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / np.asarray(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)


def value_of(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x)


def _is_tensor(*xs):
    return any(isinstance(x, Tensor) for x in xs)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    if not _is_tensor(a, b):
        return np.add(a, b)
    av, bv = value_of(a), value_of(b)
    parents = []
    if isinstance(a, Tensor):
        parents.append((a, lambda g: _unbroadcast(g, av.shape)))
    if isinstance(b, Tensor):
        parents.append((b, lambda g: _unbroadcast(g, bv.shape)))
    return Tensor(av + bv, tuple(parents))


def sub(a, b):
    if not _is_tensor(a, b):
        return np.subtract(a, b)
    av, bv = value_of(a), value_of(b)
    parents = []
    if isinstance(a, Tensor):
        parents.append((a, lambda g: _unbroadcast(g, av.shape)))
    if isinstance(b, Tensor):
        parents.append((b, lambda g: _unbroadcast(-g, bv.shape)))
    return Tensor(av - bv, tuple(parents))


def mul(a, b):
    if not _is_tensor(a, b):
        return np.multiply(a, b)
    av, bv = value_of(a), value_of(b)
    parents = []
    if isinstance(a, Tensor):
        parents.append((a, lambda g: _unbroadcast(g * bv, av.shape)))
    if isinstance(b, Tensor):
        parents.append((b, lambda g: _unbroadcast(g * av, bv.shape)))
    return Tensor(av * bv, tuple(parents))


def matmul(a, b):
    if not _is_tensor(a, b):
        return np.matmul(a, b)
    av, bv = value_of(a), value_of(b)
    parents = []
    if isinstance(a, Tensor):
        parents.append((a, lambda g: _unbroadcast(np.matmul(g, bv.swapaxes(-1, -2)), av.shape)))
    if isinstance(b, Tensor):
        parents.append((b, lambda g: _unbroadcast(np.matmul(av.swapaxes(-1, -2), g), bv.shape)))
    return Tensor(np.matmul(av, bv), tuple(parents))


def reshape(x, shape):
    if not _is_tensor(x):
        return np.reshape(x, shape)
    xv = x.value
    return Tensor(xv.reshape(shape), ((x, lambda g: g.reshape(xv.shape)),))


def swapaxes(x, a, b):
    if not _is_tensor(x):
        return np.swapaxes(x, a, b)
    return Tensor(np.swapaxes(x.value, a, b), ((x, lambda g: np.swapaxes(g, a, b)),))


def _expand_like(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        for ax in sorted(a % len(shape) for a in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum_(x, axis=None, keepdims=False):
    if not _is_tensor(x):
        return np.sum(x, axis=axis, keepdims=keepdims)
    xv = x.value
    return Tensor(
        xv.sum(axis=axis, keepdims=keepdims),
        ((x, lambda g: _expand_like(g, xv.shape, axis, keepdims).copy()),),
    )


def mean(x, axis=None, keepdims=False):
    xv = value_of(x)
    if axis is None:
        n = xv.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([xv.shape[a] for a in axes]))
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


def exp(x):
    if not _is_tensor(x):
        return np.exp(x)
    out = np.exp(x.value)
    return Tensor(out, ((x, lambda g: g * out),))


def log(x):
    if not _is_tensor(x):
        return np.log(x)
    xv = x.value
    return Tensor(np.log(xv), ((x, lambda g: g / xv),))


def tanh(x):
    if not _is_tensor(x):
        return np.tanh(x)
    out = np.tanh(x.value)
    return Tensor(out, ((x, lambda g: g * (1.0 - out * out)),))


def power(x, p):
    if not _is_tensor(x):
        return np.power(x, p)
    xv = x.value
    return Tensor(np.power(xv, p), ((x, lambda g: g * p * np.power(xv, p - 1.0)),))


def softmax(x, axis=-1):
    xv = value_of(x)
    shifted = xv - xv.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    if not _is_tensor(x):
        return out

    def vjp(g):
        return out * (g - (g * out).sum(axis=axis, keepdims=True))

    return Tensor(out, ((x, vjp),))


def logsumexp(x, axis=-1):
    xv = value_of(x)
    m = xv.max(axis=axis, keepdims=True)
    e = np.exp(xv - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(s), axis=axis)
    if not _is_tensor(x):
        return out
    soft = e / s

    def vjp(g):
        return np.expand_dims(g, axis) * soft

    return Tensor(out, ((x, vjp),))


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor):
    """Accumulate gradients of a scalar loss into every Tensor in its graph."""
    if loss.value.size != 1:
        raise ValueError("backward expects a scalar loss")
    order = _topo_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in node._parents:
            contribution = vjp(g)
            if parent.grad is None:
                parent.grad = contribution
            else:
                parent.grad = parent.grad + contribution
