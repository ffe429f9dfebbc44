"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`DiffArray` wraps values plus a gradient accumulator; operations
record their parents and a local backward rule. ``backward()`` walks the
recorded graph once in reverse topological order, so each node's gradient
is accumulated exactly once and the result is independent of how the graph
was built up. Everything is float64 and single-threaded by design: at desk
scale, determinism and finite-difference fidelity matter more than speed.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatchError


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class DiffArray:
    """A numpy array with a gradient accumulator and a backward-pass record."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    def __repr__(self):
        return f"DiffArray(shape={self.values.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "DiffArray":
        return DiffArray(self.values.copy())

    def backward(self, seed: np.ndarray | None = None):
        """Accumulate gradients of this (typically scalar) node into the graph's leaves."""
        if seed is None:
            seed = np.ones_like(self.values)
        order = _topological_order(self)
        grads = {id(self): np.asarray(seed, dtype=np.float64)}
        for node in order:
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node.requires_grad and node._backward is None:
                node.grad = grad if node.grad is None else node.grad + grad
            if node._backward is None:
                continue
            for parent, pgrad in zip(node._parents, node._backward(grad)):
                if pgrad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pgrad
                else:
                    grads[key] = pgrad

    # Operator sugar used throughout the layers.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __neg__(self):
        return mul(self, DiffArray(-1.0))

    def __getitem__(self, index):
        return take(self, index)


def _wrap(x) -> DiffArray:
    return x if isinstance(x, DiffArray) else DiffArray(x)


def _topological_order(root: DiffArray) -> list:
    """Reverse topological order via iterative post-order DFS."""
    order: list[DiffArray] = []
    seen: set[int] = set()
    stack: list[tuple[DiffArray, bool]] = [(root, False)]
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
    return list(reversed(order))


def _node(values: np.ndarray, parents: tuple, backward) -> DiffArray:
    out = DiffArray(values)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def add(a: DiffArray, b: DiffArray) -> DiffArray:
    out = a.values + b.values

    def backward(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return _node(out, (a, b), backward)


def sub(a: DiffArray, b: DiffArray) -> DiffArray:
    out = a.values - b.values

    def backward(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))

    return _node(out, (a, b), backward)


def mul(a: DiffArray, b: DiffArray) -> DiffArray:
    out = a.values * b.values

    def backward(g):
        return (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape))

    return _node(out, (a, b), backward)


def div(a: DiffArray, b: DiffArray) -> DiffArray:
    out = a.values / b.values

    def backward(g):
        return (
            _unbroadcast(g / b.values, a.shape),
            _unbroadcast(-g * a.values / (b.values * b.values), b.shape),
        )

    return _node(out, (a, b), backward)


def matmul(a: DiffArray, b: DiffArray) -> DiffArray:
    if a.ndim < 1 or b.ndim < 2:
        raise ShapeMismatchError(f"matmul needs matrices, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    vector_left = a.ndim == 1
    av = a.values[None, :] if vector_left else a.values
    out = av @ b.values

    def backward(g):
        g = g[None, :] if vector_left else g
        ga = g @ np.swapaxes(b.values, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        if vector_left:
            ga = ga[0]
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _node(out[0] if vector_left else out, (a, b), backward)


def relu(a: DiffArray) -> DiffArray:
    mask = a.values > 0

    def backward(g):
        return (g * mask,)

    return _node(np.where(mask, a.values, 0.0), (a,), backward)


def sigmoid(a: DiffArray) -> DiffArray:
    out = 1.0 / (1.0 + np.exp(-a.values))

    def backward(g):
        return (g * out * (1.0 - out),)

    return _node(out, (a,), backward)


def tanh(a: DiffArray) -> DiffArray:
    out = np.tanh(a.values)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _node(out, (a,), backward)


def exp(a: DiffArray) -> DiffArray:
    out = np.exp(a.values)

    def backward(g):
        return (g * out,)

    return _node(out, (a,), backward)


def log(a: DiffArray) -> DiffArray:
    def backward(g):
        return (g / a.values,)

    return _node(np.log(a.values), (a,), backward)


def sqrt(a: DiffArray) -> DiffArray:
    out = np.sqrt(a.values)

    def backward(g):
        return (g * 0.5 / out,)

    return _node(out, (a,), backward)


def square(a: DiffArray) -> DiffArray:
    def backward(g):
        return (g * 2.0 * a.values,)

    return _node(a.values * a.values, (a,), backward)


def arr_sum(a: DiffArray, axis=None, keepdims: bool = False) -> DiffArray:
    out = a.values.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), backward)


def arr_mean(a: DiffArray, axis=None, keepdims: bool = False) -> DiffArray:
    count = a.values.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    out = a.values.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy() / count,)

    return _node(out, (a,), backward)


def softmax(a: DiffArray) -> DiffArray:
    """Row-stable softmax along the last axis."""
    shifted = a.values - a.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _node(out, (a,), backward)


def concat(arrays, axis: int = -1) -> DiffArray:
    arrays = [_wrap(a) for a in arrays]
    out = np.concatenate([a.values for a in arrays], axis=axis)
    sizes = [a.shape[axis] for a in arrays]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(arrays))
        )

    return _node(out, tuple(arrays), backward)


def stack(arrays, axis: int = 0) -> DiffArray:
    arrays = [_wrap(a) for a in arrays]
    out = np.stack([a.values for a in arrays], axis=axis)

    def backward(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(moved[i] for i in range(len(arrays)))

    return _node(out, tuple(arrays), backward)


def reshape(a: DiffArray, shape) -> DiffArray:
    def backward(g):
        return (g.reshape(a.shape),)

    return _node(a.values.reshape(shape), (a,), backward)


def swapaxes(a: DiffArray, ax1: int, ax2: int) -> DiffArray:
    def backward(g):
        return (np.swapaxes(g, ax1, ax2),)

    return _node(np.swapaxes(a.values, ax1, ax2), (a,), backward)


def take(a: DiffArray, index) -> DiffArray:
    """Basic/advanced indexing with scatter-add backward."""
    out = a.values[index]

    def backward(g):
        ga = np.zeros_like(a.values)
        np.add.at(ga, index, g)
        return (ga,)

    return _node(out, (a,), backward)


def gather_rows(a: DiffArray, indices: np.ndarray) -> DiffArray:
    """Select rows along the first axis (used to reorder matched point sets)."""
    indices = np.asarray(indices, dtype=int)
    return take(a, indices)


def straight_through(value: DiffArray, surrogate: DiffArray) -> DiffArray:
    """Forward ``value.values``; route the backward pass through ``surrogate``.

    Classic straight-through estimator: the forward result is numerically
    identical to ``value`` while gradients are taken as though the node were
    ``surrogate``. Used where a discrete step (here: assembled trajectories)
    blocks the chain rule.
    """
    if value.shape != surrogate.shape:
        raise ShapeMismatchError(f"straight_through shapes differ: {value.shape} vs {surrogate.shape}")

    def backward(g):
        return (None, g)

    return _node(value.values.copy(), (value, surrogate), backward)


def conv2d(x: DiffArray, w: DiffArray, b: DiffArray | None, stride: int = 1, padding: int = 1) -> DiffArray:
    """2-D convolution on a single (C_in, H, W) image with (C_out, C_in, kh, kw) filters."""
    cin, h, wid = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ShapeMismatchError(f"conv channels disagree: input {cin}, filter {cin_w}")
    padded = np.pad(x.values, ((0, 0), (padding, padding), (padding, padding)))
    hout = (h + 2 * padding - kh) // stride + 1
    wout = (wid + 2 * padding - kw) // stride + 1
    # im2col: (C_in*kh*kw, hout*wout)
    cols = np.empty((cin, kh, kw, hout, wout))
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = padded[:, i : i + hout * stride : stride, j : j + wout * stride : stride]
    cols2d = cols.reshape(cin * kh * kw, hout * wout)
    w2d = w.values.reshape(cout, cin * kh * kw)
    out2d = w2d @ cols2d
    if b is not None:
        out2d = out2d + b.values[:, None]
    out = out2d.reshape(cout, hout, wout)

    def backward(g):
        g2d = g.reshape(cout, hout * wout)
        gw = (g2d @ cols2d.T).reshape(w.shape)
        gb = g2d.sum(axis=1) if b is not None else None
        gcols = (w2d.T @ g2d).reshape(cin, kh, kw, hout, wout)
        gpad = np.zeros_like(padded)
        for i in range(kh):
            for j in range(kw):
                gpad[:, i : i + hout * stride : stride, j : j + wout * stride : stride] += gcols[:, i, j]
        gx = gpad[:, padding : padding + h, padding : padding + wid] if padding else gpad
        if b is not None:
            return (gx, gw, gb)
        return (gx, gw)

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, backward)
