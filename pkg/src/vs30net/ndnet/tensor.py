"""Dense float32 tensors with reverse-mode automatic differentiation.

The graph is define-by-run: every operation returns a fresh Tensor that
remembers its inputs and a closure routing the output gradient back to
them. backward() on a scalar walks the recorded graph once in reverse
topological order. There is no fusion, no laziness, and no threading;
given identical inputs the same graph produces bitwise-identical
results.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, NumericError

DTYPE = np.float32

_grad_enabled = True


def grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference/probe paths; frees memory)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """n-dimensional float32 array with an optional gradient buffer.

    data is always C-contiguous (row-major). grad, once populated, has
    the same shape and dtype as data.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def require_finite(self, context: str = "tensor"):
        if not self.all_finite():
            bad = int(np.size(self.data) - np.isfinite(self.data).sum())
            raise NumericError(f"{context}: {bad} non-finite value(s) in shape {self.shape}")

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self):
        """Populate grads of every reachable tensor that requires them.

        Only valid on scalars (size-1 tensors).
        """
        if self.data.size != 1:
            raise DimensionError(f"backward() requires a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{flag})"


@dataclass
class LayerParams:
    """One named model parameter or buffer.

    Names are slash-free dotted paths ("encoder.block2.conv1.weight"),
    unique within a model and stable across save/load. Buffers (batch
    norm running stats) are LayerParams with trainable=False.
    """

    name: str
    tensor: Tensor
    trainable: bool = True


def _toposort(root: Tensor):
    # Iterative DFS; graphs are shallow but loops should not rely on
    # the interpreter recursion limit.
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def accumulate_grad(t: Tensor, g: np.ndarray):
    if g.shape != t.data.shape:
        raise DimensionError(f"gradient shape {g.shape} vs data shape {t.data.shape}")
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        t.grad += g


def node(data: np.ndarray, parents, backward_fn) -> Tensor:
    """Wrap an op result, recording the graph edge when grads are on."""
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    # Reduce a broadcast gradient back onto the operand's shape.
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            accumulate_grad(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            accumulate_grad(b, _unbroadcast(g, b.data.shape))

    return node(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def backward(g):
        if a.requires_grad:
            accumulate_grad(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            accumulate_grad(b, _unbroadcast(-g, b.data.shape))

    return node(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            accumulate_grad(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            accumulate_grad(b, _unbroadcast(g * a.data, b.data.shape))

    return node(out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            accumulate_grad(a, -g)

    return node(-a.data, (a,), backward)


def square(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            accumulate_grad(a, g * (2 * a.data))

    return node(a.data * a.data, (a,), backward)


def absolute(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        # sign(0) == 0: subgradient 0 at zero residual
        if a.requires_grad:
            accumulate_grad(a, g * np.sign(a.data))

    return node(np.abs(a.data), (a,), backward)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims, dtype=DTYPE)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            accumulate_grad(a, np.broadcast_to(g.reshape(()), a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        accumulate_grad(a, np.broadcast_to(g, a.data.shape).astype(DTYPE))

    return node(np.asarray(out), (a,), backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.data.shape[ax]
    out = a.data.mean(axis=axis, keepdims=keepdims, dtype=DTYPE)

    def backward(g):
        if not a.requires_grad:
            return
        scale = np.float32(1.0 / count)
        if axis is None:
            accumulate_grad(a, np.broadcast_to((g * scale).reshape(()), a.data.shape).copy())
            return
        gg = g if keepdims else np.expand_dims(g, axis)
        accumulate_grad(a, np.broadcast_to(gg * scale, a.data.shape).astype(DTYPE))

    return node(np.asarray(out), (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            accumulate_grad(a, g.reshape(a.data.shape))

    return node(np.ascontiguousarray(out), (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    out = np.concatenate([p.data for p in parts], axis=axis)
    splits = np.cumsum([p.data.shape[axis] for p in parts])[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        for p, gp in zip(parts, pieces):
            if p.requires_grad:
                accumulate_grad(p, np.ascontiguousarray(gp))

    return node(out, tuple(parts), backward)


def backward(loss: Tensor):
    """Module-level alias for Tensor.backward()."""
    loss.backward()
