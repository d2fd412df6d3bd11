"""Tensor node type and the reverse-mode tape."""
from __future__ import annotations

import numpy as np

from ..errors import ArgumentError, NumericalError


class Tensor:
    """An n-dimensional array that records how it was computed.

    A tensor is *recorded* when it either requires a gradient itself (a
    parameter or an input under test) or was produced from a recorded
    tensor. Unrecorded tensors carry no tape and cost nothing extra.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None, _parents=(), _backward=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def recorded(self) -> bool:
        return self.requires_grad or bool(self._parents)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0

    def __repr__(self):
        tag = " recorded" if self.recorded else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # operator sugar; the implementations live in ops
    def __add__(self, other):
        from .ops import add
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from .ops import sub
        return sub(self, other)

    def __rsub__(self, other):
        from .ops import sub
        return sub(other, self)

    def __mul__(self, other):
        from .ops import mul
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from .ops import mul
        return mul(self, -1.0)

    def __matmul__(self, other):
        from .ops import matmul
        return matmul(self, other)

    def sum(self):
        from .ops import tsum
        return tsum(self)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def make_node(data, parents, backward) -> Tensor:
    """Wrap an op result; attach the backward closure only if a parent is recorded."""
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    if any(p.recorded for p in parents):
        return Tensor(data, _parents=parents, _backward=backward)
    return Tensor(data)


def _toposort(root: Tensor):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.recorded and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, store=None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring a gradient.

    ``store`` is accepted for symmetry with the optimizer; its parameters
    are the same tensor objects, so nothing extra happens with it.
    """
    if not isinstance(loss, Tensor) or not loss.recorded:
        raise ArgumentError("backward called on a tensor that was not recorded on the tape")
    if loss.data.size != 1:
        raise ArgumentError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.all(np.isfinite(loss.data)):
        raise NumericalError(f"non-finite loss {float(np.asarray(loss.data).ravel()[0])}")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad += g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.recorded:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
