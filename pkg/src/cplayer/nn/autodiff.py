"""A small reverse-mode autodiff engine over numpy arrays.

A :class:`Value` wraps an array and remembers the op that produced it. Calling
``backward()`` on a result walks the recorded graph in reverse topological
order, so every node's backward rule runs exactly once.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class Value:
    __slots__ = ("data", "grad", "parents", "op", "requires_grad", "_backward", "name")

    def __init__(self, data, parents: Sequence["Value"] = (), op: str = "",
                 requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data)
        self.grad: Optional[np.ndarray] = None
        self.parents = tuple(parents)
        self.op = op
        self.requires_grad = requires_grad
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self.name = name

    def __repr__(self):
        label = self.name or self.op or "leaf"
        return f"Value({label}, shape={self.data.shape}, dtype={self.data.dtype})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g: np.ndarray):
        if not self.requires_grad:
            return
        g = np.asarray(g, dtype=self.data.dtype)
        if g.shape != self.data.shape:
            raise ValueError(f"gradient shape {g.shape} != value shape {self.data.shape}")
        # never mutated in place, so sharing the incoming array is safe
        self.grad = g if self.grad is None else self.grad + g

    def topo_order(self) -> list["Value"]:
        order, seen = [], set()
        stack = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = self.topo_order()
        for node in order:
            if node._backward is not None:
                node.grad = None  # leaves keep accumulating across calls; interior nodes do not
        self.grad = None
        self.accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar, mostly for tests and small graphs
    def __add__(self, other):
        from .functional import add
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from .functional import add, neg
        return add(self, neg(as_value(other)))

    def __rsub__(self, other):
        from .functional import add, neg
        return add(as_value(other), neg(self))

    def __mul__(self, other):
        from .functional import mul
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from .functional import neg
        return neg(self)

    def __matmul__(self, other):
        from .functional import matmul
        return matmul(self, other)

    def sum(self, axis=None):
        from .functional import reduce_sum
        return reduce_sum(self, axis)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def parameter(data, name: Optional[str] = None) -> Value:
    return Value(data, requires_grad=True, name=name)


def make_node(data, parents: Sequence[Value], op: str, backward: Callable[[np.ndarray], None]) -> Value:
    """Create an op result; the backward closure is only kept if some input needs grads."""
    needs = any(p.requires_grad for p in parents)
    out = Value(data, parents if needs else (), op, requires_grad=needs)
    if needs:
        out._backward = backward
    return out
