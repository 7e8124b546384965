"""Minimal eager reverse-mode autodiff over numpy arrays.

Values are computed immediately; ``backward()`` replays the recorded graph
once from a scalar root. Only the operations the losses need exist here.
Custom primitives (the fused field kernel, LBS blending, the Laplacian) hook
in by constructing a ``Var`` with explicit parent/vjp pairs.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _as_var(x) -> "Var":
    return x if isinstance(x, Var) else Var(x)


class Var:
    """One node of the computation graph."""

    __slots__ = ("value", "grad", "parents")

    def __init__(self, value, parents=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)

    # --- graph construction -------------------------------------------------

    def __add__(self, other):
        o = _as_var(other)
        return Var(
            self.value + o.value,
            [
                (self, lambda g: _unbroadcast(g, self.value.shape)),
                (o, lambda g: _unbroadcast(g, o.value.shape)),
            ],
        )

    __radd__ = __add__

    def __neg__(self):
        return Var(-self.value, [(self, lambda g: -g)])

    def __sub__(self, other):
        o = _as_var(other)
        return Var(
            self.value - o.value,
            [
                (self, lambda g: _unbroadcast(g, self.value.shape)),
                (o, lambda g: _unbroadcast(-g, o.value.shape)),
            ],
        )

    def __rsub__(self, other):
        return _as_var(other) - self

    def __mul__(self, other):
        o = _as_var(other)
        return Var(
            self.value * o.value,
            [
                (self, lambda g: _unbroadcast(g * o.value, self.value.shape)),
                (o, lambda g: _unbroadcast(g * self.value, o.value.shape)),
            ],
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = _as_var(other)
        inv = 1.0 / o.value
        return Var(
            self.value * inv,
            [
                (self, lambda g: _unbroadcast(g * inv, self.value.shape)),
                (o, lambda g: _unbroadcast(-g * self.value * inv * inv, o.value.shape)),
            ],
        )

    def __rtruediv__(self, other):
        return _as_var(other) / self

    def __pow__(self, exponent):
        if isinstance(exponent, Var):
            raise TypeError("only constant exponents are supported")
        e = float(exponent)
        return Var(
            self.value**e,
            [(self, lambda g: g * e * self.value ** (e - 1.0))],
        )

    def sum(self, axis=None, keepdims=False):
        shape = self.value.shape

        def vjp(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape)

        return Var(self.value.sum(axis=axis, keepdims=keepdims), [(self, vjp)])

    def sqrt(self):
        root = np.sqrt(self.value)
        return Var(root, [(self, lambda g: g * 0.5 / root)])

    def exp(self):
        e = np.exp(self.value)
        return Var(e, [(self, lambda g: g * e)])

    def log(self):
        return Var(np.log(self.value), [(self, lambda g: g / self.value)])

    def take(self, indices):
        """Row gather; backward scatter-adds into the source."""
        idx = np.asarray(indices, dtype=np.int64)

        def vjp(g):
            out = np.zeros_like(self.value)
            np.add.at(out, idx, g)
            return out

        return Var(self.value[idx], [(self, vjp)])

    # --- backward -----------------------------------------------------------

    def backward(self):
        """Accumulate gradients of this scalar into every reachable Var."""
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar root")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node.parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node.grad is None:
                continue
            for parent, vjp in node.parents:
                g = vjp(node.grad)
                if parent.grad is None:
                    parent.grad = np.array(g, dtype=np.float64, copy=True)
                else:
                    parent.grad = parent.grad + g
