"""Dense float64 tensors with reverse-mode automatic differentiation.

Ops record a computation graph as they run; calling ``backward()`` on a
scalar root walks the graph once in reverse topological order and leaves
the total derivative on every ``requires_grad`` leaf. Graphs are
single-use: a second backward through any interior node raises.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError, DomainError, GraphStateError

__all__ = ["Tensor", "concat"]


def _check_broadcast(sa, sb):
    # scalars promote freely; otherwise ranks must agree and each dim
    # must match or be 1
    if sa == () or sb == ():
        return
    if len(sa) != len(sb):
        raise DimensionError(f"rank mismatch: {sa} vs {sb}")
    for da, db in zip(sa, sb):
        if da != db and 1 not in (da, db):
            raise DimensionError(f"shapes not broadcastable: {sa} vs {sb}")


def _unbroadcast(g, shape):
    """Reduce a broadcasted gradient back to the shape of its source."""
    if g.shape == shape:
        return g
    if shape == ():
        return g.sum()
    axes = tuple(i for i, (ds, dg) in enumerate(zip(shape, g.shape)) if ds == 1 and dg != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """A float64 array plus an optional gradient and graph linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward_fn = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing ----------------------------------------------------

    @staticmethod
    def _make(data, parents, backward_fn):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward_fn = backward_fn
        return out

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros(self.data.shape, dtype=np.float64)
        self.grad += g

    def backward(self):
        """Propagate d(root)/d(leaf) to every requires_grad leaf.

        The root must be a scalar. Every interior node visited is marked
        consumed; reusing one in a later backward raises GraphStateError.
        """
        if self.data.ndim != 0:
            raise ContractError(f"backward() root must be scalar, got shape {self.shape}")

        order = []
        seen = set()
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
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        for node in order:
            if node._parents and node._consumed:
                raise GraphStateError("backward on a consumed graph; rebuild the graph per step")
        for node in order:
            if node._parents:
                node._consumed = True

        self._accumulate(np.ones((), dtype=np.float64))
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- elementwise binary ops ---------------------------------------------

    @staticmethod
    def _coerce(other):
        if isinstance(other, Tensor):
            return other
        return Tensor(other)

    def __add__(self, other):
        other = self._coerce(other)
        _check_broadcast(self.shape, other.shape)

        def back(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        return Tensor._make(self.data + other.data, (self, other), back)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        _check_broadcast(self.shape, other.shape)

        def back(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g, other.shape))

        return Tensor._make(self.data - other.data, (self, other), back)

    def __rsub__(self, other):
        return self._coerce(other).__sub__(self)

    def __mul__(self, other):
        other = self._coerce(other)
        _check_broadcast(self.shape, other.shape)
        a, b = self.data, other.data

        def back(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * b, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * a, other.shape))

        return Tensor._make(a * b, (self, other), back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        _check_broadcast(self.shape, other.shape)
        if np.any(other.data == 0.0):
            raise DomainError("division by zero")
        a, b = self.data, other.data

        def back(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / b, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g * a / (b * b), other.shape))

        return Tensor._make(a / b, (self, other), back)

    def __rtruediv__(self, other):
        return self._coerce(other).__truediv__(self)

    def __neg__(self):
        def back(g):
            if self.requires_grad:
                self._accumulate(-g)

        return Tensor._make(-self.data, (self,), back)

    def __pow__(self, exponent):
        e = float(exponent)
        if e != int(e) and np.any(self.data < 0.0):
            raise DomainError("fractional power of negative base")
        a = self.data
        out_data = a ** e

        def back(g):
            if self.requires_grad:
                with np.errstate(divide="ignore", invalid="ignore"):
                    d = e * a ** (e - 1.0)
                # kink convention at 0 for e < 1, mirroring sign(0) = 0
                d = np.where(np.isfinite(d), d, 0.0)
                self._accumulate(g * d)

        return Tensor._make(out_data, (self,), back)

    # -- elementwise unary ops ----------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def back(g):
            if self.requires_grad:
                self._accumulate(g * out_data)

        return Tensor._make(out_data, (self,), back)

    def log(self):
        if np.any(self.data <= 0.0):
            raise DomainError("log of non-positive input")
        a = self.data

        def back(g):
            if self.requires_grad:
                self._accumulate(g / a)

        return Tensor._make(np.log(a), (self,), back)

    def relu(self):
        a = self.data

        def back(g):
            if self.requires_grad:
                self._accumulate(g * (a > 0.0))

        return Tensor._make(np.maximum(a, 0.0), (self,), back)

    def abs(self):
        a = self.data

        def back(g):
            if self.requires_grad:
                self._accumulate(g * np.sign(a))

        return Tensor._make(np.abs(a), (self,), back)

    def sign(self):
        # derivative is zero almost everywhere (sign(0) = 0), so the
        # result is detached from the graph
        return Tensor(np.sign(self.data))

    def sqrt(self):
        return self.__pow__(0.5)

    def clamp(self, lo: float, hi: float):
        if not lo < hi:
            raise ContractError(f"clamp requires lo < hi, got [{lo}, {hi}]")
        a = self.data

        def back(g):
            if self.requires_grad:
                self._accumulate(g * ((a >= lo) & (a <= hi)))

        return Tensor._make(np.clip(a, lo, hi), (self,), back)

    # -- matrix ops -----------------------------------------------------------

    def matmul(self, other):
        other = self._coerce(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise DimensionError("matmul expects 2-D operands")
        if self.shape[1] != other.shape[0]:
            raise DimensionError(f"inner dimensions disagree: {self.shape} @ {other.shape}")
        a, b = self.data, other.data

        def back(g):
            if self.requires_grad:
                self._accumulate(g @ b.T)
            if other.requires_grad:
                other._accumulate(a.T @ g)

        return Tensor._make(a @ b, (self, other), back)

    __matmul__ = matmul

    def transpose(self):
        if self.data.ndim != 2:
            raise DimensionError("transpose expects a 2-D tensor")

        def back(g):
            if self.requires_grad:
                self._accumulate(g.T)

        return Tensor._make(self.data.T, (self,), back)

    def gather_rows(self, indices):
        """Select rows of a 2-D tensor; backward scatter-adds."""
        if self.data.ndim != 2:
            raise DimensionError("gather_rows expects a 2-D tensor")
        idx = np.asarray(indices, dtype=np.intp)
        if idx.ndim != 1:
            raise DimensionError("gather_rows expects a 1-D index list")
        if idx.size and (idx.min() < 0 or idx.max() >= self.shape[0]):
            raise ContractError("row index out of range")
        shape = self.data.shape

        def back(g):
            if self.requires_grad:
                full = np.zeros(shape, dtype=np.float64)
                np.add.at(full, idx, g)
                self._accumulate(full)

        return Tensor._make(self.data[idx], (self,), back)

    # -- reductions -------------------------------------------------------------

    def _check_axis(self, axis):
        if axis is not None and not (-self.data.ndim <= axis < self.data.ndim):
            raise DimensionError(f"axis {axis} invalid for shape {self.shape}")

    def sum(self, axis=None, keepdims: bool = False):
        self._check_axis(axis)
        shape = self.data.shape

        def back(g):
            if self.requires_grad:
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(g, shape).copy())

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None, keepdims: bool = False):
        self._check_axis(axis)
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    def max(self, axis=None, keepdims: bool = False):
        self._check_axis(axis)
        a = self.data
        out_data = a.max(axis=axis, keepdims=keepdims)

        def back(g):
            if not self.requires_grad:
                return
            # ties route to the lowest index, matching the argmax rule
            if axis is None:
                mask = np.zeros(a.shape, dtype=np.float64)
                mask[np.unravel_index(np.argmax(a), a.shape)] = 1.0
                self._accumulate(mask * g)
            else:
                idx = np.expand_dims(np.argmax(a, axis=axis), axis)
                mask = np.zeros(a.shape, dtype=np.float64)
                np.put_along_axis(mask, idx, 1.0, axis=axis)
                ge = g if keepdims else np.expand_dims(g, axis)
                self._accumulate(mask * ge)

        return Tensor._make(out_data, (self,), back)

    def argmax(self, axis=None):
        """Index of the largest element; ties break to the lowest index.

        Not differentiable: returns a plain integer ndarray.
        """
        self._check_axis(axis)
        return np.argmax(self.data, axis=axis)

    def log_sum_exp(self, axis=None, keepdims: bool = False):
        """log(sum(exp(x))) computed with a max shift, overflow-free."""
        self._check_axis(axis)
        a = self.data
        m = a.max(axis=axis, keepdims=True) if a.size else a
        shifted = np.exp(a - m)
        total = shifted.sum(axis=axis, keepdims=True)
        out_full = m + np.log(total)
        out_data = out_full if axis is None and a.ndim == 0 else (
            out_full.reshape(()) if axis is None else
            (out_full if keepdims else np.squeeze(out_full, axis=axis))
        )
        soft = shifted / total

        def back(g):
            if self.requires_grad:
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accumulate(soft * g)

        return Tensor._make(out_data, (self,), back)


def concat(tensors, axis: int = 0):
    """Concatenate 2-D tensors along an axis; backward splits the gradient."""
    tensors = [Tensor._coerce(t) for t in tensors]
    if not tensors:
        raise ContractError("concat of empty list")
    for t in tensors:
        if t.data.ndim != 2:
            raise DimensionError("concat expects 2-D tensors")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = (slice(lo, hi), slice(None)) if axis == 0 else (slice(None), slice(lo, hi))
                t._accumulate(g[sl])

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)
