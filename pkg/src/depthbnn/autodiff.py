"""Minimal reverse-mode automatic differentiation over numpy float64 arrays.

Covers exactly the operations this model family needs: affine maps, the
LeakyReLU, softplus reparameterization, Gaussian CDF/survival (for the depth
pmf), log-softmax with label selection, and reductions.  The module-level
math functions (exp, log, softplus, normal_sf, ...) accept either Tensors or
plain floats/arrays and return the same kind, so distribution formulas can be
written once and evaluated on both the differentiable and the plain path.
"""

from __future__ import annotations

import math

import numpy as np

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

_erfc_vec = np.vectorize(math.erfc, otypes=[np.float64])


def _phi(x: np.ndarray) -> np.ndarray:
    """Standard normal density."""
    return _INV_SQRT_2PI * np.exp(-0.5 * np.square(x))


def _cdf_raw(x):
    """Phi(x), accurate in both tails via erfc."""
    return 0.5 * _erfc_vec(np.negative(x) / _SQRT2)


def _sf_raw(x):
    """1 - Phi(x), accurate for large positive x."""
    return 0.5 * _erfc_vec(np.asarray(x) / _SQRT2)


class Tensor:
    """Node in the computation graph; wraps a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # make numpy defer to the reflected operators instead of coercing
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        if type(data) is np.ndarray and data.dtype == np.float64:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.ndim != 0:
            raise ValueError("backward() requires a scalar root")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor({self.data!r}, requires_grad={self.requires_grad})"


def parameter(data, requires_grad=True) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root: Tensor):
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _accum(t: Tensor, g: np.ndarray):
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _result(data, parents, backward) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _result(out, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(out, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * a.data / np.square(b.data), b.data.shape))

    return _result(out, (a, b), bw)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    out = a.data**exponent

    def bw(g):
        if a.requires_grad:
            _accum(a, g * exponent * a.data ** (exponent - 1))

    return _result(out, (a,), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _result(out, (a, b), bw)


# ---------------------------------------------------------------------------
# elementwise functions, generic over Tensor / ndarray / float


def exp(x):
    if not isinstance(x, Tensor):
        return np.exp(x)
    out = np.exp(x.data)

    def bw(g):
        if x.requires_grad:
            _accum(x, g * out)

    return _result(out, (x,), bw)


def log(x):
    if not isinstance(x, Tensor):
        return np.log(x)
    out = np.log(x.data)

    def bw(g):
        if x.requires_grad:
            _accum(x, g / x.data)

    return _result(out, (x,), bw)


def sqrt(x):
    if not isinstance(x, Tensor):
        return np.sqrt(x)
    out = np.sqrt(x.data)

    def bw(g):
        if x.requires_grad:
            _accum(x, g * 0.5 / out)

    return _result(out, (x,), bw)


def softplus(x):
    """ln(1 + e^x), stable for large |x|."""
    if not isinstance(x, Tensor):
        return np.logaddexp(0.0, x)
    out = np.logaddexp(0.0, x.data)

    def bw(g):
        # derivative is the logistic sigmoid, written in its stable form
        if x.requires_grad:
            _accum(x, g * (0.5 * (1.0 + np.tanh(0.5 * x.data))))

    return _result(out, (x,), bw)


def leaky_relu(x, alpha: float):
    """max(alpha*x, x); at the kink the negative-side slope alpha is used."""
    if not isinstance(x, Tensor):
        return np.maximum(np.asarray(x) * alpha, x)
    out = np.maximum(x.data * alpha, x.data)

    def bw(g):
        if x.requires_grad:
            _accum(x, g * np.where(x.data > 0.0, 1.0, alpha))

    return _result(out, (x,), bw)


def normal_cdf(x):
    """Phi(x); derivative is the standard normal density."""
    if not isinstance(x, Tensor):
        return _cdf_raw(x)
    out = _cdf_raw(x.data)

    def bw(g):
        if x.requires_grad:
            _accum(x, g * _phi(x.data))

    return _result(out, (x,), bw)


def normal_sf(x):
    """1 - Phi(x), the survival function; stable in the upper tail."""
    if not isinstance(x, Tensor):
        return _sf_raw(x)
    out = _sf_raw(x.data)

    def bw(g):
        if x.requires_grad:
            _accum(x, -g * _phi(x.data))

    return _result(out, (x,), bw)


def clamp_min(x, floor: float):
    """Elementwise max(x, floor); gradient is zero where the floor binds."""
    if not isinstance(x, Tensor):
        return np.maximum(x, floor)
    out = np.maximum(x.data, floor)

    def bw(g):
        if x.requires_grad:
            _accum(x, g * (x.data > floor))

    return _result(out, (x,), bw)


# ---------------------------------------------------------------------------
# reductions and structured ops


def tsum(x, axis=None, keepdims=False):
    if not isinstance(x, Tensor):
        return np.sum(x, axis=axis, keepdims=keepdims)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if not x.requires_grad:
            return
        if axis is None:
            _accum(x, np.broadcast_to(g, x.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(x, np.broadcast_to(gg, x.data.shape).copy())

    return _result(out, (x,), bw)


def log_softmax(x) -> Tensor:
    """Row-wise log softmax over the last axis, max-shift stabilized."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - log_z

    def bw(g):
        if x.requires_grad:
            _accum(x, g - np.exp(out) * g.sum(axis=-1, keepdims=True))

    return _result(out, (x,), bw)


def select_labels(x, labels) -> Tensor:
    """Pick x[i, labels[i]] for each row i."""
    x = as_tensor(x)
    idx = np.asarray(labels, dtype=np.int64)
    rows = np.arange(x.data.shape[0])
    out = x.data[rows, idx]

    def bw(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            np.add.at(full, (rows, idx), g)
            _accum(x, full)

    return _result(out, (x,), bw)


def stack(tensors) -> Tensor:
    """Stack same-shaped tensors along a new leading axis."""
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts])

    def bw(g):
        for i, t in enumerate(ts):
            if t.requires_grad:
                _accum(t, g[i])

    return _result(out, tuple(ts), bw)


def zero_grads(tensors):
    for t in tensors:
        t.grad = None
