"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough machinery to differentiate a small vision transformer and its
loss terms: elementwise arithmetic with broadcasting, (batched) matmul,
reshapes, reductions, softmax, exact GELU, a clamped log, and token
gather/scatter for masked-autoencoder style index juggling.

Graphs are built eagerly. A node only keeps its parents and a backward
closure when some ancestor requires gradients, so running the same code
with frozen parameters costs almost nothing extra and builds no graph.
Python scalars stay Python scalars in the closures, which keeps float32
graphs float32.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "constant",
    "linear",
    "layer_norm",
    "softmax",
    "gelu",
    "clamped_log",
    "gather_tokens",
    "scatter_tokens",
]


class Tensor:
    """A numpy array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    def _accum(self, g):
        if self.requires_grad:
            self.grad = g if self.grad is None else self.grad + g

    def backward(self):
        """Backpropagate from a scalar node, accumulating into ``.grad``."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic ---------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            a, b = self, other
            out_data = a.data + b.data
            def bw(g):
                if a.requires_grad:
                    a._accum(_unbroadcast(g, a.data.shape))
                if b.requires_grad:
                    b._accum(_unbroadcast(g, b.data.shape))
            return Tensor._make(out_data, (a, b), bw)
        c = other
        a = self
        def bw_c(g):
            a._accum(_unbroadcast(g, a.data.shape))
        return Tensor._make(a.data + c, (a,), bw_c)

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            a, b = self, other
            def bw(g):
                if a.requires_grad:
                    a._accum(_unbroadcast(g * b.data, a.data.shape))
                if b.requires_grad:
                    b._accum(_unbroadcast(g * a.data, b.data.shape))
            return Tensor._make(a.data * b.data, (a, b), bw)
        c = other
        a = self
        def bw_c(g):
            a._accum(_unbroadcast(g * c, a.data.shape))
        return Tensor._make(a.data * c, (a,), bw_c)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return self + (-other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return self * (other ** -1.0)
        return self * (1.0 / other)

    def __pow__(self, p):
        a = self
        out_data = a.data ** p
        def bw(g):
            a._accum(g * (p * a.data ** (p - 1)))
        return Tensor._make(out_data, (a,), bw)

    # -- linear algebra and shaping -----------------------------------------

    def __matmul__(self, other):
        a, b = self, _as_tensor(other)
        out_data = a.data @ b.data
        def bw(g):
            if a.requires_grad:
                ga = g @ np.swapaxes(b.data, -1, -2)
                a._accum(_unbroadcast(ga, a.data.shape))
            if b.requires_grad:
                if b.data.ndim == 2 and g.ndim > 2:
                    # shared weight across a stacked batch: one flat gemm
                    k = a.data.shape[-1]
                    m = g.shape[-1]
                    gb = a.data.reshape(-1, k).T @ g.reshape(-1, m)
                else:
                    gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
                b._accum(gb)
        return Tensor._make(out_data, (a, b), bw)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old = a.data.shape
        def bw(g):
            a._accum(g.reshape(old))
        return Tensor._make(a.data.reshape(shape), (a,), bw)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        inv = tuple(np.argsort(axes))
        def bw(g):
            a._accum(g.transpose(inv))
        return Tensor._make(a.data.transpose(axes), (a,), bw)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        out_data = a.data.sum(axis=axis, keepdims=keepdims)
        def bw(g):
            a._accum(_spread(g, a.data.shape, axis, keepdims))
        return Tensor._make(out_data, (a,), bw)

    def mean(self, axis=None, keepdims=False):
        a = self
        out_data = a.data.mean(axis=axis, keepdims=keepdims)
        count = a.data.size if axis is None else _axis_size(a.data.shape, axis)
        def bw(g):
            a._accum(_spread(g, a.data.shape, axis, keepdims) * (1.0 / count))
        return Tensor._make(out_data, (a,), bw)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data, dtype=None):
    """Wrap an array as a non-differentiable leaf."""
    arr = np.asarray(data, dtype=dtype)
    return Tensor(arr)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _spread(g, shape, axis, keepdims):
    """Broadcast a reduced gradient back to the pre-reduction shape."""
    if axis is None:
        return np.broadcast_to(g, shape).copy() if np.ndim(g) == 0 else np.full(shape, g)
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(a % len(shape) for a in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def _axis_size(shape, axis):
    axes = axis if isinstance(axis, tuple) else (axis,)
    n = 1
    for a in axes:
        n *= shape[a]
    return n


def linear(x, w, b):
    """Fused affine map ``x @ w + b`` (bias broadcasts over leading axes)."""
    out_data = x.data @ w.data
    out_data += b.data
    def bw(g):
        if x.requires_grad:
            x._accum(g @ w.data.T)
        if w.requires_grad:
            k = x.data.shape[-1]
            w._accum(x.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1]))
        if b.requires_grad:
            lead = tuple(range(g.ndim - 1))
            b._accum(g.sum(axis=lead) if lead else g)
    return Tensor._make(out_data, (x, w, b), bw)


def layer_norm(x, gain, bias, eps=1e-6):
    """Normalize the last axis to zero mean and unit variance, then affine."""
    data = x.data
    mu = data.mean(axis=-1, keepdims=True)
    centered = data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out_data = xhat * gain.data + bias.data
    def bw(g):
        if x.requires_grad:
            dxhat = g * gain.data
            term = dxhat - dxhat.mean(axis=-1, keepdims=True) \
                - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)
            x._accum(inv * term)
        lead = tuple(range(g.ndim - 1))
        if gain.requires_grad:
            gain._accum((g * xhat).sum(axis=lead) if lead else g * xhat)
        if bias.requires_grad:
            bias._accum(g.sum(axis=lead) if lead else g)
    return Tensor._make(out_data, (x, gain, bias), bw)


def softmax(t, axis=-1):
    """Numerically stable softmax along ``axis``."""
    x = t.data
    y = x - x.max(axis=axis, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=axis, keepdims=True)
    def bw(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        t._accum((g - dot) * y)
    return Tensor._make(y, (t,), bw)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(t):
    """Exact Gaussian-error-function GELU."""
    x = t.data
    cdf = erf(x * _INV_SQRT2)
    cdf += 1.0
    cdf *= 0.5
    def bw(g):
        pdf = x * x
        pdf *= -0.5
        np.exp(pdf, out=pdf)
        pdf *= _INV_SQRT_2PI
        pdf *= x
        pdf += cdf
        pdf *= g
        t._accum(pdf)
    return Tensor._make(x * cdf, (t,), bw)


def clamped_log(t, floor):
    """log(max(x, floor)); gradient is zero in the clamped region."""
    x = t.data
    clamped = np.maximum(x, floor)
    def bw(g):
        t._accum(np.where(x > floor, g / clamped, 0.0))
    return Tensor._make(np.log(clamped), (t,), bw)


def gather_tokens(t, idx):
    """Select rows along axis 1: ``[B, N, D] x [B, K] -> [B, K, D]``."""
    idx3 = np.asarray(idx)[:, :, None]
    out_data = np.take_along_axis(t.data, idx3, axis=1)
    n = t.data.shape[1]
    def bw(g):
        full = np.zeros_like(t.data)
        np.put_along_axis(full, idx3, g, axis=1)
        t._accum(full)
    return Tensor._make(out_data, (t,), bw)


def scatter_tokens(t, idx, num_tokens):
    """Place rows into a zero canvas: ``[B, K, D] x [B, K] -> [B, N, D]``.

    Row indices must be unique per batch element.
    """
    b, _, d = t.data.shape
    idx3 = np.asarray(idx)[:, :, None]
    out_data = np.zeros((b, num_tokens, d), dtype=t.data.dtype)
    np.put_along_axis(out_data, idx3, t.data, axis=1)
    def bw(g):
        t._accum(np.take_along_axis(g, idx3, axis=1))
    return Tensor._make(out_data, (t,), bw)
