"""A small array-level reverse-mode autodiff engine.

Only the operations needed by the speaker model are provided. Every op builds
its output ``Tensor`` and, if any parent requires a gradient, attaches a
closure that accumulates vector-Jacobian products into the parents.
"""
from __future__ import annotations

import numpy as np

from .. import kernels


class Tensor:
    """float64 array with an optional gradient buffer and a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self, seed=None):
        """Propagate ``seed`` (default: ones, i.e. d self / d self) to all leaves."""
        if seed is None:
            seed = np.ones_like(self.data)
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(seed)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar for the handful of elementwise ops we use
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_lift(other), -1.0))

    def __rsub__(self, other):
        return add(_lift(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    parents = tuple(parents)
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=parents if needs else ())
    if needs:
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------------

def add(a, b):
    a, b = _lift(a), _lift(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def mul(a, b):
    a, b = _lift(a), _lift(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def sigmoid(a):
    s = np.empty_like(a.data)
    pos = a.data >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    s[~pos] = e / (1.0 + e)

    def backward(g):
        a._accumulate(g * s * (1.0 - s))

    return _make(s, (a,), backward)


def leaky_relu(a, slope):
    mask = a.data > 0
    scale = np.where(mask, 1.0, slope)

    def backward(g):
        a._accumulate(g * scale)

    return _make(a.data * scale, (a,), backward)


def reshape(a, shape):
    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), backward)


def select(a, index):
    """``a[:, index]`` for a 2-D tensor."""
    def backward(g):
        full = np.zeros_like(a.data)
        full[:, index] = g
        a._accumulate(full)

    return _make(a.data[:, index], (a,), backward)


# -- layers ----------------------------------------------------------------------

def dense(x, weight, bias):
    """``x @ weight.T + bias`` with x of shape (batch, in)."""
    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ weight.data)
        if weight.requires_grad:
            weight._accumulate(g.T @ x.data)
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=0))

    return _make(x.data @ weight.data.T + bias.data, (x, weight, bias), backward)


def conv1d(x, weight, bias=None):
    """Valid cross-correlation: x (B, Cin, T), weight (Cout, Cin, K)."""
    b, cin, t = x.shape
    cout, _, k = weight.shape
    cols = kernels.im2col(x.data, k)  # (B, To, Cin*K)
    wmat = weight.data.reshape(cout, cin * k)
    y = cols @ wmat.T  # (B, To, Cout)
    y = np.ascontiguousarray(y.transpose(0, 2, 1))
    if bias is not None:
        y += bias.data[None, :, None]
    parents = (x, weight) if bias is None else (x, weight, bias)
    saved = cols if weight.requires_grad else None
    del cols

    def backward(g):
        gt = g.transpose(0, 2, 1)  # (B, To, Cout)
        if weight.requires_grad:
            dw = np.tensordot(gt, saved, axes=([0, 1], [0, 1]))
            weight._accumulate(dw.reshape(cout, cin, k))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2)))
        if x.requires_grad:
            x._accumulate(kernels.col2im(gt @ wmat, t, cin, k))

    return _make(y, parents, backward)


def maxpool1d(x, p):
    y, arg = kernels.maxpool(x.data, p)
    t = x.shape[2]

    def backward(g):
        x._accumulate(kernels.maxpool_backward(g, arg, p, t))

    return _make(y, (x,), backward)


def layer_norm(x, gain, bias, eps):
    """Normalise each example over all (channel, time) features."""
    axes = tuple(range(1, x.data.ndim))
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(g, bias.shape))
        if x.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=axes, keepdims=True)
            m2 = (gx * xhat).mean(axis=axes, keepdims=True)
            x._accumulate(inv * (gx - m1 - xhat * m2))

    return _make(y, (x, gain, bias), backward)


def softmax(z):
    """Row-wise softmax of a (batch, classes) tensor."""
    shifted = z.data - z.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        z._accumulate(p * (g - (g * p).sum(axis=1, keepdims=True)))

    return _make(p, (z,), backward)


def cross_entropy(z, labels):
    """Mean negative log-likelihood of integer ``labels`` under softmax(z)."""
    labels = np.asarray(labels, dtype=np.int64)
    bsz = z.shape[0]
    shifted = z.data - z.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(lse - shifted[np.arange(bsz), labels]))

    def backward(g):
        p = np.exp(shifted - lse[:, None])
        p[np.arange(bsz), labels] -= 1.0
        z._accumulate(g * p / bsz)

    return _make(np.array(loss), (z,), backward)


def sinc_bandpass(low, high, n, window):
    """Windowed difference-of-sincs band-pass kernels.

    ``low``/``high`` hold cutoffs in cycles per sample, shape (F,); ``n`` is the
    symmetric tap index grid, shape (K,). Kernel rows are

        (sin(2 pi high n) - sin(2 pi low n)) / (pi n) * window

    with the n = 0 limit 2 (high - low).
    """
    n = np.asarray(n, dtype=np.float64)
    center = n == 0
    safe = np.where(center, 1.0, n)
    arg_hi = 2.0 * np.pi * high.data[:, None] * n[None, :]
    arg_lo = 2.0 * np.pi * low.data[:, None] * n[None, :]
    band = (np.sin(arg_hi) - np.sin(arg_lo)) / (np.pi * safe)
    band[:, center] = 2.0 * (high.data - low.data)[:, None]
    h = band * window[None, :]

    def backward(g):
        gw = g * window[None, :]
        if high.requires_grad:
            high._accumulate((2.0 * np.cos(arg_hi) * gw).sum(axis=1))
        if low.requires_grad:
            low._accumulate((-2.0 * np.cos(arg_lo) * gw).sum(axis=1))

    return _make(h, (low, high), backward)
