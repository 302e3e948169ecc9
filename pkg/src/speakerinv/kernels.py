"""Hot inner loops of the network and the samplers.

Every kernel exists twice: a numba-compiled loop (``*_nb``) and a vectorised
numpy version (``*_np``). The public names dispatch on ``_accel.USE_NUMBA``.
Both variants are exercised by ``tests/test_kernels.py`` and compared by
``benchmarks/bench_kernels.py``.

Layout conventions: signals are ``(batch, channels, time)`` float64 arrays,
convolutions are "valid" cross-correlations.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _accel
from ._accel import njit


# -- im2col / col2im ---------------------------------------------------------

@njit
def im2col_nb(x, k):
    b, c, t = x.shape
    t_out = t - k + 1
    cols = np.empty((b, t_out, c * k))
    for bi in range(b):
        for ti in range(t_out):
            for ci in range(c):
                base = ci * k
                for ki in range(k):
                    cols[bi, ti, base + ki] = x[bi, ci, ti + ki]
    return cols


def im2col_np(x, k):
    b, c, t = x.shape
    win = sliding_window_view(x, k, axis=2)  # (b, c, t_out, k)
    return np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(b, t - k + 1, c * k)


@njit
def col2im_nb(dcols, t, c, k):
    b, t_out, _ = dcols.shape
    dx = np.zeros((b, c, t))
    for bi in range(b):
        for ti in range(t_out):
            for ci in range(c):
                base = ci * k
                for ki in range(k):
                    dx[bi, ci, ti + ki] += dcols[bi, ti, base + ki]
    return dx


def col2im_np(dcols, t, c, k):
    b, t_out, _ = dcols.shape
    d = dcols.reshape(b, t_out, c, k).transpose(0, 2, 1, 3)
    dx = np.zeros((b, c, t))
    for ki in range(k):
        dx[:, :, ki:ki + t_out] += d[:, :, :, ki]
    return dx


# -- non-overlapping max pooling ----------------------------------------------

@njit
def maxpool_nb(x, p):
    b, c, t = x.shape
    t_out = t // p
    y = np.empty((b, c, t_out))
    arg = np.empty((b, c, t_out), dtype=np.int64)
    for bi in range(b):
        for ci in range(c):
            for ti in range(t_out):
                s = ti * p
                best = x[bi, ci, s]
                bj = 0
                for j in range(1, p):
                    v = x[bi, ci, s + j]
                    if v > best:
                        best = v
                        bj = j
                y[bi, ci, ti] = best
                arg[bi, ci, ti] = bj
    return y, arg


def maxpool_np(x, p):
    b, c, t = x.shape
    t_out = t // p
    xr = x[:, :, : t_out * p].reshape(b, c, t_out, p)
    arg = xr.argmax(axis=-1)
    y = np.take_along_axis(xr, arg[..., None], axis=-1)[..., 0]
    return y, arg


@njit
def maxpool_backward_nb(dy, arg, p, t):
    b, c, t_out = dy.shape
    dx = np.zeros((b, c, t))
    for bi in range(b):
        for ci in range(c):
            for ti in range(t_out):
                dx[bi, ci, ti * p + arg[bi, ci, ti]] = dy[bi, ci, ti]
    return dx


def maxpool_backward_np(dy, arg, p, t):
    b, c, t_out = dy.shape
    dx = np.zeros((b, c, t))
    view = dx[:, :, : t_out * p].reshape(b, c, t_out, p)
    np.put_along_axis(view, arg[..., None], dy[..., None], axis=-1)
    return dx


# -- von Mises rejection sampler (Best & Fisher, 1979) -------------------------

def _vonmises_loop(kappa, u, n):
    """Consume uniforms from ``u`` three at a time.

    Returns ``(angles, used)``; ``used == -1`` means the pool ran dry.
    """
    out = np.empty(n)
    tau = 1.0 + math.sqrt(1.0 + 4.0 * kappa * kappa)
    rho = (tau - math.sqrt(2.0 * tau)) / (2.0 * kappa)
    r = (1.0 + rho * rho) / (2.0 * rho)
    pos = 0
    m = u.shape[0]
    for i in range(n):
        while True:
            if pos + 3 > m:
                return out, -1
            u1 = u[pos]
            u2 = u[pos + 1]
            u3 = u[pos + 2]
            pos += 3
            z = math.cos(math.pi * u1)
            f = (1.0 + r * z) / (r + z)
            c = kappa * (r - f)
            if c * (2.0 - c) - u2 > 0.0 or (u2 > 0.0 and math.log(c / u2) + 1.0 - c >= 0.0):
                break
        f = min(1.0, max(-1.0, f))
        theta = math.acos(f)
        out[i] = theta if u3 > 0.5 else -theta
    return out, pos


vonmises_nb = njit(_vonmises_loop)
vonmises_py = _vonmises_loop


# -- dispatch ------------------------------------------------------------------

def im2col(x, k):
    # The strided numpy copy is memory-bound and beats the compiled loop on
    # the sinc layer (see the benchmark), so it serves both backends.
    return im2col_np(np.ascontiguousarray(x, dtype=np.float64), k)


def col2im(dcols, t, c, k):
    dcols = np.ascontiguousarray(dcols, dtype=np.float64)
    return _accel.select(col2im_nb, col2im_np)(dcols, t, c, k)


def maxpool(x, p):
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _accel.select(maxpool_nb, maxpool_np)(x, p)


def maxpool_backward(dy, arg, p, t):
    dy = np.ascontiguousarray(dy, dtype=np.float64)
    return _accel.select(maxpool_backward_nb, maxpool_backward_np)(dy, arg, p, t)


def vonmises_angles(kappa, u, n):
    return _accel.select(vonmises_nb, vonmises_py)(float(kappa), np.ascontiguousarray(u), int(n))
