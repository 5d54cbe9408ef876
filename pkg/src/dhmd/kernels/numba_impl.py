"""Numba-compiled hot kernels. Signatures mirror ``numpy_impl`` exactly.

All kernels are single-threaded (no ``parallel=True``) so results are
bit-reproducible across runs on the same machine.
"""

import numpy as np
from numba import njit

BACKEND = "numba"


@njit(cache=True)
def _conv1d_forward(x, w, bias, y):
    b, t, cin = x.shape
    k, _, cout = w.shape
    pad = (k - 1) // 2
    for bb in range(b):
        for tt in range(t):
            for co in range(cout):
                acc = bias[co]
                for kk in range(k):
                    src = tt + kk - pad
                    if 0 <= src < t:
                        for ci in range(cin):
                            acc += x[bb, src, ci] * w[kk, ci, co]
                y[bb, tt, co] = acc


def conv1d_forward(x, w, bias):
    b, t, _ = x.shape
    y = np.empty((b, t, w.shape[2]), dtype=x.dtype)
    _conv1d_forward(x, w, bias, y)
    return y


@njit(cache=True)
def _conv1d_backward(x, w, gy, gx, gw, gbias):
    b, t, cin = x.shape
    k, _, cout = w.shape
    pad = (k - 1) // 2
    for bb in range(b):
        for tt in range(t):
            for co in range(cout):
                g = gy[bb, tt, co]
                gbias[co] += g
                for kk in range(k):
                    src = tt + kk - pad
                    if 0 <= src < t:
                        for ci in range(cin):
                            gw[kk, ci, co] += x[bb, src, ci] * g
                            gx[bb, src, ci] += w[kk, ci, co] * g


def conv1d_backward(x, w, gy):
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    gbias = np.zeros(w.shape[2], dtype=x.dtype)
    _conv1d_backward(x, w, gy, gx, gw, gbias)
    return gx, gw, gbias


@njit(cache=True)
def _triplet_hinge_forward(cos, pos, neg, margin):
    n = cos.shape[0]
    total = 0.0
    count = 0
    for i in range(n):
        for j in range(n):
            if not pos[i, j]:
                continue
            for k in range(n):
                if not neg[i, k]:
                    continue
                count += 1
                term = margin - cos[i, j] + cos[i, k]
                if term > 0.0:
                    total += term
    return total, count


def triplet_hinge_forward(cos, pos, neg, margin):
    total, count = _triplet_hinge_forward(cos, pos, neg, margin)
    return float(total), int(count)


@njit(cache=True)
def _triplet_hinge_backward(cos, pos, neg, margin, gscale, gcos):
    n = cos.shape[0]
    for i in range(n):
        for j in range(n):
            if not pos[i, j]:
                continue
            for k in range(n):
                if not neg[i, k]:
                    continue
                if margin - cos[i, j] + cos[i, k] > 0.0:
                    gcos[i, j] -= gscale
                    gcos[i, k] += gscale


def triplet_hinge_backward(cos, pos, neg, margin, gscale):
    gcos = np.zeros_like(cos)
    _triplet_hinge_backward(cos, pos, neg, margin, gscale, gcos)
    return gcos


@njit(cache=True)
def _adam_step(p, g, m, v, lr, beta1, beta2, eps, c1, c2):
    for i in range(p.size):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        p[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


def adam_step(p, g, m, v, lr, beta1, beta2, eps, t):
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    _adam_step(p.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
               lr, beta1, beta2, eps, c1, c2)
