"""Pure-numpy reference implementations of the hot kernels.

Each function here has a numba twin in ``numba_impl``; the two must agree to
float rounding. This module is the fallback when numba is unavailable or
disabled via ``DHMD_NUMBA=0``.
"""

import numpy as np

BACKEND = "numpy"


def _im2col(x, k):
    """[B,T,Cin] -> [B,T,k,Cin] sliding windows with zero 'same' padding."""
    b, t, c = x.shape
    pad = (k - 1) // 2
    xp = np.zeros((b, t + k - 1, c), dtype=x.dtype)
    xp[:, pad:pad + t, :] = x
    s0, s1, s2 = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, shape=(b, t, k, c), strides=(s0, s1, s1, s2), writeable=False
    )


def conv1d_forward(x, w, bias):
    """Temporal conv, same padding. x [B,T,Cin], w [K,Cin,Cout], bias [Cout]."""
    b, t, cin = x.shape
    k, _, cout = w.shape
    cols = _im2col(x, k).reshape(b * t, k * cin)
    y = cols @ w.reshape(k * cin, cout) + bias
    return y.reshape(b, t, cout)


def conv1d_backward(x, w, gy):
    """Returns (gx, gw, gbias) for conv1d_forward."""
    b, t, cin = x.shape
    k, _, cout = w.shape
    pad = (k - 1) // 2
    gy_flat = gy.reshape(b * t, cout)
    cols = _im2col(x, k).reshape(b * t, k * cin)
    gw = (cols.T @ gy_flat).reshape(k, cin, cout)
    gbias = gy_flat.sum(axis=0)
    gcols = (gy_flat @ w.reshape(k * cin, cout).T).reshape(b, t, k, cin)
    gxp = np.zeros((b, t + k - 1, cin), dtype=x.dtype)
    for kk in range(k):
        gxp[:, kk:kk + t, :] += gcols[:, :, kk, :]
    return gxp[:, pad:pad + t, :], gw, gbias


def triplet_hinge_forward(cos, pos, neg, margin):
    """Sum of max(0, margin - cos[i,j] + cos[i,k]) over (i,j,k) with
    pos[i,j] and neg[i,k]; also returns the triplet count |S|.
    """
    terms = margin - cos[:, :, None] + cos[:, None, :]
    mask = pos[:, :, None] & neg[:, None, :]
    active = mask & (terms > 0.0)
    return float(terms[active].sum()), int(mask.sum())


def triplet_hinge_backward(cos, pos, neg, margin, gscale):
    """Gradient of gscale * hinge_sum w.r.t. the cosine matrix."""
    terms = margin - cos[:, :, None] + cos[:, None, :]
    active = (pos[:, :, None] & neg[:, None, :]) & (terms > 0.0)
    af = active.astype(cos.dtype)
    return gscale * (af.sum(axis=1) - af.sum(axis=2))


def adam_step(p, g, m, v, lr, beta1, beta2, eps, t):
    """In-place Adam update with bias correction."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)
