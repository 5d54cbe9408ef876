"""Minimal reverse-mode automatic differentiation over numpy arrays.

Everything trainable in this package is expressed through the ``Tensor``
class below: a float64 ndarray plus a backward closure. The op set is
deliberately small — exactly what the model needs — and every op's gradient
is exercised by the finite-difference suites in the tests.

Hot paths (temporal convolution, exhaustive triplet hinge) dispatch to
``dhmd.kernels`` which provides numba and pure-numpy twins.
"""

import contextlib

import numpy as np

from . import kernels

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction (evaluation-only forward passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _reduce_to(g, shape):
    """Sum-reduce a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gs, s) in enumerate(zip(g.shape, shape)):
        if s == 1 and gs != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def _accum(self, g):
        g = _reduce_to(np.asarray(g, dtype=np.float64), self.data.shape)
        if self.grad is None:
            # copy: g may alias a child's grad buffer or be a view
            self.grad = np.array(g)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without grad requires a scalar tensor")
            grad = np.ones_like(self.data)
        # iterative topological order over the tape
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
            for p in node._parents:
                if id(p) not in seen and (p.requires_grad or p._parents):
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=np.float64).reshape(self.data.shape)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward=backward)
    return Tensor(data)


# elementwise -----------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad or a._parents:
            a._accum(g)
        if b.requires_grad or b._parents:
            b._accum(g)

    return _make(out_data, (a, b), bwd)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad or a._parents:
            a._accum(g * b.data)
        if b.requires_grad or b._parents:
            b._accum(g * a.data)

    return _make(out_data, (a, b), bwd)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def bwd(g):
        if a.requires_grad or a._parents:
            a._accum(g / b.data)
        if b.requires_grad or b._parents:
            b._accum(-g * out_data / b.data)

    return _make(out_data, (a, b), bwd)


def _unary(a, fn, dfn):
    a = as_tensor(a)
    out_data = fn(a.data)

    def bwd(g):
        a._accum(g * dfn(a.data, out_data))

    return _make(out_data, (a,), bwd)


def tanh(a):
    return _unary(a, np.tanh, lambda x, y: 1.0 - y * y)


def exp(a):
    return _unary(a, np.exp, lambda x, y: y)


def log(a):
    return _unary(a, np.log, lambda x, y: 1.0 / x)


def sqrt(a):
    return _unary(a, np.sqrt, lambda x, y: 0.5 / y)


def abs_(a):
    return _unary(a, np.abs, lambda x, y: np.sign(x))


def relu(a):
    return _unary(a, lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0.0).astype(np.float64))


def square(a):
    return _unary(a, np.square, lambda x, y: 2.0 * x)


# linear algebra --------------------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad or a._parents:
            a._accum(_reduce_to(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        if b.requires_grad or b._parents:
            b._accum(_reduce_to(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _make(out_data, (a, b), bwd)


def affine(x, w, b):
    """Fused x @ w + b on the last axis (one tape node per linear layer)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    out_data = x.data @ w.data + b.data

    def bwd(g):
        if x.requires_grad or x._parents:
            x._accum(g @ w.data.T)
        if w.requires_grad:
            w._accum(_reduce_to(np.swapaxes(x.data, -1, -2) @ g, w.data.shape))
        if b.requires_grad:
            b._accum(_reduce_to(g, b.data.shape))

    return _make(out_data, (x, w, b), bwd)


# shape -----------------------------------------------------------------


def reshape(a, shape):
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def bwd(g):
        a._accum(g.reshape(a.data.shape))

    return _make(out_data, (a,), bwd)


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    out_data = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def bwd(g):
        a._accum(np.transpose(g, inv))

    return _make(out_data, (a,), bwd)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad or t._parents:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accum(g[tuple(idx)])

    return _make(out_data, tuple(tensors), bwd)


def take(a, idx):
    """Basic slicing or integer-array gather; backward scatter-adds."""
    a = as_tensor(a)
    out_data = a.data[idx]

    def bwd(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, idx, g)
        a._accum(acc)

    return _make(out_data, (a,), bwd)


# reductions ------------------------------------------------------------


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.data.shape))

    return _make(out_data, (a,), bwd)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis] if isinstance(axis, int) else int(
            np.prod([a.data.shape[ax] for ax in axis]))
    return mul(sum_(a, axis, keepdims), 1.0 / n)


# softmax family --------------------------------------------------------


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        a._accum(out_data * (g - dot))

    return _make(out_data, (a,), bwd)


def logsumexp(a, axis=-1):
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out_data = np.squeeze(m + np.log(s), axis=axis)
    soft = e / s

    def bwd(g):
        a._accum(np.expand_dims(g, axis) * soft)

    return _make(out_data, (a,), bwd)


def masked_fill(a, mask, value):
    """Set positions where ``mask`` is True to a constant."""
    a = as_tensor(a)
    out_data = np.where(mask, value, a.data)

    def bwd(g):
        a._accum(np.where(mask, 0.0, g))

    return _make(out_data, (a,), bwd)


def masked_max_time(a, mask):
    """Max over axis 1 restricted to mask==True steps.

    a: [B,T,K]; mask: [B,T] bool with at least one True per row.
    Gradient routes to the (first) argmax position per (b, k).
    """
    a = as_tensor(a)
    neg = np.where(mask[:, :, None], a.data, -np.inf)
    arg = neg.argmax(axis=1)  # [B,K]
    b, t, k = a.data.shape
    bi = np.arange(b)[:, None]
    ki = np.arange(k)[None, :]
    out_data = a.data[bi, arg, ki]

    def bwd(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, (bi, arg, ki), g)
        a._accum(acc)

    return _make(out_data, (a,), bwd)


# fused / kernel-backed ops ---------------------------------------------


def attention_core(q, k, v, src_mask, scale):
    """Fused scaled-dot-product attention with source-key masking.

    q: [B,h,Tq,d]; k, v: [B,h,Tk,d]; src_mask: [B,Tk] bool (True = valid key).
    Returns (context Tensor [B,h,Tq,d], attention weights ndarray).
    Masked keys receive -inf pre-softmax, so their weights are exactly zero.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    scores = (q.data @ np.swapaxes(k.data, -1, -2)) * scale
    scores = np.where(src_mask[:, None, None, :], scores, -np.inf)
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    attn = e / e.sum(axis=-1, keepdims=True)
    out_data = attn @ v.data

    def bwd(g):
        if v.requires_grad or v._parents:
            v._accum(np.swapaxes(attn, -1, -2) @ g)
        d_attn = g @ np.swapaxes(v.data, -1, -2)
        d_scores = attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True))
        if q.requires_grad or q._parents:
            q._accum((d_scores @ k.data) * scale)
        if k.requires_grad or k._parents:
            k._accum((np.swapaxes(d_scores, -1, -2) @ q.data) * scale)

    return _make(out_data, (q, k, v), bwd), attn


def layer_norm(x, gamma, beta, eps=1e-5):
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gamma.data + beta.data

    def bwd(g):
        if gamma.requires_grad:
            gamma._accum((g * xhat).reshape(-1, x.data.shape[-1]).sum(axis=0))
        if beta.requires_grad:
            beta._accum(g.reshape(-1, x.data.shape[-1]).sum(axis=0))
        gy = g * gamma.data
        m1 = gy.mean(axis=-1, keepdims=True)
        m2 = (gy * xhat).mean(axis=-1, keepdims=True)
        x._accum(inv * (gy - m1 - xhat * m2))

    return _make(out_data, (x, gamma, beta), bwd)


def conv1d(x, w, bias):
    """Same-padding temporal convolution; kernel-backed.

    x: [B,T,Cin]; w: [K,Cin,Cout] with K odd; bias: [Cout].
    """
    x, w, bias = as_tensor(x), as_tensor(w), as_tensor(bias)
    k = w.data.shape[0]
    t = x.data.shape[1]
    if k % 2 == 0:
        raise ValueError(f"conv1d kernel size must be odd, got {k}")
    if k > 2 * t + 1:
        raise ValueError(f"conv1d kernel size {k} exceeds 2*T+1 = {2 * t + 1}")
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    out_data = kernels.conv1d_forward(xd, wd, bias.data)

    def bwd(g):
        gx, gw, gb = kernels.conv1d_backward(xd, wd, np.ascontiguousarray(g))
        if x.requires_grad or x._parents:
            x._accum(gx)
        if w.requires_grad:
            w._accum(gw)
        if bias.requires_grad:
            bias._accum(gb)

    return _make(out_data, (x, w, bias), bwd)


def triplet_hinge_mean(cos, pos_mask, neg_mask, margin):
    """Mean over (i,j,k) with pos[i,j] & neg[i,k] of max(0, margin - C[i,j] + C[i,k]).

    Returns (loss Tensor, triplet count). Count 0 yields a constant zero loss.
    """
    cos = as_tensor(cos)
    cd = np.ascontiguousarray(cos.data)
    pos = np.ascontiguousarray(pos_mask)
    neg = np.ascontiguousarray(neg_mask)
    total, count = kernels.triplet_hinge_forward(cd, pos, neg, float(margin))
    if count == 0:
        return Tensor(0.0), 0
    out_data = np.float64(total / count)

    def bwd(g):
        gc = kernels.triplet_hinge_backward(cd, pos, neg, float(margin),
                                            float(g) / count)
        cos._accum(gc)

    return _make(out_data, (cos,), bwd), count


# composite helpers ------------------------------------------------------


def masked_mean_time(x, mask):
    """Mean over valid timesteps. x: [B,T,C]; mask: [B,T] bool."""
    w = mask.astype(np.float64)[:, :, None]
    cnt = w.sum(axis=1)
    return mul(sum_(mul(x, w), axis=1), 1.0 / cnt)


def l2_normalize(x, eps=1e-12):
    """Row-normalize the last axis."""
    n = sqrt(sum_(square(x), axis=-1, keepdims=True) + eps)
    return div(x, n)


def cosine_rows(a, b, eps=1e-12):
    """Per-row cosine similarity along the last axis."""
    num = sum_(mul(a, b), axis=-1)
    da = sqrt(sum_(square(a), axis=-1) + eps)
    db = sqrt(sum_(square(b), axis=-1) + eps)
    return div(num, mul(da, db))
