"""Engine-level tests: op semantics and gradients vs central differences."""

import numpy as np
import pytest

from dhmd import autodiff as ad
from dhmd import kernels
from dhmd.autodiff import Parameter, Tensor
from dhmd.gradcheck import check_gradients, numerical_grad


def _rng(seed=0):
    return np.random.default_rng(seed)


def _check(loss_fn, params, seed=0, n=12):
    return check_gradients(loss_fn, [(f"p{i}", p) for i, p in enumerate(params)],
                           _rng(seed), n_coords=n)


def test_add_mul_broadcast_values():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([10.0, 20.0])
    out = ad.add(ad.mul(a, b), 1.0)
    assert np.allclose(out.data, [[11.0, 41.0], [31.0, 81.0]])


def test_broadcast_gradient_reduces():
    rng = _rng(1)
    a = Parameter(rng.standard_normal((3, 4)))
    b = Parameter(rng.standard_normal(4))
    _check(lambda: ad.sum_(ad.mul(a, b)), [a, b])


def test_div_gradient():
    rng = _rng(2)
    a = Parameter(rng.standard_normal((2, 3)) + 3.0)
    b = Parameter(rng.standard_normal((2, 3)) + 5.0)
    _check(lambda: ad.sum_(ad.div(a, b)), [a, b])


@pytest.mark.parametrize("op", [ad.tanh, ad.exp, ad.sqrt, ad.square, ad.log])
def test_unary_gradients(op):
    rng = _rng(3)
    a = Parameter(rng.uniform(0.5, 2.0, size=(3, 3)))
    _check(lambda: ad.sum_(op(a)), [a])


def test_abs_and_relu_gradients_away_from_kink():
    a = Parameter(np.array([-2.0, -0.5, 0.7, 1.5]))
    _check(lambda: ad.sum_(ad.abs_(a)), [a])
    _check(lambda: ad.sum_(ad.relu(a)), [a])


def test_matmul_2d_and_batched():
    rng = _rng(4)
    a = Parameter(rng.standard_normal((2, 3, 4)))
    b = Parameter(rng.standard_normal((2, 4, 5)))
    w = Parameter(rng.standard_normal((5, 2)))
    _check(lambda: ad.sum_(ad.square(ad.matmul(ad.matmul(a, b), w))), [a, b, w])


def test_matmul_broadcast_param_grad():
    rng = _rng(5)
    x = Tensor(rng.standard_normal((3, 4, 6)))
    w = Parameter(rng.standard_normal((6, 2)))
    _check(lambda: ad.sum_(ad.square(ad.matmul(x, w))), [w])


def test_reshape_transpose_concat_take():
    rng = _rng(6)
    a = Parameter(rng.standard_normal((2, 6)))
    b = Parameter(rng.standard_normal((2, 3)))

    def loss():
        x = ad.reshape(a, (2, 3, 2))
        x = ad.transpose(x, (1, 0, 2))
        y = ad.concat([ad.reshape(x, (3, 4)), ad.transpose(b, (1, 0))], axis=1)
        return ad.sum_(ad.square(y[1:, :]))

    _check(loss, [a, b])


def test_gather_scatter_duplicate_indices():
    a = Parameter(np.array([1.0, 2.0, 3.0]))
    idx = np.array([0, 0, 2])
    out = a[idx]
    ad.sum_(out).backward()
    assert np.allclose(a.grad, [2.0, 0.0, 1.0])


def test_sum_mean_axes():
    rng = _rng(7)
    a = Parameter(rng.standard_normal((3, 4, 5)))
    _check(lambda: ad.sum_(ad.square(ad.mean(a, axis=1))), [a])
    _check(lambda: ad.sum_(ad.square(ad.sum_(a, axis=2, keepdims=True))), [a])


def test_softmax_rows_and_gradient():
    rng = _rng(8)
    a = Parameter(rng.standard_normal((4, 6)))
    s = ad.softmax(a)
    assert np.allclose(s.data.sum(axis=1), 1.0)
    _check(lambda: ad.sum_(ad.square(ad.softmax(a))), [a])


def test_logsumexp_matches_numpy_and_grad():
    rng = _rng(9)
    a = Parameter(rng.standard_normal((5, 3)) * 3)
    out = ad.logsumexp(a)
    ref = np.log(np.exp(a.data).sum(axis=-1))
    assert np.allclose(out.data, ref)
    _check(lambda: ad.sum_(ad.logsumexp(a)), [a])


def test_masked_fill_blocks_gradient():
    a = Parameter(np.ones((2, 3)))
    mask = np.array([[True, False, False], [False, False, True]])
    out = ad.masked_fill(a, mask, -7.0)
    ad.sum_(out).backward()
    assert np.allclose(a.grad, (~mask).astype(float))
    assert out.data[0, 0] == -7.0


def test_masked_max_time_values_and_routing():
    a = Parameter(np.array([[[1.0, 5.0], [9.0, 2.0], [4.0, 7.0]]]))
    mask = np.array([[True, False, True]])  # middle step invalid
    out = ad.masked_max_time(a, mask)
    assert np.allclose(out.data, [[4.0, 7.0]])
    ad.sum_(out).backward()
    expected = np.zeros_like(a.data)
    expected[0, 2, 0] = 1.0
    expected[0, 2, 1] = 1.0
    assert np.allclose(a.grad, expected)


def test_layer_norm_statistics_and_grad():
    rng = _rng(10)
    x = Parameter(rng.standard_normal((4, 7)))
    g = Parameter(rng.uniform(0.5, 1.5, 7))
    b = Parameter(rng.standard_normal(7))
    out = ad.layer_norm(x, g, b)
    centered = (out.data - b.data) / g.data
    assert np.allclose(centered.mean(axis=-1), 0.0, atol=1e-9)
    _check(lambda: ad.sum_(ad.square(ad.layer_norm(x, g, b))), [x, g, b])


def _conv_brute(x, w, b):
    bo, t, cin = x.shape
    k, _, cout = w.shape
    pad = (k - 1) // 2
    y = np.zeros((bo, t, cout))
    for bb in range(bo):
        for tt in range(t):
            for co in range(cout):
                acc = b[co]
                for kk in range(k):
                    src = tt + kk - pad
                    if 0 <= src < t:
                        acc += x[bb, src] @ w[kk, :, co]
                y[bb, tt, co] = acc
    return y


def test_conv1d_matches_brute_force():
    rng = _rng(11)
    x = rng.standard_normal((2, 4, 3))
    w = rng.standard_normal((3, 3, 5))
    b = rng.standard_normal(5)
    out = ad.conv1d(Tensor(x), Tensor(w), Tensor(b))
    assert np.allclose(out.data, _conv_brute(x, w, b), atol=1e-10)


def test_conv1d_gradients():
    rng = _rng(12)
    x = Parameter(rng.standard_normal((2, 5, 3)))
    w = Parameter(rng.standard_normal((3, 3, 4)))
    b = Parameter(rng.standard_normal(4))
    _check(lambda: ad.sum_(ad.square(ad.conv1d(x, w, b))), [x, w, b], n=16)


def test_conv1d_rejects_bad_kernels():
    x = Tensor(np.zeros((1, 3, 2)))
    with pytest.raises(ValueError, match="odd"):
        ad.conv1d(x, Tensor(np.zeros((2, 2, 2))), Tensor(np.zeros(2)))
    with pytest.raises(ValueError, match="exceeds"):
        ad.conv1d(x, Tensor(np.zeros((9, 2, 2))), Tensor(np.zeros(2)))


def _triplet_brute(cos, pos, neg, margin):
    n = cos.shape[0]
    total, count = 0.0, 0
    for i in range(n):
        for j in range(n):
            for k in range(n):
                if pos[i, j] and neg[i, k]:
                    count += 1
                    total += max(0.0, margin - cos[i, j] + cos[i, k])
    return total, count


def test_triplet_hinge_matches_brute_force():
    rng = _rng(13)
    n = 9
    cos = rng.uniform(-1, 1, (n, n))
    pos = rng.random((n, n)) < 0.4
    neg = rng.random((n, n)) < 0.4
    total, count = kernels.triplet_hinge_forward(cos, pos, neg, 0.3)
    ref_total, ref_count = _triplet_brute(cos, pos, neg, 0.3)
    assert count == ref_count
    assert np.isclose(total, ref_total)


def test_triplet_hinge_gradient():
    rng = _rng(14)
    n = 6
    cosd = rng.uniform(-0.9, 0.9, (n, n))
    pos = rng.random((n, n)) < 0.5
    neg = rng.random((n, n)) < 0.5
    cos = Parameter(cosd)

    def loss():
        out, _ = ad.triplet_hinge_mean(cos, pos, neg, 0.25)
        return out

    _check(loss, [cos], n=16)


def test_triplet_hinge_empty_set():
    cos = Parameter(np.zeros((3, 3)))
    pos = np.zeros((3, 3), dtype=bool)
    neg = np.ones((3, 3), dtype=bool)
    out, count = ad.triplet_hinge_mean(cos, pos, neg, 0.1)
    assert count == 0
    assert out.data == 0.0


def test_no_grad_blocks_graph():
    a = Parameter(np.ones(3))
    with ad.no_grad():
        out = ad.sum_(ad.square(a))
    assert out._parents == ()
    assert not out.requires_grad


def test_masked_mean_time():
    x = Tensor(np.array([[[1.0], [3.0], [100.0]]]))
    mask = np.array([[True, True, False]])
    out = ad.masked_mean_time(x, mask)
    assert np.allclose(out.data, [[2.0]])


def test_cosine_rows():
    a = Tensor(np.array([[1.0, 0.0], [1.0, 1.0]]))
    b = Tensor(np.array([[0.0, 1.0], [1.0, 1.0]]))
    out = ad.cosine_rows(a, b)
    assert np.allclose(out.data, [0.0, 1.0], atol=1e-9)


def test_grad_accumulates_across_uses():
    a = Parameter(np.array([2.0]))
    out = ad.mul(a, a)  # a used twice
    out.backward(np.array([1.0]))
    assert np.allclose(a.grad, [4.0])


def test_numerical_grad_helper():
    p = Parameter(np.array([1.5]))
    g = numerical_grad(lambda: ad.square(p), p, (0,))
    assert np.isclose(g, 3.0, atol=1e-6)
