"""Autodiff engine checks: op semantics, gradients vs finite differences,
graph lifecycle rules."""

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geomtl import tensor as T
from geomtl.tensor import (
    GraphError,
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    concat_channels,
    conv2d,
    maxpool2d,
    no_grad,
    relu,
    softmax_channels,
    softplus,
    upsample_nearest,
)

from gradcheck import check_grads, rel_err


def rng(seed=0):
    return np.random.default_rng(seed)


# ---- construction and validation ----------------------------------------


def test_leaf_defaults_float64():
    t = Tensor([1.0, 2.0])
    assert t.dtype == np.float64
    assert not t.requires_grad
    assert t.grad is None


def test_float32_preserved():
    t = Tensor(np.ones((2, 2), dtype=np.float32))
    assert t.dtype == np.float32


def test_int_input_promoted():
    t = Tensor([1, 2, 3])
    assert t.dtype == np.float64


def test_nan_rejected():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])


def test_inf_rejected():
    with pytest.raises(NonFiniteError):
        Tensor([np.inf])


# ---- arithmetic forward values -------------------------------------------


def test_add_mul_scalars():
    a = Tensor(3.0)
    b = Tensor(4.0)
    assert (a + b).item() == 7.0
    assert (a * b).item() == 12.0
    assert (a - b).item() == -1.0
    assert (a / b).item() == 0.75
    assert (2.0 + a).item() == 5.0
    assert (2.0 * a).item() == 6.0
    assert (2.0 - a).item() == -1.0
    assert (-a).item() == -3.0


def test_shape_mismatch_raises():
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.ones((3, 2)))
    with pytest.raises(ShapeError):
        a + b
    with pytest.raises(ShapeError):
        a * b


def test_dtype_mismatch_raises():
    a = Tensor(np.ones(3, dtype=np.float32))
    b = Tensor(np.ones(3, dtype=np.float64))
    with pytest.raises(ShapeError):
        a + b


def test_scalar_tensor_broadcast():
    a = Tensor(np.arange(4.0))
    s = Tensor(2.0)
    npt.assert_array_equal((a * s).data, np.arange(4.0) * 2)
    npt.assert_array_equal((a + s).data, np.arange(4.0) + 2)


def test_log_rejects_nonpositive():
    with pytest.raises(ValueError):
        Tensor([0.0, 1.0]).log()
    with pytest.raises(ValueError):
        Tensor([-1.0]).log()


def test_exp_log_roundtrip():
    x = rng(1).normal(size=7)
    t = Tensor(x).exp().log()
    npt.assert_allclose(t.data, x, rtol=1e-12)


def test_clamp_min_values():
    t = Tensor([-1.0, 0.5, 2.0]).clamp_min(1.0)
    npt.assert_array_equal(t.data, [1.0, 1.0, 2.0])


def test_sum_mean():
    x = rng(2).normal(size=(3, 4))
    assert Tensor(x).sum().item() == pytest.approx(x.sum(), rel=1e-14)
    assert Tensor(x).mean().item() == pytest.approx(x.mean(), rel=1e-14)


# ---- gradients of scalar algebra ------------------------------------------


def test_grad_add_mul_chain():
    check_grads(lambda a, b: ((a * b + a) * b).sum(),
                [rng(3).normal(size=(2, 3)), rng(4).normal(size=(2, 3))])


def test_grad_division():
    check_grads(lambda a, b: (a / b).sum(),
                [rng(5).normal(size=5), rng(6).normal(size=5) + 3.0])


def test_grad_log_exp():
    check_grads(lambda a: (a.exp().log() * a).mean(),
                [rng(7).normal(size=6)])


def test_grad_scalar_broadcast():
    check_grads(lambda a, s: (a * s + s).sum(),
                [rng(8).normal(size=(2, 2)), np.asarray(1.5)])


def test_grad_clamp_min_blocks_floor():
    t = Tensor(np.array([-2.0, 3.0]), requires_grad=True)
    t.clamp_min(0.0).sum().backward()
    npt.assert_array_equal(t.grad, [0.0, 1.0])


def test_shared_subexpression_accumulates():
    # y = x*x + x*x reuses the same product node twice
    def build(a):
        p = a * a
        return (p + p).sum()

    check_grads(build, [rng(9).normal(size=4)])


def test_diamond_graph_grad():
    # two paths from x to the root must both contribute
    x = Tensor(2.0, requires_grad=True)
    y = x * 3.0
    z = x * x
    (y + z).backward()
    assert x.grad == pytest.approx(3.0 + 2 * 2.0)


def test_mean_grad_uniform():
    t = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    t.mean().backward()
    npt.assert_allclose(t.grad, np.full((2, 3), 1.0 / 6.0))


# ---- graph lifecycle ------------------------------------------------------


def test_backward_requires_scalar():
    t = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(GraphError):
        (t * 2.0).backward()


def test_backward_twice_raises():
    t = Tensor(2.0, requires_grad=True)
    out = t * t
    out.backward()
    with pytest.raises(GraphError):
        out.backward()


def test_backward_detached_root_raises():
    with pytest.raises(GraphError):
        Tensor(1.0, requires_grad=True).backward()
    with pytest.raises(GraphError):
        (Tensor(1.0) * Tensor(2.0)).backward()


def test_no_grad_prunes_graph():
    t = Tensor(2.0, requires_grad=True)
    with no_grad():
        out = t * t
    assert not out.requires_grad
    assert out._backward is None
    assert T.grad_enabled()


def test_grad_accumulates_across_backwards():
    t = Tensor(3.0, requires_grad=True)
    (t * 2.0).backward()
    (t * 5.0).backward()
    assert t.grad == pytest.approx(7.0)
    t.zero_grad()
    assert t.grad is None


def test_intermediate_grads_freed():
    t = Tensor(2.0, requires_grad=True)
    mid = t * 3.0
    out = mid * 4.0
    out.backward()
    assert mid.grad is None and mid._backward is None
    assert t.grad == pytest.approx(12.0)


# ---- conv2d ---------------------------------------------------------------


def test_conv2d_identity_kernel():
    x = rng(10).normal(size=(2, 3, 5, 7))
    k = np.zeros((3, 3, 3, 3))
    for c in range(3):
        k[c, c, 1, 1] = 1.0
    out = conv2d(Tensor(x), Tensor(k), Tensor(np.zeros(3)))
    npt.assert_allclose(out.data, x, atol=1e-14)


def test_conv2d_all_zero_kernel_bias_only():
    x = rng(11).normal(size=(1, 2, 4, 4))
    out = conv2d(Tensor(x), Tensor(np.zeros((5, 2, 3, 3))), Tensor(np.arange(5.0)))
    for c in range(5):
        npt.assert_allclose(out.data[:, c], c, atol=1e-14)


def test_conv2d_same_shape_and_stride2():
    x = Tensor(rng(12).normal(size=(2, 3, 8, 6)))
    k = Tensor(rng(13).normal(size=(4, 3, 3, 3)))
    b = Tensor(np.zeros(4))
    assert conv2d(x, k, b).shape == (2, 4, 8, 6)
    assert conv2d(x, k, b, stride=2).shape == (2, 4, 4, 3)


def test_conv2d_valid_shape():
    x = Tensor(rng(14).normal(size=(1, 2, 6, 6)))
    k = Tensor(rng(15).normal(size=(3, 2, 3, 3)))
    out = conv2d(x, k, Tensor(np.zeros(3)), padding="valid")
    assert out.shape == (1, 3, 4, 4)


def test_conv2d_matches_naive_loop():
    x = rng(16).normal(size=(2, 3, 5, 6))
    k = rng(17).normal(size=(4, 3, 3, 3))
    b = rng(18).normal(size=4)
    out = conv2d(Tensor(x), Tensor(k), Tensor(b)).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for n in range(2):
        for co in range(4):
            for i in range(5):
                for j in range(6):
                    ref[n, co, i, j] = (
                        xp[n, :, i:i + 3, j:j + 3] * k[co]).sum() + b[co]
    npt.assert_allclose(out, ref, atol=1e-12)


def test_conv2d_validation_errors():
    x = Tensor(np.zeros((1, 3, 4, 4)))
    k = Tensor(np.zeros((2, 3, 3, 3)))
    b = Tensor(np.zeros(2))
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.zeros((3, 4, 4))), k, b)
    with pytest.raises(ShapeError):
        conv2d(x, Tensor(np.zeros((2, 4, 3, 3))), b)
    with pytest.raises(ShapeError):
        conv2d(x, k, Tensor(np.zeros(3)))
    with pytest.raises(ShapeError):
        conv2d(x, Tensor(np.zeros((2, 3, 2, 2))), b, padding="same")
    with pytest.raises(ValueError):
        conv2d(x, k, b, padding="reflect")
    with pytest.raises(ValueError):
        conv2d(x, k, b, stride=3)


@pytest.mark.parametrize("stride,padding", [(1, "same"), (2, "same"),
                                            (1, "valid"), (2, "valid")])
def test_conv2d_grads(stride, padding):
    x = rng(20 + stride).normal(size=(2, 2, 6, 6))
    k = rng(30 + stride).normal(size=(3, 2, 3, 3)) * 0.5
    b = rng(40 + stride).normal(size=3) * 0.1

    def build(xt, kt, bt):
        return conv2d(xt, kt, bt, stride=stride, padding=padding).mean()

    check_grads(build, [x, k, b])


def test_conv2d_grad_odd_input_stride2():
    # stride 2 over an odd grid leaves a trailing row/col unread
    x = rng(50).normal(size=(1, 2, 5, 7))
    k = rng(51).normal(size=(2, 2, 3, 3))
    b = np.zeros(2)
    check_grads(lambda xt, kt, bt: conv2d(xt, kt, bt, stride=2).sum(), [x, k, b])


def test_conv2d_1x1_grads():
    x = rng(52).normal(size=(2, 4, 3, 3))
    k = rng(53).normal(size=(2, 4, 1, 1))
    b = rng(54).normal(size=2)
    check_grads(lambda xt, kt, bt: conv2d(xt, kt, bt).mean(), [x, k, b])


# ---- relu / softplus -------------------------------------------------------


def test_relu_values_and_grad():
    t = Tensor(np.array([-2.0, 0.0, 3.0]), requires_grad=True)
    out = relu(t)
    npt.assert_array_equal(out.data, [0.0, 0.0, 3.0])
    out.sum().backward()
    npt.assert_array_equal(t.grad, [0.0, 0.0, 1.0])


def test_relu_grad_fd():
    # keep values away from the kink so FD is valid
    x = rng(55).normal(size=(2, 3)) + np.sign(rng(56).normal(size=(2, 3))) * 0.5
    x[np.abs(x) < 0.1] = 0.5
    check_grads(lambda t: relu(t).sum(), [x])


def test_softplus_positive_and_stable():
    big = Tensor(np.array([-800.0, 0.0, 800.0]))
    out = softplus(big)
    assert np.all(np.isfinite(out.data))
    assert np.all(out.data >= 0)
    assert out.data[1] == pytest.approx(np.log(2.0), rel=1e-12)
    assert out.data[2] == pytest.approx(800.0, rel=1e-12)


def test_softplus_grad_fd():
    check_grads(lambda t: softplus(t).sum(), [rng(57).normal(size=8) * 3.0])


# ---- maxpool ---------------------------------------------------------------


def test_maxpool_matches_window_scan():
    x = rng(58).normal(size=(2, 3, 6, 8))
    out = maxpool2d(Tensor(x)).data
    for n in range(2):
        for c in range(3):
            for i in range(3):
                for j in range(4):
                    assert out[n, c, i, j] == x[n, c, 2 * i:2 * i + 2,
                                                2 * j:2 * j + 2].max()


def test_maxpool_odd_dims_rejected():
    with pytest.raises(ShapeError):
        maxpool2d(Tensor(np.zeros((1, 1, 5, 4))))
    with pytest.raises(ShapeError):
        maxpool2d(Tensor(np.zeros((1, 1, 4, 5))))


def test_maxpool_tie_routes_to_first():
    x = np.zeros((1, 1, 2, 2))
    t = Tensor(x, requires_grad=True)
    maxpool2d(t).sum().backward()
    npt.assert_array_equal(t.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])


def test_maxpool_tie_first_in_row_major():
    x = np.array([[[[0.0, 5.0], [5.0, 0.0]]]])
    t = Tensor(x, requires_grad=True)
    maxpool2d(t).sum().backward()
    npt.assert_array_equal(t.grad[0, 0], [[0.0, 1.0], [0.0, 0.0]])


def test_maxpool_grad_fd():
    # well-separated values keep the argmax stable under FD probing
    x = rng(59).permutation(np.arange(48.0)).reshape(1, 3, 4, 4)
    check_grads(lambda t: maxpool2d(t).mean(), [x])


# ---- upsample --------------------------------------------------------------


def test_upsample_values():
    x = np.arange(4.0).reshape(1, 1, 2, 2)
    out = upsample_nearest(Tensor(x)).data
    npt.assert_array_equal(out[0, 0], [[0, 0, 1, 1], [0, 0, 1, 1],
                                       [2, 2, 3, 3], [2, 2, 3, 3]])


def test_upsample_then_pool_is_identity():
    x = rng(60).normal(size=(2, 3, 4, 4))
    t = Tensor(x)
    back = maxpool2d(upsample_nearest(t))
    npt.assert_allclose(back.data, x, atol=1e-14)


def test_upsample_grad_fd():
    check_grads(lambda t: upsample_nearest(t, 2).mean(),
                [rng(61).normal(size=(1, 2, 3, 3))])


def test_upsample_factor_validation():
    with pytest.raises(ValueError):
        upsample_nearest(Tensor(np.zeros((1, 1, 2, 2))), factor=0)


# ---- concat / add ----------------------------------------------------------


def test_concat_preserves_order_and_splits_grad():
    a = rng(62).normal(size=(2, 2, 3, 3))
    b = rng(63).normal(size=(2, 5, 3, 3))
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    out = concat_channels([ta, tb])
    npt.assert_array_equal(out.data[:, :2], a)
    npt.assert_array_equal(out.data[:, 2:], b)
    (out * out).sum().backward()
    npt.assert_allclose(ta.grad, 2 * a)
    npt.assert_allclose(tb.grad, 2 * b)


def test_concat_shape_validation():
    with pytest.raises(ShapeError):
        concat_channels([Tensor(np.zeros((1, 2, 3, 3))),
                         Tensor(np.zeros((1, 2, 4, 3)))])
    with pytest.raises(ShapeError):
        concat_channels([Tensor(np.zeros((1, 2, 3, 3))),
                         Tensor(np.zeros((2, 2, 3, 3)))])
    with pytest.raises(ValueError):
        concat_channels([])


def test_add_left_fold_and_grads():
    xs = [rng(64 + i).normal(size=(2, 3)) for i in range(3)]
    ts = [Tensor(x, requires_grad=True) for x in xs]
    out = add(ts)
    npt.assert_allclose(out.data, xs[0] + xs[1] + xs[2])
    (out * out).sum().backward()
    for t in ts:
        npt.assert_allclose(t.grad, 2 * out.data)


def test_add_shape_validation():
    with pytest.raises(ShapeError):
        add([Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2)))])
    with pytest.raises(ValueError):
        add([])


def test_concat_add_grads_fd():
    a = rng(70).normal(size=(1, 2, 2, 2))
    b = rng(71).normal(size=(1, 3, 2, 2))
    c = rng(72).normal(size=(1, 2, 2, 2))

    def build(ta, tb, tc):
        cat = concat_channels([ta, tb])
        s = add([ta, tc])
        return (cat.sum() * s.mean())

    check_grads(build, [a, b, c])


# ---- softmax ----------------------------------------------------------------


def test_softmax_sums_to_one():
    x = rng(73).normal(size=(2, 5, 3, 4)) * 10
    p = softmax_channels(Tensor(x)).data
    npt.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(p > 0)


def test_softmax_shift_invariant():
    x = rng(74).normal(size=(1, 4, 2, 2))
    p1 = softmax_channels(Tensor(x)).data
    p2 = softmax_channels(Tensor(x + 300.0)).data
    npt.assert_allclose(p1, p2, atol=1e-12)


def test_softmax_extreme_logits_stable():
    x = np.zeros((1, 3, 1, 1))
    x[0, 0] = 1000.0
    p = softmax_channels(Tensor(x)).data
    assert np.all(np.isfinite(p))
    assert p[0, 0, 0, 0] == pytest.approx(1.0)


def test_softmax_grad_fd():
    x = rng(75).normal(size=(2, 4, 2, 3))
    w = rng(76).normal(size=(2, 4, 2, 3))
    check_grads(lambda t: (softmax_channels(t) * Tensor(w)).sum(), [x])


# ---- composite network-shaped graph -----------------------------------------


def test_composite_conv_pool_upsample_grads():
    x = rng(77).normal(size=(1, 2, 8, 8)) * 0.5
    k1 = rng(78).normal(size=(3, 2, 3, 3)) * 0.4
    b1 = np.zeros(3)
    k2 = rng(79).normal(size=(2, 3, 1, 1)) * 0.4
    b2 = np.zeros(2)

    def build(xt, k1t, b1t, k2t, b2t):
        h = relu(conv2d(xt, k1t, b1t))
        h = maxpool2d(h)
        h = conv2d(h, k2t, b2t)
        h = upsample_nearest(h)
        return softmax_channels(h).log().mean() * -1.0

    check_grads(build, [x, k1, b1, k2, b2], tol=2e-5)


# ---- property tests ----------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=16),
       st.floats(-1e3, 1e3))
def test_linearity_of_sum(xs, c):
    x = np.asarray(xs)
    lhs = (Tensor(x) * c).sum().item()
    rhs = Tensor(x).sum().item() * c
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(1, 4))
def test_softmax_sums_property(n, c, h, w):
    x = np.random.default_rng(n * 101 + c * 17 + h * 3 + w).normal(size=(n, c, h, w))
    p = softmax_channels(Tensor(x)).data
    npt.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_upsample_pool_roundtrip_property(seed):
    x = np.random.default_rng(seed).normal(size=(1, 2, 3, 5))
    npt.assert_allclose(maxpool2d(upsample_nearest(Tensor(x))).data, x, atol=0)
