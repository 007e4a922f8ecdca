import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustfusion import tensor as T
from robustfusion.tensor import ParamState, Tensor

from gradcheck import numeric_grad, rel_error, RTOL


def _weighted_sum_check(build, arrays, rng):
    """Gradient of sum(out * w) for a fixed random w, analytic vs finite differences."""
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(*leaves)
    w = rng.normal(size=out.shape)
    out.backward(w)

    def f():
        return float((build(*[Tensor(a) for a in arrays]).data * w).sum())

    for leaf, arr in zip(leaves, arrays):
        num = numeric_grad(f, arr)
        assert rel_error(leaf.grad, num) < RTOL


# --- conv2d -------------------------------------------------------------------


def test_conv_pointwise_scale():
    out = T.conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.full((1, 1, 1, 1), 2.0)), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, np.full((1, 3, 3), 2.0))


def test_conv_identity_kernel(rng):
    x = rng.normal(size=(1, 6, 7))
    k = np.zeros((1, 1, 5, 5))
    k[0, 0, 2, 2] = 1.0
    out = T.conv2d(Tensor(x), Tensor(k), padding="same")
    np.testing.assert_array_equal(out.data, x)


def test_conv_matches_direct_loop(rng):
    x = rng.normal(size=(2, 5, 6))
    k = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    out = T.conv2d(Tensor(x), Tensor(k), Tensor(b), stride=2, dilation=1, padding="valid").data
    ref = np.zeros_like(out)
    for o in range(3):
        for i in range(out.shape[1]):
            for j in range(out.shape[2]):
                ref[o, i, j] = (x[:, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3] * k[o]).sum() + b[o]
    np.testing.assert_allclose(out, ref, rtol=1e-12)


def test_conv_gradients(rng):
    x = rng.normal(size=(2, 4, 4))
    k = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    _weighted_sum_check(lambda a, w, c: T.conv2d(a, w, c), [x, k, b], rng)


@pytest.mark.parametrize("stride,dilation", [(2, 1), (1, 2), (2, 2)])
def test_conv_gradients_strided_dilated(rng, stride, dilation):
    x = rng.normal(size=(2, 6, 7))
    k = rng.normal(size=(2, 2, 3, 3))
    b = rng.normal(size=2)
    _weighted_sum_check(lambda a, w, c: T.conv2d(a, w, c, stride=stride, dilation=dilation), [x, k, b], rng)


def test_conv_channel_mismatch():
    with pytest.raises(T.ShapeError):
        T.conv2d(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


@settings(max_examples=30, deadline=None)
@given(
    c=st.integers(1, 3),
    h=st.integers(1, 9),
    w=st.integers(1, 9),
    k=st.sampled_from([1, 3, 5]),
)
def test_same_padding_preserves_extent(c, h, w, k):
    out = T.conv2d(Tensor(np.ones((c, h, w))), Tensor(np.ones((2, c, k, k))))
    assert out.shape == (2, h, w)


# --- elementwise and structural ops -------------------------------------------


def test_relu_values_and_grad():
    x = Tensor(np.array([[[-1.0, 0.0, 2.0]]]), requires_grad=True)
    out = T.relu(x)
    np.testing.assert_array_equal(out.data, [[[0.0, 0.0, 2.0]]])
    out.backward(np.full((1, 1, 3), 5.0))
    # subgradient at exactly 0 is 0
    np.testing.assert_array_equal(x.grad, [[[0.0, 0.0, 5.0]]])


def test_relu_grad_matches_fd_away_from_kink(rng):
    x = rng.normal(size=(2, 3, 3))
    x[np.abs(x) < 1e-2] = 0.5
    _weighted_sum_check(T.relu, [x], rng)


def test_relu_positive_unchanged(rng):
    x = rng.uniform(0.1, 2.0, size=(2, 3, 3))
    np.testing.assert_array_equal(T.relu(Tensor(x)).data, x)


def test_add_zero_identity(rng):
    x = rng.normal(size=(2, 3, 3))
    np.testing.assert_array_equal(T.add(Tensor(x), Tensor(np.zeros_like(x))).data, x)
    _weighted_sum_check(T.add, [x, rng.normal(size=x.shape)], rng)


def test_concat_order_and_backward_split(rng):
    cam, dep = rng.normal(size=(3, 2, 2)), rng.normal(size=(1, 2, 2))
    a, b = Tensor(cam, requires_grad=True), Tensor(dep, requires_grad=True)
    out = T.concat_channels(a, b)
    assert out.shape == (4, 2, 2)
    np.testing.assert_array_equal(out.data[:3], cam)
    np.testing.assert_array_equal(out.data[3:], dep)
    g = rng.normal(size=(4, 2, 2))
    out.backward(g)
    np.testing.assert_array_equal(a.grad, g[:3])
    np.testing.assert_array_equal(b.grad, g[3:])


def test_concat_spatial_mismatch():
    with pytest.raises(T.ShapeError):
        T.concat_channels(Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((1, 2, 3))))


def test_bilinear_identity_and_midpoint(rng):
    x = rng.normal(size=(2, 3, 4))
    np.testing.assert_array_equal(T.bilinear_resize(Tensor(x), 3, 4).data, x)
    out = T.bilinear_resize(Tensor(np.array([[[0.0, 2.0]]])), 1, 3)
    np.testing.assert_allclose(out.data, [[[0.0, 1.0, 2.0]]])


def test_bilinear_gradient(rng):
    _weighted_sum_check(lambda a: T.bilinear_resize(a, 5, 5), [rng.normal(size=(2, 3, 3))], rng)


def test_avg_downsample(rng):
    out = T.avg_downsample(Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]])), 2)
    np.testing.assert_array_equal(out.data, [[[2.5]]])
    x = rng.normal(size=(1, 4, 4))
    np.testing.assert_array_equal(T.avg_downsample(Tensor(x), 1).data, x)
    _weighted_sum_check(lambda a: T.avg_downsample(a, 2), [x], rng)
    with pytest.raises(T.ShapeError):
        T.avg_downsample(Tensor(np.zeros((1, 3, 4))), 2)


# --- loss ---------------------------------------------------------------------


def test_xent_uniform_logits():
    loss, _ = T.softmax_cross_entropy(np.zeros((4, 2, 3)), np.array([[0, 1, 2], [3, 0, 1]]))
    assert loss == pytest.approx(np.log(4), abs=1e-12)


def test_xent_margin_goes_to_zero():
    labels = np.array([[1, 0]])
    losses = []
    for margin in (1.0, 5.0, 20.0, 50.0):
        logits = np.zeros((3, 1, 2))
        logits[1, 0, 0] = margin
        logits[0, 0, 1] = margin
        losses.append(T.softmax_cross_entropy(logits, labels)[0])
    assert all(a > b for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 1e-20


def test_xent_gradient_fd(rng):
    logits = rng.normal(size=(3, 2, 2))
    labels = np.array([[0, 2], [1, 255]])
    _, grad = T.softmax_cross_entropy(logits, labels)
    num = numeric_grad(lambda: T.softmax_cross_entropy(logits, labels)[0], logits)
    assert rel_error(grad, num) < RTOL
    np.testing.assert_allclose(grad.sum(axis=0)[labels != 255], 0.0, atol=1e-15)
    np.testing.assert_array_equal(grad[:, 1, 1], 0.0)


def test_xent_large_logits_stable():
    logits = np.array([[[1000.0]], [[-1000.0]]])
    loss, grad = T.softmax_cross_entropy(logits, np.array([[1]]))
    assert np.isfinite(loss) and np.all(np.isfinite(grad))
    assert loss == pytest.approx(2000.0)


def test_xent_all_ignored():
    with pytest.raises(ValueError):
        T.softmax_cross_entropy(np.zeros((2, 1, 2)), np.array([[255, 255]]))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.integers(2, 6))
def test_xent_grad_sums_to_zero(seed, c):
    r = np.random.default_rng(seed)
    logits = r.normal(scale=3.0, size=(c, 3, 4))
    labels = r.integers(0, c, size=(3, 4))
    _, grad = T.softmax_cross_entropy(logits, labels)
    np.testing.assert_allclose(grad.sum(axis=0), 0.0, atol=1e-12)


# --- optimiser ----------------------------------------------------------------


def _param(value, grad):
    p = ParamState("w", Tensor(np.array(value, dtype=float)))
    p.value.grad = np.array(grad, dtype=float)
    return p


def test_sgd_plain_step():
    p = _param([1.0, 2.0], [0.5, -1.0])
    T.sgd_step([p], lr=0.1, momentum=0.0, weight_decay=0.0)
    np.testing.assert_allclose(p.value.data, [0.95, 2.1])
    assert p.value.grad is None


def test_sgd_two_momentum_steps():
    g, lr = 0.7, 0.01
    p = _param([3.0], [g])
    T.sgd_step([p], lr=lr, momentum=0.9, weight_decay=0.0)
    p.value.grad = np.array([g])
    T.sgd_step([p], lr=lr, momentum=0.9, weight_decay=0.0)
    assert p.value.data[0] == pytest.approx(3.0 - lr * (g + 1.9 * g), rel=1e-14)


def test_sgd_weight_decay_and_defaults():
    import inspect

    sig = inspect.signature(T.sgd_step)
    assert sig.parameters["momentum"].default == 0.9
    assert sig.parameters["weight_decay"].default == 0.0001
    p = _param([2.0], [0.0])
    T.sgd_step([p], lr=1.0, momentum=0.0, weight_decay=0.1)
    assert p.value.data[0] == pytest.approx(1.8)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000))
def test_sgd_zero_lr_is_noop(seed):
    r = np.random.default_rng(seed)
    v = r.normal(size=5)
    p = _param(v.copy(), r.normal(size=5))
    T.sgd_step([p], lr=0.0)
    np.testing.assert_array_equal(p.value.data, v)


def test_poly_lr():
    assert T.poly_lr(0.001, 0, 100) == 0.001
    assert T.poly_lr(0.001, 100, 100) == 0.0
    assert T.poly_lr(0.001, 50, 100, 0.9) == pytest.approx(0.001 * 0.5**0.9)
    with pytest.raises(ValueError):
        T.poly_lr(0.001, 0, 0)


@settings(max_examples=30, deadline=None)
@given(max_iter=st.integers(1, 500), power=st.floats(0.05, 3.0))
def test_poly_lr_non_increasing(max_iter, power):
    lrs = [T.poly_lr(0.01, i, max_iter, power) for i in range(max_iter + 1)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_backward_accumulates_through_shared_nodes(rng):
    x = Tensor(rng.normal(size=(1, 2, 2)), requires_grad=True)
    y = T.add(x, x)
    y.backward(np.ones((1, 2, 2)))
    np.testing.assert_array_equal(x.grad, np.full((1, 2, 2), 2.0))
