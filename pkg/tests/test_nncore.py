import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import naive_conv
from wavefuse import _kernels_py, kernels
from wavefuse.nncore import (
    Activation,
    Conv2d,
    DivergenceError,
    GlobalPool,
    Linear,
    OptimState,
    Param,
    SoftmaxChannels,
    activation,
    adamw_step,
    finite_diff_check,
    global_pool,
    make_rng,
    softmax_channels,
)


def test_conv_identity_kernel(rng):
    conv = Conv2d(1, 1, 1, rng=rng)
    conv.weight.value[:] = 1.0
    x = rng.standard_normal((2, 1, 5, 5))
    np.testing.assert_array_equal(conv.forward(x), x)


def test_conv_impulse_response(rng):
    conv = Conv2d(1, 1, 3, rng=rng)
    x = np.zeros((1, 1, 7, 7))
    x[0, 0, 3, 3] = 1.0
    out = conv.forward(x)[0, 0]
    # cross-correlation: the impulse response is the kernel flipped
    np.testing.assert_allclose(out[2:5, 2:5], conv.weight.value[0, 0, ::-1, ::-1], atol=0)


def test_conv_matches_naive_oracle(rng):
    conv = Conv2d(2, 3, 3, rng=rng)
    conv.bias.value[:] = rng.standard_normal(3)
    x = rng.standard_normal((2, 4, 4))
    expected = naive_conv(x, conv.weight.value, conv.bias.value)
    np.testing.assert_allclose(conv.forward(x[None])[0], expected, atol=1e-12)


def test_conv_stride2_matches_subsampled_same_conv(rng):
    conv = Conv2d(3, 4, 3, stride=2, rng=rng)
    x = rng.standard_normal((1, 3, 8, 8))
    full = naive_conv(x[0], conv.weight.value, conv.bias.value)
    np.testing.assert_allclose(conv.forward(x)[0], full[:, ::2, ::2], atol=1e-12)


def test_conv_rejects_even_kernel_and_bad_channels(rng):
    with pytest.raises(ValueError):
        Conv2d(1, 1, 2, rng=rng)
    with pytest.raises(ValueError):
        Conv2d(2, 1, 3, rng=rng).forward(np.zeros((1, 3, 4, 4)))


@pytest.mark.parametrize("shape,k,stride", [((2, 3, 6, 5), 3, 1), ((1, 2, 8, 8), 3, 2),
                                            ((3, 2, 9, 9), 7, 1), ((2, 4, 4, 4), 1, 1)])
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_backends_bit_identical(shape, k, stride, dtype, rng):
    if kernels.BACKEND != "compiled":
        pytest.skip("compiled kernels not built")
    from wavefuse import _kernels

    x = rng.standard_normal(shape).astype(dtype)
    a = _kernels.im2col(x, k, stride, k // 2)
    b = _kernels_py.im2col(x, k, stride, k // 2)
    assert a.dtype == b.dtype == dtype
    np.testing.assert_array_equal(a, b)
    cols = rng.standard_normal(a.shape).astype(dtype)
    n, c, h, w = shape
    np.testing.assert_array_equal(_kernels.col2im(cols, n, c, h, w, k, stride, k // 2),
                                  _kernels_py.col2im(cols, n, c, h, w, k, stride, k // 2))


def test_col2im_is_adjoint_of_im2col(rng):
    x = rng.standard_normal((2, 3, 5, 6))
    cols = kernels.im2col(x, 3, 1, 1)
    g = rng.standard_normal(cols.shape)
    lhs = np.sum(cols * g)
    rhs = np.sum(x * kernels.col2im(g, x.shape, 3, 1, 1))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_activation_values():
    assert activation(np.array([0.0]), "sigmoid")[0] == 0.5
    np.testing.assert_array_equal(activation(np.array([-3.0, 2.0]), "relu"), [0.0, 2.0])
    np.testing.assert_allclose(activation(np.array([-1.0, 1.0]), "leaky-relu"), [-0.2, 1.0])
    act = Activation("sigmoid")
    act.forward(np.array([0.0]))
    assert act.backward(np.array([2.0]))[0] == 0.25 * 2.0
    with pytest.raises(ValueError):
        Activation("tanh")


def test_sigmoid_no_overflow():
    y = activation(np.array([-1000.0, 1000.0]), "sigmoid")
    assert np.all(np.isfinite(y))
    np.testing.assert_array_equal(y, [0.0, 1.0])


def test_global_pool():
    x = np.full((1, 2, 3, 3), 0.7)
    np.testing.assert_array_equal(global_pool(x, "avg"), np.full((1, 2, 1, 1), 0.7))
    np.testing.assert_array_equal(global_pool(x, "max"), np.full((1, 2, 1, 1), 0.7))
    assert global_pool(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]), "avg").item() == 2.5


def test_max_pool_routes_to_first_argmax():
    pool = GlobalPool("max")
    x = np.array([[[[1.0, 5.0], [5.0, 2.0]]]])
    pool.forward(x)
    g = pool.backward(np.array([[[[3.0]]]]))
    np.testing.assert_array_equal(g, [[[[0.0, 3.0], [0.0, 0.0]]]])


def test_linear(rng):
    lin = Linear(3, 3, rng=rng)
    lin.weight.value[:] = np.eye(3)
    x = rng.standard_normal(3)
    np.testing.assert_array_equal(lin.forward(x), x)
    lin = Linear(3, 2, rng=rng)
    lin.weight.value[:] = 0
    lin.bias.value[:] = [1.5, -2.0]
    np.testing.assert_array_equal(lin.forward(x), [1.5, -2.0])
    lin = Linear(3, 2, rng=rng)
    lin.bias.value[:] = rng.standard_normal(2)
    w, b = lin.weight.value, lin.bias.value
    expected = [sum(w[i, j] * x[j] for j in range(3)) + b[i] for i in range(2)]
    np.testing.assert_allclose(lin.forward(x), expected, atol=1e-12)
    with pytest.raises(ValueError):
        lin.forward(np.zeros(4))


def test_softmax_examples():
    np.testing.assert_array_equal(softmax_channels(np.zeros((1, 2, 3, 3))), np.full((1, 2, 3, 3), 0.5))
    y = softmax_channels(np.array([0.0, 1e4]).reshape(1, 2, 1, 1))
    assert np.all(np.isfinite(y))
    assert y[0, 1, 0, 0] == pytest.approx(1.0) and y[0, 0, 0, 0] == pytest.approx(0.0)
    # oracle: direct exp / sum
    e = np.exp([1.0, 2.0, 3.0])
    np.testing.assert_allclose(softmax_channels(np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1, 1)).ravel(),
                               e / e.sum(), atol=1e-15)
    np.testing.assert_allclose(e / e.sum(), [0.09003057, 0.24472847, 0.66524096], atol=5e-9)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (2, 3, 4, 4), elements=st.floats(-50, 50)))
def test_softmax_property(logits):
    y = softmax_channels(logits)
    assert np.all(np.abs(y.sum(axis=1) - 1.0) <= 1e-12)
    assert np.all((y >= 0) & (y <= 1))


def test_softmax_open_interval_moderate_logits(rng):
    y = softmax_channels(rng.uniform(-10, 10, size=(3, 4, 5, 5)))
    assert np.all((y > 0) & (y < 1))


def _param(v):
    return ("p", Param(np.array(v, dtype=np.float64)))


def test_adamw_zero_grad_identity():
    name, p = _param([1.0, -2.0])
    state = OptimState(lr=0.1)
    adamw_step([(name, p)], state)
    np.testing.assert_array_equal(p.value, [1.0, -2.0])
    assert state.step == 1


def test_adamw_first_step_is_sign_step():
    name, p = _param([1.0, 1.0, 1.0])
    p.grad[:] = [0.3, -2.0, 1e-3]
    state = OptimState(lr=0.01, eps=1e-8)
    adamw_step([(name, p)], state)
    g = np.array([0.3, -2.0, 1e-3])
    np.testing.assert_allclose(p.value, 1.0 - 0.01 * g / (np.abs(g) + 1e-8), atol=1e-15)
    np.testing.assert_allclose(p.value, 1.0 - 0.01 * np.sign(g), atol=1e-6)


def test_adamw_decoupled_decay():
    name, p = _param([2.0, -4.0])
    state = OptimState(lr=0.1, weight_decay=0.5)
    adamw_step([(name, p)], state)
    np.testing.assert_allclose(p.value, np.array([2.0, -4.0]) * (1 - 0.1 * 0.5), atol=0)


def test_adamw_aborts_on_non_finite():
    name, p = _param([1.0])
    p.grad[:] = np.nan
    state = OptimState(lr=0.1)
    with pytest.raises(DivergenceError):
        adamw_step([(name, p)], state)
    assert state.step == 0 and p.value[0] == 1.0


def test_rng_determinism():
    a = make_rng(42).standard_normal(10)
    b = make_rng(42).standard_normal(10)
    np.testing.assert_array_equal(a, b)


# gradient harness ---------------------------------------------------------

def test_fd_linear(rng):
    assert finite_diff_check(Linear(4, 3, rng=rng), [rng.standard_normal((2, 4))]) <= 1e-9


def test_fd_sigmoid(rng):
    assert finite_diff_check(Activation("sigmoid"), [rng.standard_normal((3, 5))]) <= 1e-8


def test_fd_conv_relu_chain(rng, wrap):
    conv = Conv2d(2, 3, 3, rng=rng)
    conv.bias.value[:] = rng.standard_normal(3)
    act = Activation("relu")
    op = wrap(conv, lambda m, x: act.forward(m.forward(x)), lambda m, d: m.backward(act.backward(d)))
    assert finite_diff_check(op, [rng.standard_normal((2, 2, 5, 5))]) <= 1e-6


@pytest.mark.parametrize("stride,k", [(1, 3), (2, 3), (1, 7), (1, 1)])
def test_fd_conv(stride, k, rng):
    conv = Conv2d(3, 2, k, stride=stride, rng=rng)
    assert finite_diff_check(conv, [rng.standard_normal((2, 3, 6, 6))]) <= 1e-6


@pytest.mark.parametrize("kind", ["avg", "max"])
def test_fd_pool(kind, rng):
    assert finite_diff_check(GlobalPool(kind), [rng.standard_normal((2, 3, 4, 4))]) <= 1e-6


def test_fd_softmax_and_activations(rng):
    assert finite_diff_check(SoftmaxChannels(), [rng.standard_normal((2, 3, 4, 4))]) <= 1e-6
    for kind in ("relu", "leaky-relu"):
        x = rng.standard_normal((3, 7))
        x[np.abs(x) < 1e-3] = 0.5  # keep away from the kink
        assert finite_diff_check(Activation(kind), [x]) <= 1e-6


def test_kernels_accept_read_only_views(rng):
    x = np.broadcast_to(rng.standard_normal((1, 2, 1, 1)), (3, 2, 5, 5))
    cols = kernels.im2col(x, 3, 1, 1)
    np.testing.assert_array_equal(cols, _kernels_py.im2col(np.ascontiguousarray(x), 3, 1, 1))
    cols.setflags(write=False)
    np.testing.assert_array_equal(kernels.col2im(cols, x.shape, 3, 1, 1),
                                  _kernels_py.col2im(cols, *x.shape, 3, 1, 1))
