import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dlrom import nn
from dlrom.nn import LayerParams
from oracles import naive_conv, naive_tconv


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-12)


def fd_check(p, x, seed, h=1e-6):
    """Central differences of L = <y, R> against the analytic gradients."""
    r = np.random.default_rng(seed)
    y, cache = nn.layer_forward(p, x)
    R = r.standard_normal(y.shape)
    dx, dW, db = nn.layer_backward(p, cache, R)

    def loss():
        return float(np.sum(nn.layer_forward(p, x)[0] * R))

    worst = 0.0
    for arr, grad in ((x, dx), (p.weights, dW), (p.bias, db)):
        flat = arr.reshape(-1)
        idx = r.choice(flat.size, size=min(flat.size, 25), replace=False)
        num = np.empty(len(idx))
        for t, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            lp = loss()
            flat[i] = old - h
            lm = loss()
            flat[i] = old
            num[t] = (lp - lm) / (2 * h)
        worst = max(worst, rel_err(grad.reshape(-1)[idx], num))
    return worst


def test_elu_values():
    assert nn.elu(0.0) == 0.0
    assert nn.elu(2.5) == 2.5
    assert nn.elu(-1.0) == pytest.approx(math.exp(-1) - 1, rel=1e-15)
    assert nn.elu(-1.0) == pytest.approx(-0.63212, abs=1e-5)
    z = np.linspace(-5, 5, 101)
    np.testing.assert_allclose(nn.elu_grad(z), np.where(z >= 0, 1.0, np.exp(z)))


def test_dense_identity_and_bias():
    p = LayerParams("dense", np.eye(4), np.zeros(4), activation="identity")
    x = np.random.default_rng(0).standard_normal((3, 4))
    np.testing.assert_array_equal(nn.dense_forward(p, x), x)
    b = np.array([-1.0, 0.0, 0.5, 2.0])
    p = LayerParams("dense", np.ones((4, 5)), b)
    np.testing.assert_allclose(nn.dense_forward(p, np.zeros((2, 5))), np.tile(nn.elu(b), (2, 1)))


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("act", ["elu", "identity"])
def test_dense_gradients(seed, act):
    r = np.random.default_rng(seed)
    p = LayerParams("dense", r.standard_normal((5, 7)), r.standard_normal(5), activation=act)
    assert fd_check(p, r.standard_normal((3, 7)), seed) < 1e-5


def test_dense_backward_wrapper_shapes():
    r = np.random.default_rng(1)
    p = LayerParams("dense", r.standard_normal((5, 7)), r.standard_normal(5))
    dx, dW, db = nn.dense_backward(p, r.standard_normal((3, 7)), r.standard_normal((3, 5)))
    assert dx.shape == (3, 7) and dW.shape == (5, 7) and db.shape == (5,)
    with pytest.raises(ValueError):
        nn.dense_forward(p, np.zeros((3, 6)))


conv_cases = st.tuples(st.integers(1, 5), st.integers(1, 2), st.integers(3, 9), st.integers(1, 3),
                       st.integers(1, 3), st.integers(0, 10_000))


@given(conv_cases)
def test_conv_matches_naive_loops(case):
    k, s, H, ci, co, seed = case
    r = np.random.default_rng(seed)
    W, b = r.standard_normal((k, k, ci, co)), r.standard_normal(co)
    x = r.standard_normal((2, H, H + 1, ci))
    p = LayerParams("conv", W, b, s, "identity")
    y = nn.conv2d_forward(p, x)
    assert y.shape == (2, -(-H // s), -(-(H + 1) // s), co)
    np.testing.assert_allclose(y, naive_conv(x, W, b, s), rtol=1e-12, atol=1e-12)


def test_conv_spec_instance():
    r = np.random.default_rng(7)
    x = r.standard_normal((1, 6, 6, 2))
    W, b = r.standard_normal((3, 3, 2, 4)), r.standard_normal(4)
    p = LayerParams("conv", W, b, 1, "identity")
    np.testing.assert_allclose(nn.conv2d_forward(p, x), naive_conv(x, W, b, 1), rtol=1e-13, atol=1e-13)


def test_conv_unit_kernel_is_identity_and_stride_halves():
    x = np.random.default_rng(0).standard_normal((2, 5, 5, 3))
    W = np.zeros((1, 1, 3, 3))
    W[0, 0] = np.eye(3)
    p = LayerParams("conv", W, np.zeros(3), 1, "identity")
    np.testing.assert_array_equal(nn.conv2d_forward(p, x), x)
    q = LayerParams("conv", np.ones((5, 5, 1, 4)), np.zeros(4), 2)
    assert nn.conv2d_forward(q, np.zeros((1, 16, 16, 1))).shape == (1, 8, 8, 4)
    t = LayerParams("tconv", W, np.zeros(3), 1, "identity")
    np.testing.assert_array_equal(nn.tconv2d_forward(t, x), x)


def test_conv_kernel_larger_than_input_is_padded():
    # SAME padding always extends the input to fit the kernel
    r = np.random.default_rng(0)
    W = r.standard_normal((5, 5, 1, 1))
    x = r.standard_normal((1, 2, 2, 1))
    p = LayerParams("conv", W, np.zeros(1), 2, "identity")
    y = nn.conv2d_forward(p, x)
    assert y.shape == (1, 1, 1, 1)
    np.testing.assert_allclose(y, naive_conv(x, W, np.zeros(1), 2), rtol=1e-13)
    with pytest.raises(ValueError):
        nn.conv2d_forward(p, np.zeros((1, 2, 2, 3)))


@given(conv_cases)
def test_tconv_matches_naive_scatter(case):
    k, s, h, ci, co, seed = case
    r = np.random.default_rng(seed)
    W, b = r.standard_normal((k, k, co, ci)), r.standard_normal(co)
    x = r.standard_normal((2, h, h, ci))
    p = LayerParams("tconv", W, b, s, "identity")
    y = nn.tconv2d_forward(p, x)
    assert y.shape == (2, h * s, h * s, co)
    np.testing.assert_allclose(y, naive_tconv(x, W, b, s), rtol=1e-12, atol=1e-12)


@given(conv_cases)
def test_tconv_is_adjoint_of_conv(case):
    k, s, h, ci, co, seed = case
    r = np.random.default_rng(seed)
    W = r.standard_normal((k, k, ci, co))
    X = r.standard_normal((2, h * s, h * s, ci))
    Y = r.standard_normal((2, h, h, co))
    conv = LayerParams("conv", W, np.zeros(co), s, "identity")
    # the tconv kernel layout (k, k, C_out, C_in) is the conv kernel it is the adjoint of
    tconv = LayerParams("tconv", W, np.zeros(ci), s, "identity")
    lhs = np.sum(nn.conv2d_forward(conv, X) * Y)
    rhs = np.sum(X * nn.tconv2d_forward(tconv, Y))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("kind", ["conv", "tconv"])
def test_conv_gradients(seed, kind):
    r = np.random.default_rng(seed)
    k, s = [(3, 1), (3, 2), (4, 2), (5, 2), (5, 1)][seed % 5]
    ci, co = 2, 3
    if kind == "conv":
        p = LayerParams("conv", r.standard_normal((k, k, ci, co)), r.standard_normal(co), s)
        x = r.standard_normal((2, 6, 6, ci))
    else:
        p = LayerParams("tconv", r.standard_normal((k, k, co, ci)), r.standard_normal(co), s)
        x = r.standard_normal((2, 3, 3, ci))
    assert fd_check(p, x, seed) < 1e-5


def test_decoder_pipeline_shapes():
    r = np.random.default_rng(0)
    layers = []
    c = 64
    for f, s in zip((32, 16, 8, 1), (2, 2, 2, 1)):
        layers.append(nn.init_tconv(5, c, f, s, r))
        c = f
    y, _ = nn.network_forward(layers, np.zeros((3, 2, 2, 64)))
    assert y.shape == (3, 16, 16, 1)
    enc = []
    c = 1
    for f, s in zip((8, 16, 32, 64), (1, 2, 2, 2)):
        enc.append(nn.init_conv(5, c, f, s, r))
        c = f
    y, _ = nn.network_forward(enc, np.zeros((3, 16, 16, 1)))
    assert y.shape == (3, 2, 2, 64)


def test_compiled_and_numpy_scatter_agree():
    if not nn.USE_COMPILED:
        pytest.skip("numba unavailable")
    r = np.random.default_rng(0)
    for k, s, c in [(5, 2, 8), (7, 1, 4), (3, 2, 2)]:
        patches = r.standard_normal((2, 4, 4, k, k, c))
        hp = (4 - 1) * s + k
        a = np.zeros((2, hp, hp, c))
        b = np.zeros((2, hp, hp, c))
        nn._scatter_patches_numpy(patches, a, s)
        nn._scatter_patches_compiled(patches, b, s)
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)



@pytest.mark.parametrize("size,stride,k", [(16, 1, 5), (16, 2, 5), (8, 2, 7), (4, 2, 7), (5, 2, 3), (7, 2, 4)])
def test_same_padding_law(size, stride, k):
    out, before, after = nn.same_padding(size, k, stride)
    assert out == math.ceil(size / stride)
    assert after - before in (0, 1)
    assert (out - 1) * stride + k <= size + before + after


def test_he_uniform():
    w = nn.he_uniform_init((100_000,), 6, rng_seed=1)
    assert np.abs(w).max() <= 1.0
    assert abs(w.mean()) < 3 * math.sqrt(1.0 / 3.0 / w.size)
    assert w.var() == pytest.approx(1.0 / 3.0, rel=0.02)
    np.testing.assert_array_equal(nn.he_uniform_init((5, 4), 4, rng_seed=3), nn.he_uniform_init((5, 4), 4, rng_seed=3))
    with pytest.raises(ValueError):
        nn.he_uniform_init((2,), 0)


def test_init_biases_zero_and_fan_in():
    r = np.random.default_rng(0)
    t = nn.init_tconv(3, 4, 2, 2, r)
    assert t.fan_in == 3 * 3 * 4 and np.all(t.bias == 0)
    c = nn.init_conv(3, 4, 2, 2, r)
    assert c.fan_in == 36 and np.abs(c.weights).max() <= math.sqrt(6 / 36)


def test_layer_validation():
    with pytest.raises(ValueError):
        LayerParams("pool", np.zeros((2, 2)), np.zeros(2))
    with pytest.raises(ValueError):
        LayerParams("dense", np.zeros((2, 3)), np.zeros(3))
    with pytest.raises(ValueError):
        LayerParams("conv", np.zeros((3, 3, 1, 2)), np.zeros(2), stride=0)
    with pytest.raises(ValueError):
        LayerParams("dense", np.zeros((2, 3)), np.zeros(2), activation="relu")


def test_network_chain_errors_name_layer():
    r = np.random.default_rng(0)
    layers = [nn.init_dense(3, 4, r), nn.init_dense(5, 2, r)]
    with pytest.raises(ValueError, match="layer 1"):
        nn.network_forward(layers, np.zeros((1, 3)))
    x = np.ones((2, 3))
    y, caches = nn.network_forward([], x)
    assert y is x and caches == []


def test_adam_zero_gradient_and_zero_lr():
    p = [np.array([1.0, -2.0])]
    st_ = nn.AdamState()
    nn.adam_step(st_, p, [np.zeros(2)])
    np.testing.assert_array_equal(p[0], [1.0, -2.0])
    st_ = nn.AdamState(lr=0.0)
    nn.adam_step(st_, p, [np.array([3.0, 4.0])])
    np.testing.assert_array_equal(p[0], [1.0, -2.0])


def test_adam_first_step_moves_by_lr():
    p = [np.array([0.5, 0.5, 0.5])]
    g = np.array([2.0, -0.3, 1e3])
    nn.adam_step(nn.AdamState(lr=1e-3), p, [g])
    np.testing.assert_allclose(p[0] - 0.5, -1e-3 * np.sign(g), rtol=1e-6)


def test_adam_scalar_trace():
    # scalar oracle for f(p) = p^2 from p = 1
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    p_ref, m, v = 1.0, 0.0, 0.0
    trace = []
    for t in range(1, 11):
        g = 2 * p_ref
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p_ref -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        trace.append(p_ref)
    p = [np.array([1.0])]
    st_ = nn.AdamState(lr=lr)
    for t in range(10):
        nn.adam_step(st_, p, [2 * p[0]])
        assert p[0][0] == pytest.approx(trace[t], rel=1e-13)
    assert st_.step_count == 10


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        nn.adam_step(nn.AdamState(), [np.zeros(2)], [np.zeros(3)])


def test_debug_mode_flags_non_finite(monkeypatch):
    monkeypatch.setattr(nn, "DEBUG", True)
    p = LayerParams("dense", np.array([[1e308]]), np.zeros(1), activation="identity")
    with np.errstate(over="ignore"), pytest.raises(nn.NonFiniteError):
        nn.dense_forward(p, np.array([[1e10]]))
