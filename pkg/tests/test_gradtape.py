import math

import numpy as np
import pytest
from fdutil import REL_TOL, check_gradients
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from zeroair import gradtape as gt
from zeroair.gradtape import Tensor


def away_from_kinks(rng, shape, margin=0.05):
    """Random values whose magnitude exceeds ``margin`` (keeps FD off relu/abs kinks)."""
    x = rng.uniform(margin, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


# --- forward examples -------------------------------------------------------


def test_conv2d_center_value():
    x = Tensor(np.ones((1, 1, 3, 3)))
    k = Tensor(np.ones((1, 1, 3, 3)))
    out = gt.conv2d(x, k, Tensor(np.zeros(1)), stride=1, padding=1)
    assert out.shape == (1, 1, 3, 3)
    assert out.data[0, 0, 1, 1] == 9.0
    assert out.data[0, 0, 0, 0] == 4.0


def test_conv2d_zero_kernel():
    x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 5, 5)))
    out = gt.conv2d(x, Tensor(np.zeros((4, 3, 3, 3))), Tensor(np.zeros(4)), padding=1)
    assert np.all(out.data == 0)


def test_conv2d_matches_direct_summation():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 3, 6, 7))
    k = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    with gt.precision(np.float64):
        out = gt.conv2d(Tensor(x), Tensor(k), Tensor(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    oh, ow = (6 + 2 - 3) // 2 + 1, (7 + 2 - 3) // 2 + 1
    ref = np.zeros((2, 4, oh, ow))
    for n in range(2):
        for o in range(4):
            for i in range(oh):
                for j in range(ow):
                    ref[n, o, i, j] = np.sum(xp[n, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3] * k[o]) + b[o]
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_conv2d_shape_error_names_both_shapes():
    with pytest.raises(gt.ShapeError) as err:
        gt.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))
    assert "(1, 2, 4, 4)" in str(err.value) and "(1, 3, 3, 3)" in str(err.value)


@pytest.mark.parametrize(
    "kind,x,expected",
    [("relu", -1.0, 0.0), ("sigmoid", 0.0, 0.5), ("leaky_relu", -2.0, -0.4), ("tanh", 0.0, 0.0)],
)
def test_activation_values(kind, x, expected):
    with gt.precision(np.float64):
        out = gt.activation(Tensor(np.full((1, 1, 1, 1), x)), kind, slope=0.2)
    assert out.item() == pytest.approx(expected, abs=1e-12)


def test_unknown_activation():
    with pytest.raises(ValueError):
        gt.activation(Tensor(np.zeros(1)), "swish")


def test_sigmoid_is_stable_for_large_inputs():
    out = gt.sigmoid(Tensor(np.array([-1000.0, 1000.0])))
    assert np.all(np.isfinite(out.data))
    np.testing.assert_allclose(out.data, [0.0, 1.0], atol=1e-6)


def test_mse_examples():
    with gt.precision(np.float64):
        a = Tensor(np.array([1.0, 2.0]))
        assert gt.mse(a, a).item() == 0.0
        assert gt.mse(Tensor(np.ones(4)), Tensor(np.zeros(4))).item() == 1.0
        assert gt.mse(a, Tensor(np.zeros(2))).item() == 2.5


def test_mse_shape_mismatch():
    with pytest.raises(gt.ShapeError):
        gt.mse(Tensor(np.zeros(2)), Tensor(np.zeros(3)))


def test_log_loss_terms_examples():
    with gt.precision(np.float64):
        half = Tensor(np.full((3, 1, 1, 1), 0.5))
        assert gt.log_loss_terms(half, "log_1md").item() == pytest.approx(-0.6931, abs=1e-4)
        near_one = Tensor(np.full((1, 1, 1, 1), 1 - 1e-9))
        assert abs(gt.log_loss_terms(near_one, "log_d").item()) < 1e-5
        zero = Tensor(np.zeros((1, 1, 1, 1)))
        assert gt.log_loss_terms(zero, "log_d").item() == pytest.approx(math.log(1e-6))


def test_log_loss_terms_rejects_nan_and_unknown_variant():
    with pytest.raises(ValueError):
        gt.log_loss_terms(Tensor(np.array([np.nan])), "log_d")
    with pytest.raises(ValueError):
        gt.log_loss_terms(Tensor(np.array([0.5])), "log")


def test_log_loss_gradient_zero_where_clamped():
    d = Tensor(np.array([0.0, 0.5]), requires_grad=True)
    (g,) = gt.backward(gt.log_loss_terms(d, "log_d"), [d])
    assert g[0] == 0.0 and g[1] != 0.0


def test_concat_batch_shapes_and_gradient():
    a = Tensor(np.ones((2, 3, 8, 8)), requires_grad=True)
    b = Tensor(np.ones((1, 3, 8, 8)), requires_grad=True)
    c = gt.concat_batch(a, b)
    assert c.shape == (3, 3, 8, 8)
    ga, gb = gt.backward(gt.sum_(c), [a, b])
    assert np.all(ga == 1) and np.all(gb == 1)
    with pytest.raises(gt.ShapeError):
        gt.concat_batch(a, Tensor(np.ones((1, 2, 8, 8))))


def test_backward_sum_gives_ones():
    x = Tensor(np.random.default_rng(0).normal(size=(2, 3)), requires_grad=True)
    gt.sum_(x).backward()
    assert np.all(x.grad == 1.0)


def test_backward_mse_scalar_example():
    with gt.precision(np.float64):
        x = Tensor(np.array([2.0]), requires_grad=True)
        (g,) = gt.backward(gt.mse(x, Tensor(np.zeros(1))), [x])
    assert g[0] == 4.0


def test_backward_requires_scalar_root():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(gt.ShapeError):
        gt.backward(x * 2.0, [x])


def test_backward_accumulates_shared_subgraph():
    # x used twice: d/dx (x*x) = 2x
    with gt.precision(np.float64):
        x = Tensor(np.array([3.0]), requires_grad=True)
        (g,) = gt.backward(gt.sum_(gt.mul(x, x)), [x])
    assert g[0] == 6.0


def test_backward_visits_deep_chain_without_recursion_limit():
    x = Tensor(np.ones(1), requires_grad=True)
    h = x
    for _ in range(5000):
        h = h + 0.0
    (g,) = gt.backward(gt.sum_(h), [x])
    assert g[0] == 1.0


def test_leaf_gradient_shape_matches_leaf():
    x = Tensor(np.ones((2, 3, 4, 4)), requires_grad=True)
    k = Tensor(np.ones((5, 3, 3, 3)), requires_grad=True)
    b = Tensor(np.zeros(5), requires_grad=True)
    gt.mean(gt.conv2d(x, k, b, padding=1)).backward()
    assert x.grad.shape == x.shape and k.grad.shape == k.shape and b.grad.shape == b.shape


def test_no_grad_for_frozen_leaves():
    x = Tensor(np.ones(3), requires_grad=False)
    y = Tensor(np.ones(3), requires_grad=True)
    gt.sum_(gt.mul(x, y)).backward()
    assert x.grad is None and np.all(y.grad == 1)


def test_precision_context_restores_default():
    before = gt.default_dtype()
    with gt.precision(np.float64):
        assert Tensor(np.zeros(1)).data.dtype == np.float64
    assert gt.default_dtype() == before
    assert Tensor(np.zeros(1)).data.dtype == np.float32


# --- finite-difference checks -------------------------------------------------

RNG = np.random.default_rng(1234)
SHAPE = (2, 2, 4, 4)


def _fixture(shape=SHAPE, margin=0.05):
    return away_from_kinks(RNG, shape, margin)


CASES = {
    "add": (lambda a, b: gt.sum_(gt.mul(gt.add(a, b), gt.add(a, b))), [_fixture(), _fixture()]),
    "sub": (lambda a, b: gt.mse(gt.sub(a, b), gt.Tensor(np.zeros(SHAPE))), [_fixture(), _fixture()]),
    "mul": (lambda a, b: gt.sum_(gt.mul(a, b)), [_fixture(), _fixture()]),
    "neg_scalar_mul": (lambda a: gt.sum_(gt.mul(gt.neg(a), a) * 0.5), [_fixture()]),
    "abs": (lambda a: gt.sum_(gt.abs_(a)), [_fixture()]),
    "clamp": (lambda a: gt.sum_(gt.mul(gt.clamp(a, -0.5, 0.5), a)), [_fixture(margin=0.05) * 0.4]),
    "mean": (lambda a: gt.mean(gt.mul(a, a)), [_fixture()]),
    "mse": (lambda a, b: gt.mse(a, b), [_fixture(), _fixture()]),
    "relu": (lambda a: gt.sum_(gt.mul(gt.relu(a), a)), [_fixture()]),
    "leaky_relu": (lambda a: gt.sum_(gt.mul(gt.leaky_relu(a, 0.2), a)), [_fixture()]),
    "sigmoid": (lambda a: gt.sum_(gt.mul(gt.sigmoid(a * 3.0), a)), [_fixture()]),
    "tanh": (lambda a: gt.sum_(gt.mul(gt.tanh(a * 2.0), a)), [_fixture()]),
    "log_d": (lambda a: gt.log_loss_terms(gt.sigmoid(a), "log_d"), [_fixture((3, 1, 1, 1))]),
    "log_1md": (lambda a: gt.log_loss_terms(gt.sigmoid(a), "log_1md"), [_fixture((3, 1, 1, 1))]),
    "concat": (lambda a, b: gt.sum_(gt.mul(gt.concat_batch(a, b), gt.concat_batch(b, a))), [_fixture(), _fixture()]),
    "diff_h": (lambda a: gt.sum_(gt.mul(gt.diff(a, 2), gt.diff(a, 2))), [_fixture()]),
    "diff_w": (lambda a: gt.sum_(gt.mul(gt.diff(a, 3), gt.diff(a, 3))), [_fixture()]),
    "spatial_mean": (lambda a: gt.sum_(gt.mul(gt.spatial_mean(a), gt.spatial_mean(a))), [_fixture()]),
    "upsample": (lambda a: gt.sum_(gt.mul(gt.upsample2x(a), gt.upsample2x(a))), [_fixture()]),
    "channel_bias": (
        lambda a, b: gt.sum_(gt.mul(gt.add_channel_bias(a, b), gt.add_channel_bias(a, b))),
        [_fixture(), _fixture((2, 2))],
    ),
    "linear": (
        lambda x, w, b: gt.sum_(gt.mul(gt.linear(x, w, b), gt.linear(x, w, b))),
        [_fixture((3, 4)), _fixture((4, 5)), _fixture((5,))],
    ),
    "conv_s1_p1": (
        lambda x, k, b: gt.sum_(gt.mul(gt.conv2d(x, k, b, 1, 1), gt.conv2d(x, k, b, 1, 1))),
        [_fixture((1, 2, 5, 5)), _fixture((3, 2, 3, 3)), _fixture((3,))],
    ),
    "conv_s2_p1": (
        lambda x, k, b: gt.sum_(gt.mul(gt.conv2d(x, k, b, 2, 1), gt.conv2d(x, k, b, 2, 1))),
        [_fixture((2, 2, 6, 6)), _fixture((2, 2, 3, 3)), _fixture((2,))],
    ),
    "conv_s1_p0_nobias": (
        lambda x, k: gt.sum_(gt.conv2d(x, k, None, 1, 0)),
        [_fixture((1, 2, 5, 5)), _fixture((1, 2, 3, 3))],
    ),
    "conv_relu_mse": (
        lambda x, k: gt.mse(gt.relu(gt.conv2d(x, k, None, 1, 1)), gt.Tensor(np.full((1, 2, 4, 4), 0.1))),
        [_fixture((1, 2, 4, 4)), _fixture((2, 2, 3, 3))],
    ),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_finite_differences(name):
    build, arrays = CASES[name]
    assert check_gradients(build, arrays) <= REL_TOL


def test_conv_sum_gradient_wrt_input_example():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(1, 2, 5, 5))
    k = rng.normal(size=(3, 2, 3, 3))

    def build(xt):
        return gt.sum_(gt.conv2d(xt, gt.Tensor(k), None, 1, 1))

    assert check_gradients(build, [x]) <= REL_TOL


def test_fd_case_count():
    assert len(CASES) >= 20


# --- properties ----------------------------------------------------------------

finite = st.floats(-5, 5, allow_nan=False, width=64)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (2, 3), elements=finite), arrays(np.float64, (2, 3), elements=finite))
def test_mse_symmetric_and_nonnegative(a, b):
    with gt.precision(np.float64):
        ab = gt.mse(Tensor(a), Tensor(b)).item()
        ba = gt.mse(Tensor(b), Tensor(a)).item()
    assert ab >= 0 and ab == pytest.approx(ba)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (1, 1, 3, 3), elements=finite))
def test_relu_gradient_is_indicator(x):
    t = Tensor(x, requires_grad=True)
    (g,) = gt.backward(gt.sum_(gt.relu(t)), [t])
    np.testing.assert_array_equal(g, (t.data > 0).astype(g.dtype))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (1, 2, 4, 4), elements=finite), st.floats(-3, 3))
def test_conv_is_linear_in_input(x, c):
    k = np.random.default_rng(0).normal(size=(2, 2, 3, 3))
    with gt.precision(np.float64):
        base = gt.conv2d(Tensor(x), Tensor(k), None, 1, 1).data
        scaled = gt.conv2d(Tensor(c * x), Tensor(k), None, 1, 1).data
    np.testing.assert_allclose(scaled, c * base, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 1, 3, 3), elements=finite))
def test_forward_backward_stay_finite(x):
    t = Tensor(x, requires_grad=True)
    out = gt.log_loss_terms(gt.sigmoid(gt.spatial_mean(gt.tanh(t))), "log_1md")
    (g,) = gt.backward(out, [t])
    assert np.isfinite(out.item()) and np.all(np.isfinite(g))


# --- Adam ------------------------------------------------------------------------


def test_adam_zero_gradient_leaves_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    state = gt.AdamState.for_params([p])
    before = p.data.copy()
    gt.adam_step([p], [np.zeros(2)], state)
    np.testing.assert_array_equal(p.data, before)
    assert state.step == 1


def test_adam_first_step_moves_by_lr():
    with gt.precision(np.float64):
        p = Tensor(np.zeros(3), requires_grad=True)
    state = gt.AdamState.for_params([p], lr=1e-3)
    gt.adam_step([p], [np.ones(3)], state)
    expected = -1e-3 * (1 / (1 - 0.9)) * 0.1 / (math.sqrt(0.001 / (1 - 0.999)) + 1e-8)
    np.testing.assert_allclose(p.data, expected, rtol=1e-9)
    np.testing.assert_allclose(p.data, -1e-3, rtol=1e-6)


def test_adam_decreases_convex_quadratic():
    with gt.precision(np.float64):
        w = Tensor(np.array([2.0]), requires_grad=True)
    state = gt.AdamState.for_params([w], lr=0.1)
    losses = []
    for _ in range(3):
        losses.append(float(w.data[0] ** 2))
        gt.adam_step([w], [2 * w.data], state)
    assert losses[2] < losses[1] < losses[0]
    assert state.step == 3


def test_adam_shape_mismatch():
    p = Tensor(np.zeros(3), requires_grad=True)
    state = gt.AdamState.for_params([p])
    with pytest.raises(gt.ShapeError):
        gt.adam_step([p], [np.zeros(4)], state)


def test_module_frozen_restores_flags():
    layer = gt.Conv2d(2, 2)

    class Net(gt.Module):
        def __init__(self):
            self.layers = [layer]

    net = Net()
    with net.frozen():
        assert not any(p.requires_grad for p in net.params())
    assert all(p.requires_grad for p in net.params())
    assert net.n_params() == 2 * 2 * 9 + 2
