import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sleepsense.numcore import ops
from sleepsense.numcore.gradcheck import grad_check
from sleepsense.numcore.nn import BiLSTM, Conv1d, Linear, Parameter
from sleepsense.numcore.optim import Adam, AdamState, adam_step
from sleepsense.numcore.tensor import ShapeError, Tensor, count_macs, mac_tag, no_grad

RNG = np.random.default_rng(1234)


def r(*shape):
    return RNG.standard_normal(shape)


# -- forward values --------------------------------------------------------------------------

def test_softmax_of_zeros_is_uniform():
    out = ops.softmax(Tensor(np.zeros(2, dtype=np.float64)))
    np.testing.assert_array_equal(out.data, [0.5, 0.5])


def test_conv1d_centre_tap_is_identity():
    x = Tensor(r(2, 1, 17))
    w = Tensor(np.array([[[0.0, 1.0, 0.0]]]))
    np.testing.assert_array_equal(ops.conv1d(x, w, padding=1).data, x.data)


def test_cross_entropy_uniform_logits_is_log6():
    for label in range(6):
        loss = ops.cross_entropy(Tensor(np.zeros((1, 6))), [label])
        assert loss.item() == pytest.approx(np.log(6), abs=1e-12)
    assert np.log(6) == pytest.approx(1.7918, abs=1e-4)


def test_conv1d_matches_direct_sum():
    x, w, b = r(2, 3, 11), r(4, 3, 3), r(4)
    out = ops.conv1d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1)))
    ref = np.zeros_like(out)
    for n in range(2):
        for o in range(4):
            for t in range(out.shape[2]):
                ref[n, o, t] = np.sum(xp[n, :, 2 * t : 2 * t + 3] * w[o]) + b[o]
    np.testing.assert_allclose(out, ref, rtol=1e-12)


def test_batch_norm_training_normalises_and_updates_buffers():
    x = r(8, 3, 5) * 4 + 2
    rm, rv = np.zeros(3), np.ones(3)
    out = ops.batch_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), rm, rv, training=True).data
    np.testing.assert_allclose(out.mean(axis=(0, 2)), 0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=(0, 2)), 1, rtol=1e-4)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2)), rtol=1e-12)
    n = 8 * 5
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2)) * n / (n - 1), rtol=1e-12)


def test_layer_norm_rows():
    out = ops.layer_norm(Tensor(r(4, 7) * 3 + 1), Tensor(np.ones(7)), Tensor(np.zeros(7))).data
    np.testing.assert_allclose(out.mean(axis=-1), 0, atol=1e-12)
    np.testing.assert_allclose(out.std(axis=-1), 1, rtol=1e-5)


def _lstm_reference(xp, w_hh, reverse=False):
    B, T, G = xp.shape
    H = G // 4
    sig = lambda z: 1 / (1 + np.exp(-z))  # noqa: E731
    h, c = np.zeros((B, H)), np.zeros((B, H))
    out = np.zeros((B, T, H))
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        z = xp[:, t] + h @ w_hh
        i, f, g, o = sig(z[:, :H]), sig(z[:, H : 2 * H]), np.tanh(z[:, 2 * H : 3 * H]), sig(z[:, 3 * H :])
        c = f * c + i * g
        h = o * np.tanh(c)
        out[:, t] = h
    return out


@pytest.mark.parametrize("reverse", [False, True])
def test_lstm_matches_step_loop(reverse):
    xp, w = r(2, 6, 12), r(3, 12) * 0.5
    np.testing.assert_allclose(ops.lstm(Tensor(xp), Tensor(w), reverse).data, _lstm_reference(xp, w, reverse), rtol=1e-10)


def test_shape_mismatch_reports_both_shapes():
    with pytest.raises(ShapeError) as e:
        ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    assert "(2, 3)" in str(e.value) and "(4, 5)" in str(e.value)
    with pytest.raises(ShapeError) as e:
        ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    assert "(2, 3)" in str(e.value) and "(4, 5)" in str(e.value)


# -- backward semantics ----------------------------------------------------------------------

def test_quadratic_gradient():
    w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    (w * w).sum().backward()
    np.testing.assert_array_equal(w.grad, [2.0, 4.0])


def test_unused_parameter_gets_zero_gradient():
    w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    p = Tensor(np.array([3.0]), requires_grad=True)
    loss = (w * w).sum() + p * 0.0
    loss.sum().backward()
    np.testing.assert_array_equal(p.grad, [0.0])


def test_backward_needs_scalar():
    w = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        (w * 2.0).backward()


def test_graph_is_single_use_and_grads_accumulate():
    w = Tensor(np.array([1.0, -1.0]), requires_grad=True)
    loss = (w * w).sum()
    loss.backward()
    with pytest.raises(RuntimeError):
        loss.backward()
    (w * w).sum().backward()
    np.testing.assert_array_equal(w.grad, [4.0, -4.0])
    w.zero_grad()
    assert w.grad is None


def test_shared_subexpression_accumulates_once_per_path():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = x * x
    (y + y).sum().backward()
    np.testing.assert_allclose(x.grad, [12.0])


def test_no_grad_builds_no_graph():
    w = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        out = (w * w).sum()
    assert out._backward is None


# -- central differences on every primitive ----------------------------------------------

def _check(fn, *inputs, **kw):
    rep = grad_check(fn, inputs, **kw)
    assert rep.passed, rep
    return rep


def test_grad_arithmetic_and_broadcast():
    _check(lambda a, b: (ops.add(a, b) * ops.sub(a, b)).sum(), r(3, 4), r(4))
    _check(lambda a, b: ops.divide(ops.multiply(a, b), b * b + 2.0).sum(), r(3, 1), r(1, 5))
    _check(lambda a: (ops.mean(a, axis=1) * ops.sum(a, axis=1, keepdims=True).reshape(3)).sum(), r(3, 4))


def test_grad_matmul_linear():
    _check(lambda a, b: (ops.matmul(a, b) * ops.matmul(a, b)).sum(), r(2, 3, 4), r(4, 5))
    _check(lambda x, w, b: ops.tanh(ops.linear(x, w, b)).sum(), r(5, 3), r(3, 2), r(2))


def test_grad_shape_ops():
    k = np.arange(10.0).reshape(5, 2)
    _check(lambda a, b: (ops.transpose(ops.concat([a, b], axis=1), (1, 0)) * k).sum(), r(2, 2), r(2, 3))
    m = r(3, 3)
    _check(lambda a: (ops.slice(a, (slice(None), [0, 2, 2])) * m).sum(), r(3, 4))
    _check(lambda a: (ops.reshape(a, (6, 2)) * np.arange(12.0).reshape(6, 2)).sum(), r(3, 4))


def test_grad_activations():
    x = r(4, 5)
    x[np.abs(x) < 0.05] += 0.2  # keep relu away from its kink
    w = r(4, 5)
    _check(lambda a: (ops.relu(a) * w).sum(), x)
    _check(lambda a: (ops.tanh(a) * w).sum(), x)
    _check(lambda a: (ops.sigmoid(a) * w).sum(), x)
    _check(lambda a: (ops.softmax(a, axis=0) * w).sum(), x)
    _check(lambda a: (ops.softmax(a, axis=-1) * w).sum(), x)


def test_grad_cross_entropy():
    labels = [0, 3, 5, 1]
    _check(lambda z: ops.cross_entropy(z, labels), r(4, 6))
    wts = np.array([1.0, 2.0, 0.5, 1.5, 1.0, 3.0])
    _check(lambda z: ops.cross_entropy(z, labels, wts), r(4, 6))


def test_grad_conv1d_and_pool():
    m = r(2, 4)
    _check(lambda x, w, b: (ops.global_average_pool(ops.conv1d(x, w, b, stride=2, padding=1)) * m).sum(),
           r(2, 3, 9), r(4, 3, 3), r(4))
    _check(lambda x, w: (ops.conv1d(x, w) * ops.conv1d(x, w)).sum(), r(1, 2, 6), r(2, 2, 1))


def test_grad_normalisation():
    g = r(3, 4, 5)
    _check(lambda x, ga, be: (ops.batch_norm(x, ga, be, np.zeros(4), np.ones(4), training=True) * g).sum(),
           r(3, 4, 5), r(4), r(4))
    _check(lambda x, ga, be: (ops.batch_norm(x, ga, be, np.full(4, 0.3), np.full(4, 2.0), training=False) * g).sum(),
           r(3, 4, 5), r(4), r(4))
    h = r(3, 6)
    _check(lambda x, ga, be: (ops.layer_norm(x, ga, be) * h).sum(), r(3, 6), r(6), r(6))


@pytest.mark.parametrize("reverse", [False, True])
def test_grad_lstm(reverse):
    g = r(2, 5, 3)
    _check(lambda xp, w: (ops.lstm(xp, w, reverse) * g).sum(), r(2, 5, 12), r(3, 12) * 0.5)


def test_grad_check_flags_a_wrong_gradient():
    def bad(a):
        return ops.multiply(Tensor(a.data), a).sum()  # treats one factor as a constant

    assert not grad_check(bad, [r(4)]).passed


# -- property tests --------------------------------------------------------------------------

finite = st.floats(-5, 5, allow_nan=False, width=64)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 6)), elements=finite))
def test_softmax_rows_are_distributions(x):
    p = ops.softmax(Tensor(x), axis=-1).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 6)), elements=finite), st.floats(-50, 50))
def test_softmax_shift_invariance(x, c):
    np.testing.assert_allclose(ops.softmax(Tensor(x)).data, ops.softmax(Tensor(x + c)).data, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=finite))
def test_sum_gradient_is_ones(x):
    t = Tensor(x, requires_grad=True)
    t.sum().backward()
    np.testing.assert_array_equal(t.grad, np.ones_like(x))


# -- layers, optimiser, MAC counter --------------------------------------------------------

def test_adam_zero_lr_leaves_parameters():
    p = {"w": r(3)}
    before = p["w"].copy()
    st_ = AdamState()
    for _ in range(5):
        adam_step(p, {"w": r(3)}, st_, lr=0.0)
    np.testing.assert_array_equal(p["w"], before)


def test_adam_first_step_moves_by_lr_times_sign():
    p = {"w": np.array([1.0, -2.0, 0.5])}
    g = {"w": np.array([0.3, -4.0, 1e-3])}
    adam_step(p, g, AdamState(), lr=0.01)
    # bias-corrected first step is lr * g / (|g| + eps')
    np.testing.assert_allclose(p["w"], [0.99, -1.99, 0.49], atol=1e-7)


def test_adam_converges_on_quadratic():
    w = Parameter(np.array([3.0, -2.0]))
    opt = Adam({"w": w}, lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        ((w - 1.0) * (w - 1.0)).sum().backward()
        opt.step()
    np.testing.assert_allclose(w.data, [1.0, 1.0], atol=1e-2)


def test_mac_counter_tags():
    rng = np.random.default_rng(0)
    lin = Linear(8, 4, rng)
    conv = Conv1d(2, 3, 3, rng, padding=1)
    lstm = BiLSTM(5, 4, 1, rng)
    with count_macs() as mc:
        with mac_tag("lin"):
            lin(Tensor(np.zeros((2, 8))))
        with mac_tag("conv"):
            conv(Tensor(np.zeros((1, 2, 10))))
        with mac_tag("lstm"):
            lstm(Tensor(np.zeros((1, 7, 5))))
    assert mc.by_tag["lin"] == 2 * 8 * 4
    assert mc.by_tag["conv"] == 3 * 2 * 3 * 10
    # input projection plus recurrence, both directions
    assert mc.by_tag["lstm"] == 2 * (7 * 5 * 16 + 7 * 4 * 16)
    assert mc.total == sum(mc.by_tag.values())


def test_parameter_casts_integers_to_float():
    assert Parameter(np.arange(3)).dtype.kind == "f"
