import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lprlab import net as nn
from lprlab.linalg import ShapeError

from conftest import max_rel_err, numeric_grads


def reference_logits(network, x):
    """Straight-line evaluation with an explicit weight matrix and bias vector."""
    h = np.asarray(x, dtype=float)
    for layer in network.layers:
        w, b = layer.theta[:-1], layer.theta[-1]
        h = h.dot(w) + b
        if layer.activation == "relu":
            h = np.where(h > 0, h, 0.0)
    return h


def test_forward_identity_weights():
    theta = np.vstack([np.eye(3), np.zeros((1, 3))])
    network = nn.Network([nn.Layer(theta, "identity")])
    x = np.array([[0.5, 1.0, 2.0], [3.0, 0.1, 0.2]])
    np.testing.assert_array_equal(nn.forward(network, x).logits, x)

    relu_first = nn.Network([nn.Layer(theta.copy(), "relu"), nn.Layer(theta.copy(), "identity")])
    np.testing.assert_array_equal(nn.forward(relu_first, x).logits, x)


def test_forward_zero_theta(rng):
    network = nn.init_network([4, 5, 3], rng)
    for layer in network.layers:
        layer.theta[:] = 0
    assert not np.any(nn.forward(network, rng.normal(size=(6, 4))).logits)


def test_forward_matches_reference_and_trace_shapes(rng):
    network = nn.init_network([5, 7, 6, 3], rng)
    for layer in network.layers:
        layer.theta[-1] = rng.normal(size=layer.theta.shape[1])
    x = rng.normal(size=(9, 5))
    trace = nn.forward(network, x)
    np.testing.assert_allclose(trace.logits, reference_logits(network, x), rtol=1e-13, atol=1e-14)
    assert len(trace.z) == 3
    np.testing.assert_array_equal(trace.z[0], np.hstack([x, np.ones((9, 1))]))
    assert [z.shape for z in trace.z] == [(9, 6), (9, 8), (9, 7)]
    again = nn.forward(network, x)
    for a, b in zip(trace.z, again.z):
        np.testing.assert_array_equal(a, b)


def test_forward_width_mismatch(rng):
    with pytest.raises(ShapeError):
        nn.forward(nn.init_network([4, 3], rng), np.ones((2, 5)))


def test_init_scheme(rng):
    network = nn.init_network([16, 8, 4], rng)
    for layer in network.layers:
        fan_in = layer.theta.shape[0] - 1
        assert np.all(np.abs(layer.theta[:-1]) <= 1 / np.sqrt(fan_in))
        assert not np.any(layer.theta[-1])
    assert network.layers[-1].activation == "identity"
    assert network.widths == [16, 8, 4]


def test_network_rejects_bad_chain(rng):
    with pytest.raises(ShapeError):
        nn.Network([nn.Layer(np.zeros((3, 4))), nn.Layer(np.zeros((6, 2)), "identity")])
    with pytest.raises(nn.InputError):
        nn.Network([nn.Layer(np.zeros((3, 4)), "relu")])


def test_cross_entropy_uniform_logits():
    c, n = 5, 4
    loss, d = nn.softmax_cross_entropy(np.zeros((n, c)), [0, 1, 2, 3])
    assert loss == pytest.approx(np.log(c), rel=1e-14)
    assert d[0, 0] == pytest.approx((1 / c - 1) / n, rel=1e-14)
    assert d[0, 1] == pytest.approx((1 / c) / n, rel=1e-14)


def test_cross_entropy_confident():
    logits = np.array([[200.0, 0.0, 0.0], [0.0, 0.0, 200.0]])
    loss, _ = nn.softmax_cross_entropy(logits, [0, 2])
    assert loss < 1e-12


def test_cross_entropy_label_range():
    with pytest.raises(nn.InputError):
        nn.softmax_cross_entropy(np.zeros((2, 3)), [0, 3])


def test_cross_entropy_matches_finite_differences(rng):
    logits = rng.normal(size=(6, 4))
    y = rng.integers(0, 4, size=6)
    _, d = nn.softmax_cross_entropy(logits, y)
    h = 1e-5
    num = np.zeros_like(logits)
    for idx in np.ndindex(*logits.shape):
        up, down = logits.copy(), logits.copy()
        up[idx] += h
        down[idx] -= h
        num[idx] = (nn.softmax_cross_entropy(up, y)[0] - nn.softmax_cross_entropy(down, y)[0]) / (2 * h)
    assert max_rel_err([d], [num]) < 1e-5


def test_backward_zero_dlogits(rng):
    network = nn.init_network([3, 4, 2], rng)
    trace = nn.forward(network, rng.normal(size=(5, 3)))
    for g in nn.backward(network, trace, np.zeros((5, 2))):
        assert not np.any(g)


def test_backward_dead_relu_unit(rng):
    network = nn.init_network([3, 4, 2], rng)
    # hidden unit 1 always has a negative pre-activation
    network.layers[0].theta[:, 1] = 0.0
    network.layers[0].theta[-1, 1] = -5.0
    x = rng.normal(size=(6, 3))
    y = rng.integers(0, 2, size=6)
    grads = nn.loss_and_grads(network, x, y)[1]
    assert np.all(grads[0][:, 1] == 0.0)
    assert np.all(grads[1][1] == 0.0)


def test_backward_stale_trace(rng):
    network = nn.init_network([3, 4, 2], rng)
    trace = nn.forward(nn.init_network([3, 5, 2], rng), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        nn.backward(network, trace, np.zeros((2, 2)))


@settings(max_examples=25, deadline=None)
@given(widths=st.lists(st.integers(1, 12), min_size=2, max_size=4),
       batch=st.integers(1, 16), seed=st.integers(0, 2**31))
def test_backward_matches_finite_differences(widths, batch, seed):
    rng = np.random.default_rng(seed)
    network = nn.init_network(widths, rng)
    for layer in network.layers:
        layer.theta[-1] = rng.normal(scale=0.3, size=layer.theta.shape[1])
    x = rng.normal(size=(batch, widths[0]))
    y = rng.integers(0, widths[-1], size=batch)
    analytic = nn.loss_and_grads(network, x, y)[1]
    numeric = numeric_grads(network, x, y)
    for a, b in zip(analytic, numeric):
        scale = max(np.linalg.norm(a), np.linalg.norm(b))
        if scale > 0:
            assert np.linalg.norm(a - b) / scale < 1e-5


def test_combined_loss_reductions(rng):
    network = nn.init_network([4, 6, 3], rng)
    new = (rng.normal(size=(5, 4)), rng.integers(0, 3, size=5))
    rep = (rng.normal(size=(7, 4)), rng.integers(0, 3, size=7))
    base_loss, base = nn.loss_and_grads(network, *new)

    for replay, alpha in [(rep, 0.0), (None, 1.0), ((np.zeros((0, 4)), np.zeros(0, int)), 1.0)]:
        loss, grads = nn.combined_replay_loss(network, new, replay, alpha)
        assert loss == base_loss
        for a, b in zip(grads, base):
            np.testing.assert_array_equal(a, b)

    loss, grads = nn.combined_replay_loss(network, new, new, 1.0)
    assert loss == 2 * base_loss
    for a, b in zip(grads, base):
        np.testing.assert_array_equal(a, 2 * b)

    loss, grads = nn.combined_replay_loss(network, new, rep, 0.5)
    rep_loss, rep_grads = nn.loss_and_grads(network, *rep)
    assert loss == pytest.approx(base_loss + 0.5 * rep_loss)
    for g, a, b in zip(grads, base, rep_grads):
        np.testing.assert_allclose(g, a + 0.5 * b, rtol=1e-14, atol=1e-16)
