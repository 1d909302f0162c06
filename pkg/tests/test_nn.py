import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from homeonet import nn


def tiny_net():
    net = nn.MLP.zeros((2, 2, 3))
    net.weights[0][...] = [[1.0, -1.0], [0.5, 2.0]]
    net.biases[0][...] = [0.0, -1.0]
    net.weights[1][...] = [[1.0, 0.0, -1.0], [2.0, 1.0, 0.0]]
    net.biases[1][...] = [0.1, 0.0, 0.0]
    return net


# values below were computed with mpmath at 30 digits

def test_elu_values():
    assert nn.elu(2.5) == 2.5
    assert nn.elu(0.0) == 0.0
    assert nn.elu(-1.0) == pytest.approx(-0.632120558828557678, abs=1e-16)
    assert nn.elu_grad(-2.0) == pytest.approx(0.135335283236612692, abs=1e-16)
    assert nn.elu_grad(3.0) == 1.0


def test_elu_grad_at_zero_is_right_derivative():
    assert nn.elu_grad(0.0) == 1.0
    assert np.array_equal(nn.elu_grad(np.array([-0.0, 0.0])), [1.0, 1.0])


def test_elu_large_negative_is_finite():
    x = np.array([-1e4, -800.0])
    assert np.array_equal(nn.elu(x), [-1.0, -1.0])
    assert np.all(np.isfinite(nn.elu_grad(x)))


def test_softmax_xent_frozen():
    loss, d = nn.softmax_xent(np.array([[1.0, 2.0, 3.0]]), np.array([2]))
    assert loss == pytest.approx(0.407605964444380304, abs=1e-15)
    p = nn.softmax(np.array([[0.5, -1.25, 2.0, 0.0]]))
    assert p[0] == pytest.approx([0.159693550032108222, 0.0277505779326804038,
                                  0.715696837782384341, 0.0968590342528270326], abs=1e-15)
    loss, _ = nn.softmax_xent(np.array([[0.5, -1.25, 2.0, 0.0]]), np.array([0]))
    assert loss == pytest.approx(1.83449861260366262, abs=1e-14)


def test_softmax_xent_large_logits_stable():
    loss, d = nn.softmax_xent(np.array([[1000.0, 1001.0, 1002.0]]), np.array([2]))
    assert loss == pytest.approx(0.407605964444380304, abs=1e-12)
    assert np.all(np.isfinite(d))


def test_forward_hand_computed():
    logits = nn.forward(tiny_net(), np.array([1.0, 0.5]))
    assert logits[0] == pytest.approx([0.0857588823428846432, -0.632120558828557678, -1.25],
                                      abs=1e-15)
    loss, _ = nn.softmax_xent(logits, np.array([0]))
    assert loss == pytest.approx(0.560040887884725951, abs=1e-15)


def test_he_init_statistics(rng):
    net = nn.init_mlp(nn.DEFAULT_DIMS, rng)
    w = net.weights[0]
    assert w.shape == (784, 80)
    assert np.var(w) == pytest.approx(2 / 784, rel=0.05)
    assert abs(np.mean(w)) < 0.003
    assert all(np.all(b == 0) for b in net.biases)
    assert net.params.dtype == np.float64


def test_init_is_seeded():
    a = nn.init_mlp(rng=np.random.default_rng(7))
    b = nn.init_mlp(rng=np.random.default_rng(7))
    assert a == b


def test_dimension_mismatch_rejected():
    net = nn.init_mlp((4, 3, 10), np.random.default_rng(0))
    with pytest.raises(nn.ConfigurationError):
        nn.forward(net, np.zeros(5))
    with pytest.raises(nn.ConfigurationError):
        nn.MLP((4, 3, 10), np.zeros(7))


def test_check_batch():
    nn.check_batch(np.zeros((2, 3)), np.array([0, 9]))
    with pytest.raises(ValueError):
        nn.check_batch(np.full((1, 3), 1.5), np.array([0]))
    with pytest.raises(ValueError):
        nn.check_batch(np.zeros((1, 3)), np.array([10]))
    with pytest.raises(ValueError):
        nn.check_batch(np.zeros((0, 3)), np.array([], dtype=int))


def test_sgd_step_arithmetic():
    net = nn.MLP.zeros((1, 1))
    net.weights[0][0, 0] = 1.0
    g = nn.Gradients([np.array([[0.5]])], [np.array([0.0])])
    nn.sgd_step(net, g, 0.005)
    assert net.weights[0][0, 0] == 0.9975


def test_sgd_zero_gradient_leaves_params(rng):
    net = nn.init_mlp((5, 4, 10), rng)
    before = net.params.copy()
    _, g = nn.backward(net, rng.random((3, 5)), np.array([1, 2, 3]))
    g = nn.Gradients([w * 0 for w in g.weights], [b * 0 for b in g.biases])
    nn.sgd_step(net, g, 0.1)
    assert np.array_equal(net.params, before)


def test_sgd_step_reversible(rng):
    net = nn.init_mlp((6, 5, 10), rng)
    before = net.params.copy()
    _, g = nn.backward(net, rng.random((2, 6)), np.array([4, 7]))
    nn.sgd_step(net, g, 0.01)
    nn.sgd_step(net, g, -0.01)
    np.testing.assert_allclose(net.params, before, rtol=1e-12, atol=1e-15)


def test_sgd_rejects_non_finite(rng):
    net = nn.init_mlp((3, 2, 10), rng)
    _, g = nn.backward(net, rng.random((1, 3)), np.array([0]))
    g.weights[0][0, 0] = np.nan
    with pytest.raises(nn.NonFiniteError):
        nn.sgd_step(net, g, 0.1)


def test_snapshot_isolation(rng):
    net = nn.init_mlp((8, 6, 10), rng)
    x = rng.random((4, 8))
    out = nn.forward(net, x)
    copy = nn.snapshot(net)
    assert copy == net
    for _ in range(10):
        _, g = nn.backward(copy, x, np.array([0, 1, 2, 3]))
        nn.sgd_step(copy, g, 0.1)
    assert np.array_equal(nn.forward(net, x), out)
    assert copy != net
    nn.restore(copy, net)
    assert np.array_equal(copy.params, net.params)
    assert nn.snapshot(net) == nn.snapshot(net)


def test_evaluate_constant_predictor():
    net = nn.MLP.zeros((4, 10))
    net.biases[0][3] = 5.0
    x = np.zeros((6, 4))
    perm = np.arange(10)
    perm[[3, 8]] = [8, 3]
    acc, _ = nn.evaluate(net, x, np.full(6, 8), perm)
    assert acc == 1.0


def test_evaluate_random_guessing_near_chance(rng):
    net = nn.init_mlp((20, 10), rng)
    x = rng.random((5000, 20))
    acc, _ = nn.evaluate(net, x, rng.integers(0, 10, 5000))
    assert abs(acc - 0.1) < 0.02


def test_evaluate_double_swap_is_identity(rng):
    net = nn.init_mlp((12, 8, 10), rng)
    x = rng.random((50, 12))
    y = rng.integers(0, 10, 50)
    perm = np.arange(10)
    twice = perm.copy()
    twice[[2, 6]] = twice[[6, 2]]
    twice[[2, 6]] = twice[[6, 2]]
    assert nn.evaluate(net, x, y, perm) == nn.evaluate(net, x, y, twice)


def test_evaluate_empty_rejected():
    with pytest.raises(ValueError):
        nn.evaluate(nn.MLP.zeros((3, 10)), np.zeros((0, 3)), np.array([], dtype=int))


def test_gradcheck_small_nets(rng):
    for dims in [(3, 4, 10), (5, 3, 2, 10), (784, 80, 60, 10)]:
        net = nn.init_mlp(dims, rng)
        x = rng.random((3, dims[0]))
        y = rng.integers(0, 10, 3)
        assert nn.gradcheck(net, x, y, max_coords=100, rng=rng) <= 1e-4


def test_gradcheck_detects_wrong_gradient(rng, monkeypatch):
    net = nn.init_mlp((4, 3, 10), rng)
    real = nn.elu_grad
    monkeypatch.setattr(nn, "elu_grad", lambda z: real(z) * 1.1)
    x = rng.random((2, 4)) - 0.5
    assert nn.gradcheck(net, x, np.array([1, 2])) > 1e-3


@given(hnp.arrays(np.float64, (3, 5), elements=st.floats(-50, 50)),
       st.lists(st.integers(0, 4), min_size=3, max_size=3))
def test_softmax_rows_and_loss_sign(logits, labels):
    p = nn.softmax(logits)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    loss, _ = nn.softmax_xent(logits, np.array(labels))
    assert loss >= 0.0


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_batch_mean_linearity(n1, n2, seed):
    rng = np.random.default_rng(seed)
    net = nn.init_mlp((6, 5, 10), rng)
    x1, x2 = rng.random((n1, 6)), rng.random((n2, 6))
    y1, y2 = rng.integers(0, 10, n1), rng.integers(0, 10, n2)
    l1, _ = nn.softmax_xent(nn.forward(net, x1), y1)
    l2, _ = nn.softmax_xent(nn.forward(net, x2), y2)
    l12, _ = nn.softmax_xent(nn.forward(net, np.vstack([x1, x2])), np.concatenate([y1, y2]))
    assert l12 == pytest.approx((n1 * l1 + n2 * l2) / (n1 + n2), rel=1e-12)


def test_training_trajectory_deterministic():
    def run():
        rng = np.random.default_rng(3)
        net = nn.init_mlp((10, 8, 10), rng)
        for _ in range(50):
            x = rng.random((1, 10))
            _, g = nn.backward(net, x, rng.integers(0, 10, 1))
            nn.sgd_step(net, g, 0.05)
        return net.params
    assert np.array_equal(run(), run())
