import math

import numpy as np
import pytest

from dexat_emg.errors import EmptyDataset, ShapeMismatch
from dexat_emg.network import Network, Topology, Weights, classify, forward, init_network, quantize_network
from dexat_emg.quantize import fake_quantize, quantize_matrix, round_half_away
from dexat_emg.trainer import (
    TrainConfig,
    batch_loss,
    bptt_grads,
    clip_gradients,
    confusion_matrix,
    evaluate,
    grad_norm,
    predict,
    quantize_weights,
    surrogate_gate,
    surrogate_grad,
    train,
)

TOY = Topology(n_in=6, m_lif=2, n_dexat=3, n_out=3)


def toy_batch(rng, B=4, T=10, n_in=6, p=0.4):
    X = (rng.random((B, n_in, T)) < p).astype(np.uint8)
    y = rng.integers(0, 3, size=B)
    return X, y


# ---------------------------------------------------------------------------
# surrogate


def test_surrogate_values():
    assert surrogate_grad(0.0) == pytest.approx(0.3)
    assert surrogate_grad(0.5) == pytest.approx(0.15)
    assert surrogate_grad(-0.5) == pytest.approx(0.15)
    assert surrogate_grad(1.0) == 0.0
    assert surrogate_grad(-3.0) == 0.0
    assert surrogate_grad(0.0, 0.5) == pytest.approx(0.5)
    assert surrogate_grad(1.0, 0.3, b0=2.0) == pytest.approx(0.15)


def test_surrogate_integral():
    dx = 1e-5
    x = np.arange(-2, 2, dx) + dx / 2  # midpoint rule
    area = float(np.sum(surrogate_grad(x)) * dx)
    assert area == pytest.approx(0.3, rel=1e-6)
    assert surrogate_gate(5.0) == pytest.approx(0.3)
    assert surrogate_gate(-5.0) == 0.0
    assert surrogate_gate(0.0) == pytest.approx(0.15)


def test_gate_derivative_is_surrogate(rng):
    x = rng.uniform(-1.5, 1.5, 200)
    h = 1e-6
    num = (surrogate_gate(x + h) - surrogate_gate(x - h)) / (2 * h)
    np.testing.assert_allclose(num, surrogate_grad(x), atol=1e-6)


# ---------------------------------------------------------------------------
# loss and gradients


def test_zero_readout_loss_is_ln3(rng):
    net = init_network(TOY, seed=0)
    net.weights.W_out[:] = 0.0
    X, y = toy_batch(rng)
    g, loss = bptt_grads(net, X, y)
    assert loss == pytest.approx(math.log(3), abs=1e-12)
    # uniform softmax: dL/dscore_k = 1/3 - [y == k]; the bias reaches the
    # score through the leaky readout, scaled by mean_t (1 - kappa^t)
    kappa = math.exp(-1 / net.readout.tau_out)
    gain = np.mean(1 - kappa ** np.arange(1, X.shape[2] + 1))
    expected = [gain * np.mean(1 / 3 - (y == k)) for k in range(3)]
    np.testing.assert_allclose(g.b_out, expected, rtol=1e-10, atol=1e-14)


def test_tape_scores_match_forward(rng):
    net = init_network(Topology(n_in=12, m_lif=5, n_dexat=8), seed=2, init_scale=3.0)
    X, y = toy_batch(rng, B=6, T=40, n_in=12)
    _, scores = classify(forward(net, X))
    logz = np.log(np.exp(scores).sum(axis=1))
    ref = float(np.mean(logz - scores[np.arange(6), y]))
    assert batch_loss(net, X, y) == pytest.approx(ref, rel=1e-12)


def _fd(net, X, y, name, idx, relaxed, h):
    W = getattr(net.weights, name)
    old = W[idx]
    W[idx] = old + h
    lp = batch_loss(net, X, y, relaxed=relaxed)
    W[idx] = old - h
    lm = batch_loss(net, X, y, relaxed=relaxed)
    W[idx] = old
    return (lp - lm) / (2 * h)


def test_readout_gradient_finite_difference(rng):
    net = init_network(Topology(n_in=12, m_lif=5, n_dexat=8), seed=3, init_scale=3.0)
    X, y = toy_batch(rng, B=5, T=30, n_in=12)
    g, _ = bptt_grads(net, X, y, clip_norm=None)
    for name in ("W_out", "b_out"):
        G = getattr(g, name)
        for idx in np.ndindex(G.shape):
            num = _fd(net, X, y, name, idx, False, 1e-5)
            assert abs(num - G[idx]) <= 1e-4 * max(1.0, abs(num)), (name, idx, num, G[idx])


def test_relaxed_gradient_finite_difference(rng):
    # 5 hidden neurons, 10 steps: the relaxed spike makes the loss smooth so
    # the backward pass must match central differences everywhere.
    topo = Topology(n_in=6, m_lif=2, n_dexat=3, n_out=3)
    net = init_network(topo, seed=4, init_scale=2.5)
    X, y = toy_batch(rng, B=3, T=10)
    g, _ = bptt_grads(net, X, y, clip_norm=None, relaxed=True)
    assert grad_norm(g) > 0
    checked = 0
    for name in ("W_in", "W_rec", "W_out", "b_out"):
        G = getattr(g, name)
        for idx in np.ndindex(G.shape):
            if name == "W_rec" and idx[0] == idx[1]:
                continue
            num = _fd(net, X, y, name, idx, True, 1e-6)
            assert abs(num - G[idx]) <= 1e-3 * max(1e-2, abs(num)) + 1e-8, (name, idx, num, G[idx])
            checked += 1
    assert checked == 5 * 6 + 20 + 15 + 3


def test_diagonal_gradient_zero(rng):
    net = init_network(TOY, seed=5, init_scale=3.0)
    X, y = toy_batch(rng)
    g, _ = bptt_grads(net, X, y)
    assert np.all(np.diag(g.W_rec) == 0)


def test_gradient_shapes_and_errors(rng):
    net = init_network(TOY, seed=0)
    X, y = toy_batch(rng)
    g, _ = bptt_grads(net, X, y)
    for k, v in net.weights.as_dict().items():
        assert g.as_dict()[k].shape == v.shape
    with pytest.raises(ShapeMismatch):
        bptt_grads(net, X[:, :5], y)
    with pytest.raises(EmptyDataset):
        bptt_grads(net, X[:0], y[:0])


def test_clip_gradients_direction(rng):
    g = Weights(*(rng.normal(size=s) * 10 for s in [(5, 6), (5, 5), (3, 5), (3,)]))
    c = clip_gradients(g, 10.0)
    assert grad_norm(c) == pytest.approx(10.0)
    ratio = c.W_in / g.W_in
    assert np.allclose(ratio, ratio.flat[0])
    small = clip_gradients(c, 100.0)
    assert small is c


# ---------------------------------------------------------------------------
# training loop


def _tiny_data(rng, N=24, T=20):
    X = (rng.random((N, 6, T)) < 0.3).astype(np.uint8)
    y = np.arange(N) % 3
    # give each class a distinct input channel so learning is possible
    for i in range(N):
        X[i, y[i], :] = 1
    return X, y


def test_zero_learning_rate_keeps_weights(rng):
    net = init_network(TOY, seed=1)
    before = {k: v.copy() for k, v in net.weights.as_dict().items()}
    X, y = _tiny_data(rng)
    _, hist = train(net, (X, y), (X, y), TrainConfig(epochs=2, learning_rate=0.0, batch_size=8))
    for k, v in net.weights.as_dict().items():
        assert v.tobytes() == before[k].tobytes()
    assert len(hist.loss) == 2


def test_training_deterministic_and_learns(rng):
    X, y = _tiny_data(rng)
    cfg = TrainConfig(epochs=15, learning_rate=0.05, batch_size=8, seed=3)
    a, ha = train(init_network(TOY, seed=2, init_scale=2.0), (X, y), (X, y), cfg)
    b, hb = train(init_network(TOY, seed=2, init_scale=2.0), (X, y), (X, y), cfg)
    assert ha.loss == hb.loss
    assert a.weights.W_rec.tobytes() == b.weights.W_rec.tobytes()
    assert ha.loss[-1] < ha.loss[0]
    assert max(ha.test_acc) == 1.0
    assert ha.best_weights is not None and 1 <= ha.best_epoch <= 15
    csv = ha.to_csv().splitlines()
    assert csv[0] == "epoch,train_acc,test_acc,loss" and len(csv) == 16


def test_train_empty():
    net = init_network(TOY, seed=0)
    with pytest.raises(EmptyDataset):
        train(net, (np.zeros((0, 6, 5)), np.zeros(0)), (np.zeros((1, 6, 5)), np.zeros(1)))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1)


# ---------------------------------------------------------------------------
# evaluation


class _Fixed:
    def __init__(self, preds):
        self.preds = np.asarray(preds)

    def __call__(self, X):
        return self.preds


def test_evaluate_examples():
    net = init_network(TOY, seed=0)
    labels = [0, 0, 1, 1, 2, 2]
    acc, cm = evaluate(net, np.zeros((6, 6, 3)), labels, _Fixed(labels))
    assert acc == 1.0 and np.array_equal(cm, 2 * np.eye(3, dtype=int))
    acc, cm = evaluate(net, np.zeros((6, 6, 3)), labels, _Fixed([0, 1, 1, 1, 2, 0]))
    assert acc == pytest.approx(4 / 6)
    assert cm.tolist() == [[1, 1, 0], [0, 2, 0], [1, 0, 1]]
    assert cm.sum() == 6
    with pytest.raises(EmptyDataset):
        evaluate(net, np.zeros((0, 6, 3)), [])


def test_predict_matches_classify(rng):
    net = init_network(TOY, seed=6, init_scale=3.0)
    X, _ = toy_batch(rng, B=10, T=20)
    p = predict(net, X, batch_size=3)
    assert p.tolist() == [classify(forward(net, x))[0] for x in X]


def test_confusion_rows():
    cm = confusion_matrix([2, 2, 0], [1, 2, 0])
    assert cm[2].sum() == 2 and cm[2, 1] == 1


# ---------------------------------------------------------------------------
# quantization


def test_quantize_examples():
    q, s = quantize_matrix(np.array([-1.0, 0.5, 1.0]))
    assert q.tolist() == [-127, 64, 127]
    assert s == pytest.approx(1 / 127)
    q, s = quantize_matrix(np.zeros((2, 2)))
    assert s == 1.0 and not q.any()
    assert round_half_away(np.array([-2.5, -0.5, 0.5, 1.5])).tolist() == [-3, -1, 1, 2]


def test_quantize_error_bound(rng):
    for _ in range(100):
        w = rng.normal(size=(7, 9)) * rng.uniform(0.01, 10)
        q, s = quantize_matrix(w)
        assert q.dtype == np.int8
        assert np.max(np.abs(q)) == 127
        assert np.all(np.abs(q * s - w) <= s / 2 + 1e-12)


def test_quantize_sign_symmetry(rng):
    w = rng.normal(size=50)
    q, s = quantize_matrix(w)
    qn, sn = quantize_matrix(-w)
    assert s == sn and np.array_equal(qn, -q)


def test_quantize_weights_bundle():
    net = init_network(TOY, seed=0)
    qw = quantize_weights(net.weights)
    W_in, _, _ = qw.dequantize()
    np.testing.assert_array_equal(W_in, fake_quantize(net.weights.W_in))


def test_qat_forward_equals_quantized_net(rng):
    net = init_network(Topology(n_in=12, m_lif=5, n_dexat=8), seed=7, init_scale=3.0)
    X, y = toy_batch(rng, B=5, T=30, n_in=12)
    qnet = quantize_network(net)
    _, loss_qat = bptt_grads(net, X, y, quant_aware=True)
    assert loss_qat == batch_loss(qnet, X, y)
    g_qat, _ = bptt_grads(net, X, y, quant_aware=True, clip_norm=None)
    g_q, _ = bptt_grads(qnet, X, y, clip_norm=None)
    # straight-through: gradient equals the gradient evaluated at the quantized point
    np.testing.assert_allclose(g_qat.W_in, g_q.W_in, rtol=0, atol=1e-12)
