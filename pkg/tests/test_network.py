import numpy as np
import pytest

from dexat_emg.encoder import SpikeRaster
from dexat_emg.errors import MalformedFile, ShapeMismatch
from dexat_emg.network import (
    Network,
    Topology,
    Weights,
    classify,
    forward,
    from_bytes,
    init_network,
    load_network,
    quantize_network,
    save_network,
    to_bytes,
)
from dexat_emg.neurons import DexatState, LifState, dexat_step, lif_step, readout_step

SMALL = Topology(n_in=12, m_lif=4, n_dexat=6, n_out=3)


def random_raster(rng, n_in, T, p=0.15, batch=None):
    shape = (n_in, T) if batch is None else (batch, n_in, T)
    return (rng.random(shape) < p).astype(np.uint8)


def test_init_shapes_and_zero_diagonal():
    net = init_network(Topology(), seed=0)
    w = net.weights
    assert w.W_in.shape == (150, 72)
    assert w.W_rec.shape == (150, 150)
    assert w.W_out.shape == (3, 150)
    assert np.all(np.diag(w.W_rec) == 0)
    assert np.all(w.b_out == 0)
    assert net.precision == "float"


def test_init_deterministic():
    a = init_network(SMALL, seed=5).weights
    b = init_network(SMALL, seed=5).weights
    c = init_network(SMALL, seed=6).weights
    assert all(np.array_equal(x, y) for x, y in zip(a.as_dict().values(), b.as_dict().values()))
    assert not np.array_equal(a.W_in, c.W_in)


def test_init_input_variance():
    vals = np.concatenate([init_network(Topology(n_in=72, m_lif=2, n_dexat=3), seed=s).weights.W_in.ravel()
                           for s in range(1000)])
    assert abs(vals.var() - 1 / 72) / (1 / 72) < 0.2
    assert abs(vals.mean()) < 0.01


def test_weights_validation():
    net = init_network(SMALL, seed=0)
    w = net.weights.copy()
    w.W_rec[0, 0] = 1.0
    with pytest.raises(ValueError):
        Network(SMALL, w)
    w = net.weights.copy()
    w.W_in = w.W_in[:, :-1]
    with pytest.raises(ShapeMismatch):
        Network(SMALL, w)


def test_zero_input_gives_zero_trace():
    net = init_network(Topology(), seed=1)
    tr = forward(net, np.zeros((72, 200), dtype=np.uint8), record_hidden=True)
    assert tr.y.shape == (3, 200)
    assert np.all(tr.y == 0)
    assert tr.spike_counts.sum() == 0
    assert tr.z.sum() == 0


def test_input_shape_errors():
    net = init_network(SMALL, seed=0)
    with pytest.raises(ShapeMismatch):
        forward(net, np.zeros((11, 5)))
    with pytest.raises(ShapeMismatch):
        forward(net, np.zeros((12, 0)))


def test_forward_deterministic(rng):
    net = init_network(Topology(), seed=2, init_scale=3.0)
    x = random_raster(rng, 72, 200)
    a = forward(net, x)
    b = forward(net, x)
    assert a.y.tobytes() == b.y.tobytes()
    assert np.array_equal(a.spike_counts, b.spike_counts)
    assert a.spike_counts.sum() > 0


def test_no_recurrence_matches_per_neuron_oracle(rng):
    net = init_network(SMALL, seed=3, init_scale=4.0)
    net.weights.W_rec[:] = 0.0
    x = random_raster(rng, 12, 80, p=0.3)
    tr = forward(net, x, record_hidden=True)
    cur = net.weights.W_in @ x.astype(float)
    m = SMALL.m_lif
    z_ref = np.zeros((SMALL.n_hidden, 80), dtype=np.uint8)
    for j in range(SMALL.n_hidden):
        st = LifState() if j < m else DexatState()
        for t in range(80):
            if j < m:
                st, s = lif_step(st, cur[j, t], net.lif)
            else:
                st, s = dexat_step(st, cur[j, t], net.dexat)
            z_ref[j, t] = s
    assert z_ref.sum() > 0
    np.testing.assert_array_equal(tr.z, z_ref)
    y = np.zeros(3)
    for t in range(80):
        y = readout_step(y, net.weights.W_out @ z_ref[:, t], net.readout, net.weights.b_out)
        np.testing.assert_allclose(tr.y[:, t], y, rtol=1e-12, atol=1e-12)


def test_recurrence_uses_previous_step():
    # One input drives LIF 0 over threshold at t=0; its recurrent effect on
    # LIF 1 must appear at t=1, not t=0.
    topo = Topology(n_in=1, m_lif=2, n_dexat=1, n_out=1)
    W_in = np.array([[2.0], [0.0], [0.0]])
    W_rec = np.zeros((3, 3))
    W_rec[1, 0] = 2.0
    net = Network(topo, Weights(W_in, W_rec, np.ones((1, 3)), np.zeros(1)))
    x = np.zeros((1, 4), dtype=np.uint8)
    x[0, 0] = 1
    tr = forward(net, x, record_hidden=True)
    assert tr.z[:, 0].tolist() == [1, 0, 0]
    assert tr.z[:, 1].tolist() == [0, 1, 0]


def test_reset_and_digest(rng):
    net = init_network(SMALL, seed=4, init_scale=3.0)
    x = random_raster(rng, 12, 50, p=0.3)
    fresh = net.state.digest()
    forward(net, x)
    after = net.state.digest()
    assert after != fresh and net.state.t == 50
    a = forward(net, x)
    assert net.state.digest() == after
    # continuing without reset is the same as running the concatenated input
    x2 = random_raster(rng, 12, 30, p=0.3)
    forward(net, x)
    cont = forward(net, x2, reset=False)
    whole = forward(net, np.concatenate([x, x2], axis=1))
    np.testing.assert_array_equal(cont.y, whole.y[:, 50:])
    np.testing.assert_array_equal(a.y, whole.y[:, :50])


def test_causality(rng):
    net = init_network(SMALL, seed=5, init_scale=3.0)
    x = random_raster(rng, 12, 60, p=0.3)
    x2 = x.copy()
    x2[:, 40:] = random_raster(rng, 12, 20, p=0.5)
    a, b = forward(net, x).y, forward(net, x2).y
    np.testing.assert_array_equal(a[:, :40], b[:, :40])


def test_batch_equals_loop(rng):
    net = init_network(SMALL, seed=6, init_scale=3.0)
    xb = random_raster(rng, 12, 40, p=0.3, batch=5)
    tb = forward(net, xb)
    for i in range(5):
        np.testing.assert_allclose(tb.y[i], forward(net, xb[i]).y, rtol=0, atol=1e-12)


def test_hidden_permutation_equivariance(rng):
    net = init_network(SMALL, seed=7, init_scale=3.0)
    x = random_raster(rng, 12, 60, p=0.3)
    base = forward(net, x, record_hidden=True)
    # permute within each neuron type so LIF-first ordering is kept
    perm = np.concatenate([rng.permutation(4), 4 + rng.permutation(6)])
    w = net.weights
    pw = Weights(w.W_in[perm], w.W_rec[np.ix_(perm, perm)], w.W_out[:, perm], w.b_out)
    pnet = Network(SMALL, pw, net.lif, net.dexat, net.readout)
    tr = forward(pnet, x, record_hidden=True)
    np.testing.assert_array_equal(tr.z, base.z[perm])
    np.testing.assert_allclose(tr.y, base.y, rtol=1e-12, atol=1e-12)


def test_spike_raster_input(rng):
    net = init_network(SMALL, seed=8)
    x = random_raster(rng, 12, 20)
    np.testing.assert_array_equal(forward(net, SpikeRaster(x)).y, forward(net, x).y)


def test_classify_scores_and_ties():
    y = np.array([[1.0, 3.0], [2.0, 2.0], [0.0, 0.0]])
    cls, scores = classify(y)
    np.testing.assert_allclose(scores, [2.0, 2.0, 0.0])
    assert cls == 0
    cls, _ = classify(y * 5.0)
    assert cls == 0
    cls, _ = classify(np.stack([y, y[::-1]]))
    assert cls.tolist() == [0, 1]
    with pytest.raises(ShapeMismatch):
        classify(np.zeros((3, 0)))


def test_classify_scale_invariant(rng):
    for _ in range(100):
        y = rng.normal(size=(3, 20))
        assert classify(y)[0] == classify(y * rng.uniform(0.1, 10))[0]


def test_serialization_round_trip_float(tmp_path, rng):
    net = init_network(SMALL, seed=9, init_scale=3.0)
    p = tmp_path / "n.rsnn"
    save_network(net, p)
    back = load_network(p)
    assert back.topology == net.topology and back.dexat == net.dexat and back.lif == net.lif
    for k, v in net.weights.as_dict().items():
        assert np.array_equal(v, back.weights.as_dict()[k])
    x = random_raster(rng, 12, 40, p=0.3)
    assert forward(net, x).y.tobytes() == forward(back, x).y.tobytes()
    assert to_bytes(back) == to_bytes(net)


def test_serialization_round_trip_quant(rng):
    net = quantize_network(init_network(SMALL, seed=10, init_scale=3.0))
    assert net.precision == "quant8"
    back = from_bytes(to_bytes(net))
    assert back.precision == "quant8"
    assert np.array_equal(back.quantized.q_rec, net.quantized.q_rec)
    x = random_raster(rng, 12, 40, p=0.3)
    assert forward(net, x).y.tobytes() == forward(back, x).y.tobytes()


def test_serialization_errors():
    blob = to_bytes(init_network(SMALL, seed=0))
    with pytest.raises(MalformedFile):
        from_bytes(blob[:-1])
    with pytest.raises(MalformedFile):
        from_bytes(blob + b"\0")
    with pytest.raises(MalformedFile):
        from_bytes(b"XXXX" + blob[4:])
