"""Surrogate-gradient BPTT, Adam training, evaluation and 8-bit quantization.

The training simulator treats every hidden neuron as a DEXAT unit: LIF
neurons are the special case ``beta1 = beta2 = 0`` with base threshold
``v_th``.  Spikes are Heaviside in the forward pass; the backward pass uses a
triangular pseudo-derivative.  With ``relaxed=True`` the forward gate is the
integral of that pseudo-derivative, which makes the computed gradient the
exact gradient of a smooth model (used for finite-difference checks).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import EmptyDataset, NonFiniteLoss, ShapeMismatch
from .network import Network, Weights, classify, forward, quantize_network
from .quantize import QuantizedWeights, fake_quantize, quantize_matrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 450
    learning_rate: float = 1e-2
    batch_size: int = 16
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip_norm: float = 10.0
    surrogate_dampening: float = 0.3
    quant_aware: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainHistory:
    train_acc: list = field(default_factory=list)
    test_acc: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    best_epoch: int = -1
    best_weights: Optional[Weights] = None

    def rows(self):
        for i, (tr, te, lo) in enumerate(zip(self.train_acc, self.test_acc, self.loss), start=1):
            yield i, tr, te, lo

    def to_csv(self) -> str:
        lines = ["epoch,train_acc,test_acc,loss"]
        lines += [f"{e},{tr!r},{te!r},{lo!r}" for e, tr, te, lo in self.rows()]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# surrogate


def surrogate_grad(v_minus_A, gamma_pd: float = 0.3, b0=1.0):
    """Triangular pseudo-derivative ``gamma * max(0, 1 - |x|/b0)``."""
    x = np.asarray(v_minus_A, dtype=np.float64)
    out = gamma_pd * np.maximum(0.0, 1.0 - np.abs(x) / b0)
    return out.item() if out.ndim == 0 else out


def surrogate_gate(v_minus_A, gamma_pd: float = 0.3, b0=1.0):
    """Antiderivative of `surrogate_grad`, zero below ``-b0``; the relaxed spike."""
    x = np.clip(np.asarray(v_minus_A, dtype=np.float64) / b0, -1.0, 1.0)
    # integral of max(0, 1-|s|) from -1 to x, in units of b0
    area = np.where(x <= 0, 0.5 * (1 + x) ** 2, 0.5 + x - 0.5 * x * x)
    out = gamma_pd * b0 * area
    return out.item() if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# batched simulator with tape


@dataclass
class _NeuronVectors:
    alpha: np.ndarray
    base: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray
    rho1: np.ndarray
    rho2: np.ndarray
    refractory: np.ndarray

    @classmethod
    def of(cls, net: Network) -> "_NeuronVectors":
        m, n = net.topology.m_lif, net.topology.n_dexat
        lif, dex = net.lif, net.dexat

        def cat(a, b):
            return np.concatenate([np.full(m, a, dtype=np.float64), np.full(n, b, dtype=np.float64)])

        return cls(
            alpha=cat(lif.alpha, dex.alpha),
            base=cat(lif.v_th, dex.b0),
            beta1=cat(0.0, dex.beta1),
            beta2=cat(0.0, dex.beta2),
            rho1=cat(0.0, dex.rho1),
            rho2=cat(0.0, dex.rho2),
            refractory=cat(lif.refractory_steps, dex.refractory_steps).astype(np.int64),
        )


@dataclass
class _Tape:
    x: np.ndarray        # (T, B, n_in)
    z: np.ndarray        # (T, B, H)
    v_pre: np.ndarray    # (T, B, H)
    u: np.ndarray        # (T, B, H) v_pre - A
    allowed: np.ndarray  # (T, B, H) 1 where not refractory
    scores: np.ndarray   # (B, n_out)


def _simulate(net: Network, W: Weights, X: np.ndarray, gamma: float, relaxed: bool) -> _Tape:
    nv = _NeuronVectors.of(net)
    B, n_in, T = X.shape
    H = net.topology.n_hidden
    kappa = net.readout.kappa
    xs = np.ascontiguousarray(np.transpose(X, (2, 0, 1)), dtype=np.float64)
    z_tape = np.empty((T, B, H))
    v_tape = np.empty((T, B, H))
    u_tape = np.empty((T, B, H))
    a_tape = np.empty((T, B, H))
    v = np.zeros((B, H))
    b1 = np.zeros((B, H))
    b2 = np.zeros((B, H))
    refrac = np.zeros((B, H), dtype=np.int64)
    z = np.zeros((B, H))
    y = np.zeros((B, W.W_out.shape[0]))
    ysum = np.zeros_like(y)
    W_in_T, W_rec_T, W_out_T = W.W_in.T, W.W_rec.T, W.W_out.T
    bias_term = W.b_out * (1.0 - kappa)
    for t in range(T):
        current = xs[t] @ W_in_T + z @ W_rec_T
        threshold = nv.base + nv.beta1 * b1 + nv.beta2 * b2
        v_pre = nv.alpha * v + current
        u = v_pre - threshold
        allowed = (refrac == 0).astype(np.float64)
        if relaxed:
            z = allowed * surrogate_gate(u, gamma, nv.base)
        else:
            z = allowed * (u > 0)
        v = v_pre * (1.0 - z)
        b1 = nv.rho1 * b1 + (1.0 - nv.rho1) * z
        b2 = nv.rho2 * b2 + (1.0 - nv.rho2) * z
        if np.any(nv.refractory):
            fired = z > 0.5
            refrac = np.where(fired, nv.refractory, np.maximum(refrac - 1, 0))
        y = kappa * y + z @ W_out_T + bias_term
        ysum += y
        z_tape[t], v_tape[t], u_tape[t], a_tape[t] = z, v_pre, u, allowed
    return _Tape(xs, z_tape, v_tape, u_tape, a_tape, ysum / T)


def _softmax_xent(scores: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    shifted = scores - scores.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted - logz[:, None]
    B = scores.shape[0]
    loss = -float(np.mean(logp[np.arange(B), labels]))
    p = np.exp(logp)
    p[np.arange(B), labels] -= 1.0
    return loss, p / B


def _backward(net: Network, W: Weights, tape: _Tape, d_scores: np.ndarray, gamma: float) -> Weights:
    nv = _NeuronVectors.of(net)
    T, B, H = tape.z.shape
    kappa = net.readout.kappa
    gW_in = np.zeros_like(W.W_in)
    gW_rec = np.zeros_like(W.W_rec)
    gW_out = np.zeros_like(W.W_out)
    gy_sum = np.zeros(W.W_out.shape[0])
    gy_share = d_scores / T
    gy = np.zeros_like(d_scores)
    gv = np.zeros((B, H))
    gb1 = np.zeros((B, H))
    gb2 = np.zeros((B, H))
    gI_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        z, v_pre, u = tape.z[t], tape.v_pre[t], tape.u[t]
        gy = gy_share + kappa * gy
        gW_out += gy.T @ z
        gy_sum += gy.sum(axis=0)
        gz = (gy @ W.W_out + gI_next @ W.W_rec - gv * v_pre
              + gb1 * (1.0 - nv.rho1) + gb2 * (1.0 - nv.rho2))
        gu = gz * tape.allowed[t] * surrogate_grad(u, gamma, nv.base)
        gI = gv * (1.0 - z) + gu
        gW_in += gI.T @ tape.x[t]
        if t > 0:
            gW_rec += gI.T @ tape.z[t - 1]
        gv = nv.alpha * gI
        gb1 = nv.rho1 * gb1 - nv.beta1 * gu
        gb2 = nv.rho2 * gb2 - nv.beta2 * gu
        gI_next = gI
    if not net.topology.self_recurrence_allowed:
        np.fill_diagonal(gW_rec, 0.0)
    return Weights(gW_in, gW_rec, gW_out, gy_sum * (1.0 - kappa))


def _forward_weights(net: Network, quant_aware: bool) -> Weights:
    w = net.weights
    if not quant_aware:
        return w
    return Weights(fake_quantize(w.W_in), fake_quantize(w.W_rec), fake_quantize(w.W_out), w.b_out)


def grad_norm(g: Weights) -> float:
    return math.sqrt(sum(float(np.sum(a * a)) for a in g.as_dict().values()))


def clip_gradients(g: Weights, max_norm: float) -> Weights:
    norm = grad_norm(g)
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return g
    s = max_norm / norm
    return Weights(*(a * s for a in (g.W_in, g.W_rec, g.W_out, g.b_out)))


def bptt_grads(net: Network, X: np.ndarray, labels, gamma_pd: float = 0.3,
               clip_norm: Optional[float] = 10.0, relaxed: bool = False,
               quant_aware: bool = False) -> tuple[Weights, float]:
    """Batch-mean softmax cross-entropy and its BPTT gradient w.r.t. all weights.

    ``X`` is (B, n_in, T) or a single (n_in, T) raster; ``labels`` has length B.
    With ``quant_aware`` the forward pass uses fake-quantized weights and the
    gradient passes straight through to the float weights.
    """
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if X.shape[0] == 0:
        raise EmptyDataset("empty batch")
    if X.ndim != 3 or X.shape[1] != net.topology.n_in or labels.shape != (X.shape[0],):
        raise ShapeMismatch(f"batch shape {X.shape} / labels {labels.shape} do not match the network")
    W = _forward_weights(net, quant_aware)
    tape = _simulate(net, W, X, gamma_pd, relaxed)
    loss, d_scores = _softmax_xent(tape.scores, labels)
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"loss={loss}; score range [{tape.scores.min()}, {tape.scores.max()}]")
    grads = _backward(net, W, tape, d_scores, gamma_pd)
    if clip_norm is not None:
        grads = clip_gradients(grads, clip_norm)
    return grads, loss


def batch_loss(net: Network, X: np.ndarray, labels, gamma_pd: float = 0.3, relaxed: bool = False) -> float:
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None]
    tape = _simulate(net, net.weights, X, gamma_pd, relaxed)
    return _softmax_xent(tape.scores, np.atleast_1d(np.asarray(labels, dtype=np.int64)))[0]


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    def __init__(self, params: Weights, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.as_dict().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.as_dict().items()}
        self.t = 0

    def step(self, params: Weights, grads: Weights) -> None:
        self.t += 1
        if self.lr == 0:
            return
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in params.as_dict().items():
            g = getattr(grads, k)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


# ---------------------------------------------------------------------------
# evaluation and training


def predict(net: Network, X: np.ndarray, batch_size: int = 64) -> np.ndarray:
    X = np.asarray(X)
    out = []
    for i in range(0, len(X), batch_size):
        cls, _ = classify(forward(net, X[i:i + batch_size]))
        out.append(np.atleast_1d(cls))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def confusion_matrix(labels, predictions, n_classes: int = 3) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(predictions)), 1)
    return cm


def evaluate(net: Network, X: np.ndarray, labels, predictor: Optional[Callable] = None) -> tuple[float, np.ndarray]:
    """Accuracy and confusion matrix (rows true class, columns predicted)."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    preds = predictor(X) if predictor is not None else predict(net, X)
    cm = confusion_matrix(labels, preds, net.topology.n_out)
    return float(np.trace(cm)) / len(labels), cm


def _deployed(net: Network, quant_aware: bool) -> Network:
    return quantize_network(net) if quant_aware else net


def train(net: Network, train_set: tuple[np.ndarray, np.ndarray], test_set: tuple[np.ndarray, np.ndarray],
          cfg: TrainConfig = TrainConfig(),
          on_epoch: Optional[Callable[[int, float, float, float], None]] = None) -> tuple[Network, TrainHistory]:
    """Mini-batch Adam over shuffled encoded windows.

    ``train_set``/``test_set`` are ``(X, labels)`` pairs with X of shape
    (N, n_in, T).  The network's float weights are updated in place and
    returned.  Accuracy is measured on the deployed network (quantized when
    ``cfg.quant_aware``).
    """
    X_tr, y_tr = (np.asarray(a) for a in train_set)
    X_te, y_te = (np.asarray(a) for a in test_set)
    if len(X_tr) == 0 or len(X_te) == 0:
        raise EmptyDataset("train and test sets must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(net.weights, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    hist = TrainHistory()
    best = -1.0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(X_tr))
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            grads, loss = bptt_grads(net, X_tr[idx], y_tr[idx], cfg.surrogate_dampening,
                                     cfg.grad_clip_norm, quant_aware=cfg.quant_aware)
            opt.step(net.weights, grads)
            losses.append(loss * len(idx))
        deployed = _deployed(net, cfg.quant_aware)
        tr_acc, _ = evaluate(deployed, X_tr, y_tr)
        te_acc, _ = evaluate(deployed, X_te, y_te)
        mean_loss = float(sum(losses) / len(X_tr))
        hist.train_acc.append(tr_acc)
        hist.test_acc.append(te_acc)
        hist.loss.append(mean_loss)
        if te_acc > best:
            best = te_acc
            hist.best_epoch = epoch
            hist.best_weights = net.weights.copy()
        log.info("epoch %d loss %.4f train %.3f test %.3f", epoch, mean_loss, tr_acc, te_acc)
        if on_epoch is not None:
            on_epoch(epoch, tr_acc, te_acc, mean_loss)
    return net, hist


def quantize_weights(w: Weights, bits: int = 8) -> QuantizedWeights:
    q_in, s_in = quantize_matrix(w.W_in, bits)
    q_rec, s_rec = quantize_matrix(w.W_rec, bits)
    q_out, s_out = quantize_matrix(w.W_out, bits)
    return QuantizedWeights(q_in, q_rec, q_out, s_in, s_rec, s_out, np.array(w.b_out, dtype=np.float64))
