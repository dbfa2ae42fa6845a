"""Hybrid LIF/DEXAT recurrent spiking network: construction, simulation, I/O.

Hidden neurons are indexed LIF first, then DEXAT.  Recurrent input at step t
comes from hidden spikes at t-1 (z[-1] = 0).  The readout integrates hidden
spikes and a class is chosen by the time-mean of the readout trajectory.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .encoder import SpikeRaster
from .errors import MalformedFile, ShapeMismatch
from .neurons import (
    DexatParams,
    DexatState,
    LifParams,
    LifState,
    ReadoutParams,
    dexat_step,
    lif_step,
    readout_step,
)
from .quantize import QuantizedWeights, quantize_matrix


@dataclass(frozen=True)
class Topology:
    n_in: int = 72
    m_lif: int = 50
    n_dexat: int = 100
    n_out: int = 3
    self_recurrence_allowed: bool = False

    def __post_init__(self):
        if min(self.n_in, self.m_lif, self.n_dexat, self.n_out) <= 0:
            raise ValueError("all topology counts must be positive")

    @property
    def n_hidden(self) -> int:
        return self.m_lif + self.n_dexat


@dataclass
class Weights:
    W_in: np.ndarray
    W_rec: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray

    def copy(self) -> "Weights":
        return Weights(self.W_in.copy(), self.W_rec.copy(), self.W_out.copy(), self.b_out.copy())

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"W_in": self.W_in, "W_rec": self.W_rec, "W_out": self.W_out, "b_out": self.b_out}

    def validate(self, topo: Topology) -> None:
        H = topo.n_hidden
        expected = {
            "W_in": (H, topo.n_in),
            "W_rec": (H, H),
            "W_out": (topo.n_out, H),
            "b_out": (topo.n_out,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ShapeMismatch(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        if not topo.self_recurrence_allowed and np.any(np.diag(self.W_rec) != 0):
            raise ValueError("W_rec diagonal must be zero when self-recurrence is disallowed")


@dataclass
class NetworkState:
    lif: LifState
    dexat: DexatState
    y: np.ndarray
    z: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, topo: Topology, batch: Optional[int] = None) -> "NetworkState":
        lead = () if batch is None else (batch,)
        m, n = topo.m_lif, topo.n_dexat
        return cls(
            LifState(np.zeros(lead + (m,)), np.zeros(lead + (m,), dtype=np.int64)),
            DexatState(np.zeros(lead + (n,)), np.zeros(lead + (n,)), np.zeros(lead + (n,)),
                       np.zeros(lead + (n,), dtype=np.int64)),
            np.zeros(lead + (topo.n_out,)),
            np.zeros(lead + (topo.n_hidden,)),
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (*self.lif, *self.dexat, self.y, self.z):
            a = np.ascontiguousarray(arr)
            h.update(str(a.dtype).encode() + str(a.shape).encode() + a.tobytes())
        h.update(struct.pack("<q", self.t))
        return h.hexdigest()


@dataclass
class Network:
    topology: Topology
    weights: Weights
    lif: LifParams = field(default_factory=LifParams)
    dexat: DexatParams = field(default_factory=DexatParams)
    readout: ReadoutParams = field(default_factory=ReadoutParams)
    quantized: Optional[QuantizedWeights] = None
    state: Optional[NetworkState] = None

    def __post_init__(self):
        self.weights.validate(self.topology)
        if self.state is None:
            self.state = NetworkState.zeros(self.topology)

    @property
    def precision(self) -> str:
        return "float" if self.quantized is None else "quant8"


@dataclass
class ForwardTrace:
    y: np.ndarray
    spike_counts: np.ndarray
    z: Optional[np.ndarray] = None

    @property
    def timesteps(self) -> int:
        return self.y.shape[-1]


def init_network(
    topo: Topology = Topology(),
    seed: int = 0,
    lif: LifParams = LifParams(),
    dexat: DexatParams = DexatParams(),
    readout: ReadoutParams = ReadoutParams(),
    init_scale: float = 1.0,
) -> Network:
    """Gaussian weights with std ``init_scale / sqrt(fan_in)``, zero readout bias."""
    rng = np.random.default_rng(seed)
    H = topo.n_hidden
    W_in = rng.standard_normal((H, topo.n_in)) * (init_scale / np.sqrt(topo.n_in))
    W_rec = rng.standard_normal((H, H)) * (init_scale / np.sqrt(H))
    W_out = rng.standard_normal((topo.n_out, H)) * (init_scale / np.sqrt(H))
    if not topo.self_recurrence_allowed:
        np.fill_diagonal(W_rec, 0.0)
    return Network(topo, Weights(W_in, W_rec, W_out, np.zeros(topo.n_out)), lif, dexat, readout)


def reset_state(net: Network) -> None:
    net.state = NetworkState.zeros(net.topology)


def quantize_network(net: Network, bits: int = 8) -> Network:
    """Copy of ``net`` whose weights are the dequantized 8-bit codes of its float weights."""
    w = net.weights
    q_in, s_in = quantize_matrix(w.W_in, bits)
    q_rec, s_rec = quantize_matrix(w.W_rec, bits)
    q_out, s_out = quantize_matrix(w.W_out, bits)
    qw = QuantizedWeights(q_in, q_rec, q_out, s_in, s_rec, s_out, w.b_out.copy())
    return with_quantized(net, qw)


def with_quantized(net: Network, qw: QuantizedWeights) -> Network:
    W_in, W_rec, W_out = qw.dequantize()
    return replace(net, weights=Weights(W_in, W_rec, W_out, qw.b_out.copy()), quantized=qw, state=None)


def _as_input(net: Network, raster) -> tuple[np.ndarray, bool]:
    x = raster.bits if isinstance(raster, SpikeRaster) else np.asarray(raster)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1] != net.topology.n_in:
        raise ShapeMismatch(f"input must have {net.topology.n_in} rows, got shape {x.shape}")
    if x.shape[2] < 1:
        raise ShapeMismatch("input must have at least one timestep")
    return x.astype(np.float64), single


def forward(net: Network, raster: Union[SpikeRaster, np.ndarray], record_hidden: bool = False,
            reset: bool = True) -> ForwardTrace:
    """Simulate the network on a (n_in, T) raster or a (B, n_in, T) batch.

    The final state is left in ``net.state``; ``reset=False`` continues from
    the current state (single-raster input only).
    """
    x, single = _as_input(net, raster)
    B, _, T = x.shape
    topo = net.topology
    m = topo.m_lif
    if reset or not single:
        st = NetworkState.zeros(topo, B)
    else:
        s = net.state
        st = NetworkState(LifState(*(a[None] for a in s.lif)), DexatState(*(a[None] for a in s.dexat)),
                          s.y[None], s.z[None], s.t)
    w = net.weights
    W_in_T, W_rec_T, W_out_T = w.W_in.T, w.W_rec.T, w.W_out.T
    lif_s, dex_s, y = st.lif, st.dexat, st.y
    z = st.z
    ys = np.empty((B, topo.n_out, T))
    zs = np.empty((B, topo.n_hidden, T), dtype=np.uint8) if record_hidden else None
    counts = np.zeros((B, topo.n_hidden), dtype=np.int64)
    for t in range(T):
        current = x[:, :, t] @ W_in_T + z @ W_rec_T
        lif_s, z_lif = lif_step(lif_s, current[:, :m], net.lif)
        dex_s, z_dex = dexat_step(dex_s, current[:, m:], net.dexat)
        z = np.concatenate([z_lif, z_dex], axis=1)
        y = readout_step(y, z @ W_out_T, net.readout, w.b_out)
        ys[:, :, t] = y
        counts += z.astype(np.int64)
        if record_hidden:
            zs[:, :, t] = z
    if single:
        net.state = NetworkState(LifState(*(a[0] for a in lif_s)), DexatState(*(a[0] for a in dex_s)),
                                 y[0], z[0], st.t + T)
        return ForwardTrace(ys[0], counts[0], None if zs is None else zs[0])
    net.state = NetworkState.zeros(topo)
    return ForwardTrace(ys, counts, zs)


def classify(trace: Union[ForwardTrace, np.ndarray]) -> tuple[int | np.ndarray, np.ndarray]:
    """Time-mean readout scores and argmax class (ties go to the lowest index)."""
    y = trace.y if isinstance(trace, ForwardTrace) else np.asarray(trace)
    if y.shape[-1] == 0:
        raise ShapeMismatch("empty trace")
    scores = y.mean(axis=-1)
    cls = np.argmax(scores, axis=-1)
    return (int(cls) if np.ndim(cls) == 0 else cls), scores


# ---------------------------------------------------------------------------
# serialization
#
# little-endian layout:
#   b"RSNN" | u16 version | u8 precision (0 float, 1 quant8) | u8 self_recurrence
#   u32 n_in | u32 m_lif | u32 n_dexat | u32 n_out
#   f64 x 9: lif.tau_m, lif.v_th, dexat.tau_m, tau_a1, tau_a2, beta1, beta2, b0, readout.tau_out
#   u32 lif.refractory_steps | u32 dexat.refractory_steps
#   float:  f64 W_in | f64 W_rec | f64 W_out | f64 b_out        (row-major)
#   quant8: f64 s_in, s_rec, s_out | i8 q_in | i8 q_rec | i8 q_out | f64 b_out

MAGIC = b"RSNN"
VERSION = 1
_HEAD = struct.Struct("<4sHBB4I9d2I")


def to_bytes(net: Network) -> bytes:
    topo, lif, dex = net.topology, net.lif, net.dexat
    head = _HEAD.pack(
        MAGIC, VERSION, 0 if net.quantized is None else 1, int(topo.self_recurrence_allowed),
        topo.n_in, topo.m_lif, topo.n_dexat, topo.n_out,
        lif.tau_m, lif.v_th, dex.tau_m, dex.tau_a1, dex.tau_a2, dex.beta1, dex.beta2, dex.b0,
        net.readout.tau_out, lif.refractory_steps, dex.refractory_steps,
    )
    parts = [head]
    if net.quantized is None:
        w = net.weights
        parts += [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in (w.W_in, w.W_rec, w.W_out, w.b_out)]
    else:
        q = net.quantized
        parts.append(struct.pack("<3d", q.s_in, q.s_rec, q.s_out))
        parts += [np.ascontiguousarray(a, dtype="i1").tobytes() for a in (q.q_in, q.q_rec, q.q_out)]
        parts.append(np.ascontiguousarray(q.b_out, dtype="<f8").tobytes())
    return b"".join(parts)


def from_bytes(blob: bytes) -> Network:
    if len(blob) < _HEAD.size:
        raise MalformedFile("network file truncated")
    (magic, version, precision, self_rec, n_in, m, n, n_out,
     lif_tau, v_th, d_tau, ta1, ta2, beta1, beta2, b0, tau_out, lif_ref, dex_ref) = _HEAD.unpack_from(blob)
    if magic != MAGIC or version != VERSION or precision not in (0, 1):
        raise MalformedFile("not a version-1 network file")
    topo = Topology(n_in, m, n, n_out, bool(self_rec))
    lif = LifParams(lif_tau, v_th, lif_ref)
    dexat = DexatParams(d_tau, ta1, ta2, beta1, beta2, b0, dex_ref)
    readout = ReadoutParams(tau_out)
    H = topo.n_hidden
    shapes = [(H, n_in), (H, H), (n_out, H)]
    off = _HEAD.size

    def take(dtype, shape):
        nonlocal off
        count = int(np.prod(shape))
        nbytes = count * np.dtype(dtype).itemsize
        if off + nbytes > len(blob):
            raise MalformedFile("network file truncated")
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=off).reshape(shape).copy()
        off += nbytes
        return arr

    if precision == 0:
        mats = [take("<f8", s).astype(np.float64) for s in shapes]
        b_out = take("<f8", (n_out,)).astype(np.float64)
        net = Network(topo, Weights(*mats, b_out), lif, dexat, readout)
    else:
        s_in, s_rec, s_out = take("<f8", (3,))
        qs = [take("i1", s).astype(np.int8) for s in shapes]
        b_out = take("<f8", (n_out,)).astype(np.float64)
        qw = QuantizedWeights(*qs, float(s_in), float(s_rec), float(s_out), b_out)
        W_in, W_rec, W_out = qw.dequantize()
        net = Network(topo, Weights(W_in, W_rec, W_out, b_out.copy()), lif, dexat, readout, quantized=qw)
    if off != len(blob):
        raise MalformedFile("trailing bytes in network file")
    return net


def save_network(net: Network, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(net))


def load_network(path) -> Network:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
