"""Fixed-point three-compartment DEXAT emulation ("virtual neuromorphic core").

A DEXAT neuron is built from three compartments:

* N1 integrates synaptic input, is compared against the threshold and is
  reset to zero when the neuron fires;
* N2 and N3 receive the neuron's own previous spike through inhibitory
  synapses of magnitude ``gamma1``/``gamma2`` and leak with the two
  adaptation time constants.  They never fire and never reset.

The neuron fires when ``u1 + u2 + u3`` exceeds the threshold, so the
(negative) secondary potentials widen the gap to threshold after each spike.

Fixed-point conventions: membranes are signed and saturate at
``+-(2**23 - 1)``; a decay code ``d`` in [0, 4096] multiplies by
``(4096 - d) / 4096`` with truncation toward zero; synaptic weights and the
threshold are both expressed in units of ``2**weight_exp``.  ``membrane_bits``
below 24 coarsens the stored membranes to multiples of ``2**(24 - bits)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .encoder import SpikeRaster
from .errors import InvalidDecay, OutOfHardwareRange, ShapeMismatch
from .network import ForwardTrace, Network, Topology, _as_input
from .neurons import DexatParams, LifParams, decay_factor
from .quantize import QuantizedWeights, quantize_matrix

DECAY_ONE = 4096
GAMMA_MAX = 255
MEMBRANE_BITS = 24
SAT = 2 ** (MEMBRANE_BITS - 1) - 1
DEFAULT_VTH = 5120
DEFAULT_WEIGHT_EXP = 8
CURRENT_FRAC_BITS = 12
READOUT_FRAC_BITS = 16


def decay_code(tau: float) -> int:
    """12-bit decay code for a time constant given in timesteps."""
    code = round(DECAY_ONE * (1.0 - math.exp(-1.0 / tau)))
    if not 0 <= code <= DECAY_ONE:
        raise InvalidDecay(f"decay code {code} for tau={tau} outside [0, {DECAY_ONE}]")
    return code


def decay_multiplier(code: int) -> float:
    return (DECAY_ONE - code) / DECAY_ONE


def achieved_tau(code: int) -> float:
    """Time constant realized by a decay code (inf for code 0)."""
    m = decay_multiplier(code)
    if m <= 0.0:
        return 0.0
    if m >= 1.0:
        return math.inf
    return -1.0 / math.log(m)


def branch_gamma(tau_a: float, beta: float, b0: float, vth_fixed: float) -> float:
    """Unrounded inhibitory magnitude for one adaptation branch."""
    return vth_fixed * beta * (1.0 - decay_factor(tau_a)) / b0


def map_branch(tau_a: float, beta: float, b0: float, vth_fixed: int, which: str = "gamma") -> tuple[int, int]:
    """(gamma, decay code) for one adaptation branch; raises when gamma leaves [1, 255]."""
    gamma = round(branch_gamma(tau_a, beta, b0, vth_fixed))
    if not 1 <= gamma <= GAMMA_MAX:
        raise OutOfHardwareRange(which, gamma)
    return gamma, decay_code(tau_a)


@dataclass(frozen=True)
class CompartmentConfig:
    """Parameters of one three-compartment DEXAT neuron.

    In ``float_mode`` the compartments are real valued: ``vth_fixed`` and the
    gammas are floats and the ``mult_*`` fields hold the exact decay
    multipliers; decay codes, ``weight_exp`` and saturation are ignored.
    """

    vth_fixed: Union[int, float] = DEFAULT_VTH
    gamma1: Union[int, float] = 238
    gamma2: Union[int, float] = 13
    decay1: int = 190
    decay2: int = 10
    decay_m: int = 200
    weight_exp: int = DEFAULT_WEIGHT_EXP
    membrane_bits: int = MEMBRANE_BITS
    float_mode: bool = False
    mult_m: float = 0.0
    mult1: float = 0.0
    mult2: float = 0.0

    def __post_init__(self):
        if not self.vth_fixed > 0:
            raise ValueError("vth_fixed must be positive")
        if self.float_mode:
            return
        for name in ("decay1", "decay2", "decay_m"):
            code = getattr(self, name)
            if not 0 <= code <= DECAY_ONE:
                raise InvalidDecay(f"{name}={code} outside [0, {DECAY_ONE}]")
        for name in ("gamma1", "gamma2"):
            g = getattr(self, name)
            if not 1 <= g <= GAMMA_MAX:
                raise OutOfHardwareRange(name, g)
        if not 1 <= self.membrane_bits <= MEMBRANE_BITS:
            raise ValueError(f"membrane_bits must lie in [1, {MEMBRANE_BITS}]")

    @property
    def threshold(self):
        if self.float_mode:
            return self.vth_fixed
        return self.vth_fixed << self.weight_exp


def map_params(p: DexatParams, vth_fixed: Union[int, float] = DEFAULT_VTH, float_mode: bool = False,
               weight_exp: int = DEFAULT_WEIGHT_EXP, membrane_bits: int = MEMBRANE_BITS) -> CompartmentConfig:
    """Translate software DEXAT parameters to a compartment configuration.

    ``gamma_i = round(vth * beta_i * (1 - rho_i) / b0)``: one spike moves the
    effective threshold by the same fraction of threshold as in the float
    model.  Decay codes are ``round(4096 * (1 - exp(-1/tau)))``.
    """
    if float_mode:
        return CompartmentConfig(
            vth_fixed=float(vth_fixed),
            gamma1=branch_gamma(p.tau_a1, p.beta1, p.b0, vth_fixed),
            gamma2=branch_gamma(p.tau_a2, p.beta2, p.b0, vth_fixed),
            decay1=0, decay2=0, decay_m=0, weight_exp=0, float_mode=True,
            mult_m=p.alpha, mult1=p.rho1, mult2=p.rho2,
        )
    vth_fixed = int(vth_fixed)
    gamma1, decay1 = map_branch(p.tau_a1, p.beta1, p.b0, vth_fixed, "gamma1")
    gamma2, decay2 = map_branch(p.tau_a2, p.beta2, p.b0, vth_fixed, "gamma2")
    return CompartmentConfig(vth_fixed, gamma1, gamma2, decay1, decay2, decay_code(p.tau_m),
                             weight_exp, membrane_bits)


class HwState(NamedTuple):
    u1: Union[int, float, np.ndarray] = 0
    u2: Union[int, float, np.ndarray] = 0
    u3: Union[int, float, np.ndarray] = 0
    z_prev: Union[int, np.ndarray] = 0


def _decay(u: np.ndarray, code) -> np.ndarray:
    """Multiply by (4096 - code)/4096, truncating toward zero."""
    prod = np.abs(u) * (DECAY_ONE - np.asarray(code, dtype=np.int64))
    return np.sign(u) * (prod >> 12)


def _saturate(u: np.ndarray, bits: int) -> np.ndarray:
    u = np.clip(u, -SAT, SAT)
    if bits < MEMBRANE_BITS:
        step = 1 << (MEMBRANE_BITS - bits)
        u = np.sign(u) * ((np.abs(u) // step) * step)
    return u


def _step_fixed(s: HwState, current, decay_m, decay1, decay2, g1, g2, threshold, bits):
    z_prev = np.asarray(s.z_prev, dtype=np.int64)
    u1 = _saturate(_decay(np.asarray(s.u1, dtype=np.int64), decay_m) + current, bits)
    u2 = _saturate(_decay(np.asarray(s.u2, dtype=np.int64), decay1) - g1 * z_prev, bits)
    u3 = _saturate(_decay(np.asarray(s.u3, dtype=np.int64), decay2) - g2 * z_prev, bits)
    z = (u1 + u2 + u3 > threshold).astype(np.int64)
    u1 = np.where(z == 1, 0, u1)
    return HwState(u1, u2, u3, z), z


def _step_float(s: HwState, current, mult_m, mult1, mult2, g1, g2, threshold):
    z_prev = np.asarray(s.z_prev, dtype=np.float64)
    u1 = mult_m * np.asarray(s.u1, dtype=np.float64) + current
    u2 = mult1 * np.asarray(s.u2, dtype=np.float64) - g1 * z_prev
    u3 = mult2 * np.asarray(s.u3, dtype=np.float64) - g2 * z_prev
    z = (u1 + u2 + u3 > threshold).astype(np.int64)
    u1 = np.where(z == 1, 0.0, u1)
    return HwState(u1, u2, u3, z), z


def _scalar(x):
    return x.item() if isinstance(x, np.ndarray) and x.ndim == 0 else x


def compartment_step(s: HwState, input_current, cfg: CompartmentConfig) -> tuple[HwState, Union[int, np.ndarray]]:
    """Advance one DEXAT neuron (or an array of them sharing ``cfg``) by one step.

    ``input_current`` is in membrane units: integers in fixed-point mode, reals
    in float mode.  The adaptation compartments consume the spike of the
    previous step, so the threshold seen at step t reflects spikes up to t-1.
    """
    if cfg.float_mode:
        new, z = _step_float(s, input_current, cfg.mult_m, cfg.mult1, cfg.mult2,
                             cfg.gamma1, cfg.gamma2, cfg.threshold)
    else:
        scale = 1 << cfg.weight_exp
        current = np.asarray(input_current, dtype=np.int64)
        new, z = _step_fixed(s, current, cfg.decay_m, cfg.decay1, cfg.decay2,
                             cfg.gamma1 * scale, cfg.gamma2 * scale, cfg.threshold, cfg.membrane_bits)
    return HwState(*(_scalar(a) for a in new)), _scalar(z)


def effective_potential(s: HwState):
    return s.u1 + s.u2 + s.u3


# ---------------------------------------------------------------------------
# network emulation


@dataclass
class HwNetworkConfig:
    """Per-network fixed-point settings derived from a quantized network."""

    dexat_cfg: CompartmentConfig
    lif_decay: int
    lif_threshold: int
    readout_decay: int
    in_mult: np.ndarray       # (H,) current multiplier per hidden neuron, 2**CURRENT_FRAC_BITS scaled
    rec_mult: np.ndarray
    readout_bias: np.ndarray  # (n_out,) in readout units
    readout_scale: float      # float value of one readout unit


def _quantized(net: Network) -> QuantizedWeights:
    if net.quantized is not None:
        return net.quantized
    w = net.weights
    q_in, s_in = quantize_matrix(w.W_in)
    q_rec, s_rec = quantize_matrix(w.W_rec)
    q_out, s_out = quantize_matrix(w.W_out)
    return QuantizedWeights(q_in, q_rec, q_out, s_in, s_rec, s_out, w.b_out.copy())


def hw_config(net: Network, vth_fixed: int = DEFAULT_VTH, weight_exp: int = DEFAULT_WEIGHT_EXP,
              membrane_bits: int = MEMBRANE_BITS) -> HwNetworkConfig:
    """Fold the per-matrix weight scales into integer current multipliers.

    A hidden neuron with float threshold ``theta`` (``v_th`` or ``b0``) maps
    float membrane value ``v`` to ``v * vth_fixed * 2**weight_exp / theta``.
    """
    qw = _quantized(net)
    dcfg = map_params(net.dexat, vth_fixed, weight_exp=weight_exp, membrane_bits=membrane_bits)
    m, n = net.topology.m_lif, net.topology.n_dexat
    unit = float(vth_fixed << weight_exp)
    per_unit = np.concatenate([np.full(m, unit / net.lif.v_th), np.full(n, unit / net.dexat.b0)])
    frac = float(1 << CURRENT_FRAC_BITS)
    in_mult = np.round(qw.s_in * per_unit * frac).astype(np.int64)
    rec_mult = np.round(qw.s_rec * per_unit * frac).astype(np.int64)
    kappa = net.readout.kappa
    rfrac = float(1 << READOUT_FRAC_BITS)
    readout_bias = np.round(qw.b_out * (1.0 - kappa) / qw.s_out * rfrac).astype(np.int64)
    return HwNetworkConfig(
        dexat_cfg=dcfg,
        lif_decay=decay_code(net.lif.tau_m),
        lif_threshold=vth_fixed << weight_exp,
        readout_decay=decay_code(net.readout.tau_out),
        in_mult=in_mult,
        rec_mult=rec_mult,
        readout_bias=readout_bias,
        readout_scale=qw.s_out / rfrac,
    )


@dataclass
class HwDiagnostics:
    saturations: int = 0


def emulate_network(net: Network, raster: Union[SpikeRaster, np.ndarray], record_hidden: bool = False,
                    vth_fixed: int = DEFAULT_VTH, weight_exp: int = DEFAULT_WEIGHT_EXP,
                    membrane_bits: int = MEMBRANE_BITS, cfg: Optional[HwNetworkConfig] = None,
                    diagnostics: Optional[HwDiagnostics] = None) -> ForwardTrace:
    """Integer-only forward pass of a quantized network.

    Synaptic input is accumulated from the int8 codes, multiplied by a
    per-neuron integer multiplier and shifted down; LIF neurons use a single
    compartment, DEXAT neurons the three-compartment structure, and the readout
    accumulates in int64 before being rescaled to float.  Float weights are
    quantized on the fly when ``net`` carries none.
    """
    x, single = _as_input(net, raster)
    x = x.astype(np.int64)
    B, _, T = x.shape
    if cfg is None:
        cfg = hw_config(net, vth_fixed, weight_exp, membrane_bits)
    qw = _quantized(net)
    topo = net.topology
    m, H = topo.m_lif, topo.n_hidden
    q_in_T = qw.q_in.astype(np.int64).T
    q_rec_T = qw.q_rec.astype(np.int64).T
    q_out_T = qw.q_out.astype(np.int64).T
    dc = cfg.dexat_cfg
    scale = 1 << dc.weight_exp
    bits = dc.membrane_bits
    threshold = np.concatenate([np.full(m, cfg.lif_threshold), np.full(H - m, dc.threshold)]).astype(np.int64)
    decay_m = np.concatenate([np.full(m, cfg.lif_decay), np.full(H - m, dc.decay_m)]).astype(np.int64)
    g1 = np.concatenate([np.zeros(m), np.full(H - m, dc.gamma1 * scale)]).astype(np.int64)
    g2 = np.concatenate([np.zeros(m), np.full(H - m, dc.gamma2 * scale)]).astype(np.int64)
    d1 = np.concatenate([np.zeros(m), np.full(H - m, dc.decay1)]).astype(np.int64)
    d2 = np.concatenate([np.zeros(m), np.full(H - m, dc.decay2)]).astype(np.int64)
    lif_ref = net.lif.refractory_steps
    dex_ref = net.dexat.refractory_steps
    refractory = np.concatenate([np.full(m, lif_ref), np.full(H - m, dex_ref)]).astype(np.int64)
    rfrac = 1 << READOUT_FRAC_BITS

    state = HwState(*(np.zeros((B, H), dtype=np.int64) for _ in range(4)))
    refrac = np.zeros((B, H), dtype=np.int64)
    y = np.zeros((B, topo.n_out), dtype=np.int64)
    ys = np.empty((B, topo.n_out, T))
    zs = np.empty((B, H, T), dtype=np.uint8) if record_hidden else None
    counts = np.zeros((B, H), dtype=np.int64)
    sat = 0
    for t in range(T):
        acc_in = x[:, :, t] @ q_in_T
        acc_rec = state.z_prev @ q_rec_T
        current = (acc_in * cfg.in_mult + acc_rec * cfg.rec_mult) >> CURRENT_FRAC_BITS
        new, z = _step_fixed(state, current, decay_m, d1, d2, g1, g2, threshold, bits)
        if np.any(refractory):
            blocked = (refrac > 0) & (z == 1)
            if np.any(blocked):
                z = np.where(blocked, 0, z)
                u1 = np.where(blocked, _saturate(_decay(state.u1, decay_m) + current, bits), new.u1)
                new = HwState(u1, new.u2, new.u3, z)
            refrac = np.where(z == 1, refractory, np.maximum(refrac - 1, 0))
        if diagnostics is not None:
            sat += int(np.sum(np.abs(new.u1) >= SAT) + np.sum(np.abs(new.u2) >= SAT)
                       + np.sum(np.abs(new.u3) >= SAT))
        state = new
        y = _decay(y, cfg.readout_decay) + (z @ q_out_T) * rfrac + cfg.readout_bias
        ys[:, :, t] = y * cfg.readout_scale
        counts += z
        if record_hidden:
            zs[:, :, t] = z
    if diagnostics is not None:
        diagnostics.saturations += sat
    if single:
        return ForwardTrace(ys[0], counts[0], None if zs is None else zs[0])
    return ForwardTrace(ys, counts, zs)


# ---------------------------------------------------------------------------
# validity region


@dataclass
class MappingCell:
    tau_a: float
    beta: float
    gamma_target: float
    valid: bool
    achieved_gamma: Optional[int]
    achieved_tau: Optional[float]


@dataclass
class MappingReport:
    vth_fixed: int
    b0: float
    taus: list
    betas: list
    cells: list

    def grid(self) -> np.ndarray:
        """Boolean validity grid indexed [tau, beta]."""
        return np.array([c.valid for c in self.cells], dtype=bool).reshape(len(self.taus), len(self.betas))

    def to_csv(self) -> str:
        lines = ["gamma_target,tau_a,beta,valid,achieved_gamma,achieved_tau"]
        for c in self.cells:
            ag = "" if c.achieved_gamma is None else str(c.achieved_gamma)
            at = "" if c.achieved_tau is None else repr(c.achieved_tau)
            lines.append(f"{c.gamma_target!r},{c.tau_a!r},{c.beta!r},{int(c.valid)},{ag},{at}")
        return "\n".join(lines) + "\n"

    def render(self) -> str:
        """Text grid: '#' marks out-of-range cells, '.' valid ones."""
        g = self.grid()
        head = "tau_a \\ beta " + " ".join(f"{b:>6g}" for b in self.betas)
        rows = [head]
        for i, tau in enumerate(self.taus):
            rows.append(f"{tau:>12g} " + " ".join(f"{'.' if v else '#':>6}" for v in g[i]))
        return "\n".join(rows)


def validity_region(taus: Sequence[float], betas: Sequence[float], vth_fixed: int = DEFAULT_VTH,
                    b0: float = 1.0) -> MappingReport:
    """Classify every (tau_a, beta) adaptation branch as mappable or not."""
    cells = []
    for tau in taus:
        for beta in betas:
            target = branch_gamma(tau, beta, b0, vth_fixed)
            try:
                gamma, code = map_branch(tau, beta, b0, vth_fixed)
                cells.append(MappingCell(tau, beta, target, True, gamma, achieved_tau(code)))
            except OutOfHardwareRange:
                cells.append(MappingCell(tau, beta, target, False, None, None))
    return MappingReport(int(vth_fixed), b0, list(taus), list(betas), cells)
