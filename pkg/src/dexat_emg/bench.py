"""Operation counting, host latency profiling and a linear energy proxy.

Synaptic operations are event driven: every spike that occurs costs one
accumulate per structural postsynaptic target (input -> hidden, hidden ->
hidden without self-loops unless allowed, hidden -> readout).  Neuron updates
are counted once per neuron per timestep.  Energy is a declared linear proxy,
never a measurement.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .encoder import EncoderConfig, SpikeRaster, encode_multichannel, encoder_comparisons
from .errors import MissingCoefficient, ShapeMismatch
from .network import Network, _as_input, classify, forward
from .hardware import emulate_network

# Reported by the source study for one inference on the neuromorphic board;
# kept for context only.
REPORTED_ENERGY_PER_INFERENCE_J = 0.37e-3
REPORTED_RATIOS = {"energy_vs_gpu_batch50": 983.0, "latency_vs_gpu_batch50": 19.0}

CATEGORIES = ("encoder", "neuron", "synaptic")

# Illustrative joules per operation; not measured on any device.
DEFAULT_COSTS = {"encoder": 1.0e-12, "neuron": 5.0e-11, "synaptic": 2.5e-11}


@dataclass
class OpCountReport:
    timesteps: int
    encoder_ops: int = 0
    lif_steps: int = 0
    dexat_steps: int = 0
    compartment_steps: int = 0
    readout_steps: int = 0
    input_spikes: int = 0
    hidden_spikes: int = 0
    synaptic_input: int = 0
    synaptic_recurrent: int = 0
    synaptic_readout: int = 0
    max_fanout: int = 0
    hidden_raster: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def neuron_updates(self) -> int:
        return self.lif_steps + self.dexat_steps + self.readout_steps

    @property
    def synaptic_ops(self) -> int:
        return self.synaptic_input + self.synaptic_recurrent + self.synaptic_readout

    @property
    def total_spikes(self) -> int:
        return self.input_spikes + self.hidden_spikes

    def totals(self) -> dict[str, int]:
        return {"encoder": self.encoder_ops, "neuron": self.neuron_updates, "synaptic": self.synaptic_ops}

    def as_row(self) -> dict:
        row = asdict(self)
        row.pop("hidden_raster")
        row.update(neuron_updates=self.neuron_updates, synaptic_ops=self.synaptic_ops)
        return row


def fanouts(net: Network) -> tuple[int, int]:
    """(input fan-out, hidden fan-out) of the dense topology."""
    topo = net.topology
    H = topo.n_hidden
    rec = H if topo.self_recurrence_allowed else H - 1
    return H, rec + topo.n_out


def count_ops(net: Network, raster, backend: str = "float", window=None,
              encoder_cfg: EncoderConfig = EncoderConfig()) -> OpCountReport:
    """Count operations for one inference.

    ``window`` (channels x T voltages) is optional; when given, the encoder's
    threshold comparisons are included.
    """
    x, single = _as_input(net, raster)
    if not single:
        raise ShapeMismatch("count_ops takes a single raster")
    if backend == "float":
        trace = forward(net, x[0], record_hidden=True)
    elif backend in ("hw", "hw-emulated"):
        trace = emulate_network(net, x[0], record_hidden=True)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    topo = net.topology
    T = x.shape[2]
    fan_in, fan_hidden = fanouts(net)
    in_spikes = int(x.sum())
    hid_spikes = int(trace.z.sum())
    rec_fan = fan_hidden - topo.n_out
    report = OpCountReport(
        timesteps=T,
        lif_steps=topo.m_lif * T,
        dexat_steps=topo.n_dexat * T,
        compartment_steps=3 * topo.n_dexat * T if backend != "float" else 0,
        readout_steps=topo.n_out * T,
        input_spikes=in_spikes,
        hidden_spikes=hid_spikes,
        synaptic_input=in_spikes * fan_in,
        synaptic_recurrent=hid_spikes * rec_fan,
        synaptic_readout=hid_spikes * topo.n_out,
        max_fanout=max(fan_in, fan_hidden),
        hidden_raster=trace.z,
    )
    if window is not None:
        w = np.asarray(window.data if hasattr(window, "data") else window)
        report.encoder_ops = encoder_comparisons(w.shape[0], w.shape[1], encoder_cfg)
    return report


@dataclass
class EnergyProxy:
    costs: dict
    per_category_j: dict
    joules: float
    reference_j: float = REPORTED_ENERGY_PER_INFERENCE_J

    def describe(self) -> str:
        lines = [f"{k:>9}: {v:.4e} J" for k, v in self.per_category_j.items()]
        lines.append(f"{'total':>9}: {self.joules:.4e} J (proxy)")
        lines.append(f"{'reference':>9}: {self.reference_j:.2e} J (reported, not measured)")
        return "\n".join(lines)


def energy_proxy(report: OpCountReport, costs: Optional[dict] = None) -> EnergyProxy:
    costs = DEFAULT_COSTS if costs is None else costs
    missing = [c for c in CATEGORIES if c not in costs]
    if missing:
        raise MissingCoefficient(f"no cost coefficient for {', '.join(missing)}")
    if any(costs[c] < 0 for c in CATEGORIES):
        raise ValueError("cost coefficients must be non-negative")
    counts = report.totals()
    per = {c: counts[c] * costs[c] for c in CATEGORIES}
    return EnergyProxy(dict(costs), per, sum(per.values()))


# ---------------------------------------------------------------------------
# latency


PHASES = ("encode", "forward", "classify")


@dataclass
class LatencyStats:
    runnable: str
    batch: int
    repeats: int
    mean_s: dict = field(default_factory=dict)
    std_s: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)

    def rows(self):
        for phase in self.mean_s:
            yield {"runnable": self.runnable, "batch": self.batch, "repeats": self.repeats, "phase": phase,
                   "mean_s": self.mean_s[phase], "std_s": self.std_s[phase]}


def _run_once(net: Network, windows: Sequence, cfg: EncoderConfig, runnable: str,
              backend: str, rasters: Optional[list]) -> dict[str, float]:
    times = dict.fromkeys(PHASES + ("total",), 0.0)
    start_all = time.perf_counter()
    for i, win in enumerate(windows):
        if runnable in ("encode", "full"):
            t0 = time.perf_counter()
            raster = encode_multichannel(win, cfg)
            times["encode"] += time.perf_counter() - t0
        else:
            raster = rasters[i]
        if runnable in ("forward", "full"):
            t0 = time.perf_counter()
            if backend == "float":
                trace = forward(net, raster)
            else:
                trace = emulate_network(net, raster)
            times["forward"] += time.perf_counter() - t0
            t0 = time.perf_counter()
            classify(trace)
            times["classify"] += time.perf_counter() - t0
    times["total"] = time.perf_counter() - start_all
    return times


def profile_latency(net: Network, windows: Sequence, runnable: str = "full", batch: int = 1, repeats: int = 5,
                    cfg: EncoderConfig = EncoderConfig(), backend: str = "float") -> LatencyStats:
    """Wall-clock time of ``batch`` independent inferences, repeated ``repeats`` times.

    A batch runs ``batch`` separate network copies one after another (windows
    are reused cyclically), so per-inference work does not depend on batch
    size.  One untimed warm-up run precedes the measurements.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if batch < 1:
        raise ValueError("batch must be >= 1")
    if runnable not in ("encode", "forward", "full"):
        raise ValueError(f"unknown runnable {runnable!r}")
    if not windows:
        raise ValueError("no windows to profile")
    chosen = [windows[i % len(windows)] for i in range(batch)]
    rasters = [encode_multichannel(w, cfg) for w in chosen] if runnable == "forward" else None
    _run_once(net, chosen[:1], cfg, runnable, backend, rasters)
    runs = [_run_once(net, chosen, cfg, runnable, backend, rasters) for _ in range(repeats)]
    phases = {"encode": ("encode",), "forward": ("forward", "classify"), "full": PHASES}[runnable] + ("total",)
    stats = LatencyStats(runnable, batch, repeats)
    for p in phases:
        vals = [r[p] for r in runs]
        stats.samples[p] = vals
        stats.mean_s[p] = statistics.fmean(vals)
        stats.std_s[p] = statistics.stdev(vals) if len(vals) > 1 else 0.0
    return stats


def stats_to_csv(stats: Sequence[LatencyStats]) -> str:
    lines = ["runnable,batch,repeats,phase,mean_s,std_s"]
    for s in stats:
        for r in s.rows():
            lines.append(f"{r['runnable']},{r['batch']},{r['repeats']},{r['phase']},{r['mean_s']!r},{r['std_s']!r}")
    return "\n".join(lines) + "\n"


def reports_to_csv(reports: Sequence[OpCountReport]) -> str:
    if not reports:
        return ""
    keys = list(reports[0].as_row().keys())
    lines = [",".join(keys)]
    lines += [",".join(str(r.as_row()[k]) for k in keys) for r in reports]
    return "\n".join(lines) + "\n"


def format_table(report: OpCountReport, energy: Optional[EnergyProxy] = None) -> str:
    rows = [
        ("timesteps", report.timesteps),
        ("encoder comparisons", report.encoder_ops),
        ("LIF updates", report.lif_steps),
        ("DEXAT updates", report.dexat_steps),
        ("compartment updates", report.compartment_steps),
        ("readout updates", report.readout_steps),
        ("synaptic ops (input)", report.synaptic_input),
        ("synaptic ops (recurrent)", report.synaptic_recurrent),
        ("synaptic ops (readout)", report.synaptic_readout),
    ]
    out = "\n".join(f"{name:<26}{value:>12}" for name, value in rows)
    if energy is not None:
        out += "\n" + energy.describe()
    return out
