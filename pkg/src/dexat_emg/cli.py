"""Command-line entry point: synth, encode, train, eval, bench, maphw.

Every command writes into one run directory together with the effective
configuration (``config.json``) and a ``manifest.json`` of output files and
their SHA-256 checksums.  Exit codes: 0 success, 1 usage/config error,
2 domain error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import config as config_mod
from .bench import count_ops, energy_proxy, format_table, profile_latency, reports_to_csv, stats_to_csv
from .config import ConfigError, RunConfig
from .encoder import encode_dataset, encode_multichannel
from .errors import DomainError, EmptyDataset
from .hardware import emulate_network, hw_config, validity_region
from .network import Network, classify, init_network, load_network, quantize_network, save_network
from .signal_io import (
    CLASS_NAMES,
    Dataset,
    EmgWindow,
    generate_synthetic,
    load_recording,
    make_dataset,
    save_recording,
    split_dataset,
)
from .trainer import evaluate, predict, train

log = logging.getLogger("dexat_emg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class RunDir:
    def __init__(self, root: Path, cfg: RunConfig):
        self.root = root
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []
        (self.root / "config.json").write_text(json.dumps(config_mod.to_dict(cfg), indent=2, default=list) + "\n")

    def write_text(self, name: str, text: str) -> Path:
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self.files.append(path)
        return path

    def add(self, path: Path) -> Path:
        self.files.append(path)
        return path

    def finish(self, extra: Optional[dict] = None) -> Path:
        entries = [{"path": str(p.relative_to(self.root)), "sha256": sha256_file(p)} for p in self.files]
        manifest = {"files": entries}
        if extra:
            manifest.update(extra)
        path = self.root / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2) + "\n")
        return path


# ---------------------------------------------------------------------------
# data helpers


def load_data_dir(data_dir) -> list:
    data_dir = Path(data_dir)
    manifest = data_dir / "manifest.json"
    if manifest.exists():
        entries = json.loads(manifest.read_text())["files"]
        paths = [data_dir / e["path"] for e in entries]
    else:
        paths = sorted(p for p in data_dir.iterdir() if p.suffix in (".csv", ".bin", ".rawbin"))
    return [load_recording(p) for p in paths]


def recordings_for(cfg: RunConfig) -> list:
    if cfg.data.data_dir:
        return load_data_dir(cfg.data.data_dir)
    return [generate_synthetic(c, cfg.seed * 1_000_003 + i, cfg.data.synth)
            for c in range(3) for i in range(cfg.data.per_class)]


def dataset_for(cfg: RunConfig) -> Dataset:
    ds = make_dataset([r for r in recordings_for(cfg) if r.label is not None], cfg.data.window_T, cfg.data.stride)
    if len(ds) == 0:
        raise EmptyDataset("no labeled windows in dataset")
    return ds


def build_network(cfg: RunConfig) -> Network:
    return init_network(cfg.topology, cfg.seed, cfg.lif, cfg.dexat, cfg.readout)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig, out: Path, fmt: str = "csv") -> Path:
    run = RunDir(out, cfg)
    suffix = "csv" if fmt == "csv" else "bin"
    for c in range(3):
        for i in range(cfg.data.per_class):
            rec = generate_synthetic(c, cfg.seed * 1_000_003 + i, cfg.data.synth)
            path = out / f"{CLASS_NAMES[c].lower()}_{i:04d}.{suffix}"
            save_recording(rec, path, fmt)
            run.add(path)
    manifest = run.finish({"per_class": cfg.data.per_class, "seed": cfg.seed})
    print(f"wrote {len(run.files)} recordings to {out}")
    return manifest


def cmd_encode(cfg: RunConfig, in_path: Path, out_path: Path, start: int = 0, length: Optional[int] = None) -> Path:
    rec = load_recording(in_path)
    T = len(rec) - start if length is None else length
    win = EmgWindow(rec, start, T, rec.label)
    raster = encode_multichannel(win, cfg.encoder)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    raster.save(out_path)
    print(f"{raster.neurons}x{raster.timesteps} raster written to {out_path}")
    return out_path


def cmd_train(cfg: RunConfig, out: Path) -> Network:
    run = RunDir(out, cfg)
    ds = dataset_for(cfg)
    train_ds, test_ds = split_dataset(ds, cfg.data.test_fraction, cfg.seed)
    tr = encode_dataset(train_ds, cfg.encoder)
    te = encode_dataset(test_ds, cfg.encoder)
    net = build_network(cfg)
    print(f"hidden neurons: {cfg.topology.m_lif} LIF + {cfg.topology.n_dexat} DEXAT; "
          f"{len(train_ds)} train / {len(test_ds)} test windows")

    def report(epoch, tr_acc, te_acc, loss):
        print(f"epoch {epoch:4d}  loss {loss:.4f}  train {tr_acc:.3f}  test {te_acc:.3f}", flush=True)

    net, hist = train(net, tr, te, cfg.train, on_epoch=report)
    run.write_text("history.csv", hist.to_csv())
    final_path = run.add(out / "final.rsnn")
    save_network(net, final_path)
    best = Network(net.topology, hist.best_weights, net.lif, net.dexat, net.readout)
    if cfg.train.quant_aware:
        best = quantize_network(best)
    best_path = run.add(out / "checkpoint.rsnn")
    save_network(best, best_path)
    run.finish({"best_epoch": hist.best_epoch, "best_test_acc": max(hist.test_acc)})
    print(f"best test accuracy {max(hist.test_acc):.3f} at epoch {hist.best_epoch}; checkpoint {best_path}")
    return net


def _format_confusion(cm: np.ndarray) -> str:
    head = "true\\pred " + " ".join(f"{n:>9}" for n in CLASS_NAMES)
    rows = [f"{CLASS_NAMES[i]:>9} " + " ".join(f"{v:>9d}" for v in cm[i]) for i in range(len(cm))]
    return "\n".join([head] + rows)


def cmd_eval(cfg: RunConfig, checkpoint: Path, backend: str, out: Path) -> dict:
    net = load_network(checkpoint)
    ds = dataset_for(cfg)
    _, test_ds = split_dataset(ds, cfg.data.test_fraction, cfg.seed)
    X, y = encode_dataset(test_ds, cfg.encoder)
    if len(y) == 0:
        raise EmptyDataset("no test windows")
    run = RunDir(out, cfg)
    float_net = net
    quant_net = net if net.quantized is not None else quantize_network(net)
    if backend == "float":
        chosen = float_net
        predictor = None
    elif backend == "quant":
        chosen = quant_net
        predictor = None
    elif backend == "hw":
        chosen = quant_net
        hcfg = hw_config(quant_net, cfg.hw.vth_fixed, cfg.hw.weight_exp, cfg.hw.membrane_bits)

        def predictor(Xb):
            return np.concatenate([np.atleast_1d(classify(emulate_network(quant_net, Xb[i:i + 64], cfg=hcfg))[0])
                                   for i in range(0, len(Xb), 64)])
    else:
        raise UsageError(f"unknown backend {backend!r}")
    acc, cm = evaluate(chosen, X, y, predictor)
    p_float = predict(float_net, X)
    p_quant = predict(quant_net, X)
    result = {
        "backend": backend,
        "accuracy": acc,
        "confusion": cm.tolist(),
        "float_quant_agreement": float(np.mean(p_float == p_quant)),
        "float_accuracy": float(np.mean(p_float == y)),
        "quant_accuracy": float(np.mean(p_quant == y)),
    }
    run.write_text("eval.json", json.dumps(result, indent=2) + "\n")
    run.finish()
    print(f"{backend} accuracy {acc:.3f} on {len(y)} windows")
    print(_format_confusion(cm))
    print(f"float/quant prediction agreement {result['float_quant_agreement']:.3f}")
    return result


def cmd_bench(cfg: RunConfig, out: Path, checkpoint: Optional[Path] = None, backend: str = "float") -> list:
    run = RunDir(out, cfg)
    net = load_network(checkpoint) if checkpoint else build_network(cfg)
    if backend == "hw" and net.quantized is None:
        net = quantize_network(net)
    ds = dataset_for(cfg)
    windows = ds.windows
    reports = []
    for w in windows[: min(len(windows), 10)]:
        raster = encode_multichannel(w, cfg.encoder)
        reports.append(count_ops(net, raster, backend, window=w, encoder_cfg=cfg.encoder))
    run.write_text("ops.csv", reports_to_csv(reports))
    energy = energy_proxy(reports[0], cfg.bench.costs)
    stats = [profile_latency(net, windows, "full", b, cfg.bench.repeats, cfg.encoder, backend)
             for b in cfg.bench.batch_sizes]
    run.write_text("latency.csv", stats_to_csv(stats))
    run.write_text("plot_latency_vs_batch.dat",
                   "".join(f"{s.batch} {s.mean_s['total']!r} {s.std_s['total']!r}\n" for s in stats))
    totals = reports[0].totals()
    run.write_text("plot_op_categories.dat", "".join(f"{k} {v}\n" for k, v in totals.items()))
    run.write_text("energy.txt", energy.describe() + "\n")
    run.finish()
    print(format_table(reports[0], energy))
    for s in stats:
        print(f"batch {s.batch:>3}: {s.mean_s['total'] * 1e3:.2f} +- {s.std_s['total'] * 1e3:.2f} ms "
              f"over {s.repeats} runs")
    return stats


def cmd_maphw(cfg: RunConfig, out: Path):
    run = RunDir(out, cfg)
    grid = cfg.maphw
    report = validity_region(grid.taus, grid.betas, cfg.hw.vth_fixed, grid.b0)
    run.write_text("mapping.csv", report.to_csv())
    run.finish()
    print(report.render())
    return report


# ---------------------------------------------------------------------------
# argument parsing


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dexat-emg", description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, help="run directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=JSON",
                   help="override a config field, e.g. --set train.epochs=100")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write synthetic labeled recordings")
    s.add_argument("--per-class", type=int)
    s.add_argument("--format", choices=("csv", "rawbin"), default="csv")

    s = sub.add_parser("encode", help="encode one recording window into a text raster")
    s.add_argument("input", type=Path)
    s.add_argument("output", type=Path)
    s.add_argument("--start", type=int, default=0)
    s.add_argument("--length", type=int)

    s = sub.add_parser("train", help="train the spiking network")
    s.add_argument("--data", type=Path)
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--m-lif", type=int)
    s.add_argument("--n-dexat", type=int)
    s.add_argument("--quant-aware", action="store_true", default=None)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("checkpoint", type=Path)
    s.add_argument("--data", type=Path)
    s.add_argument("--backend", choices=("float", "quant", "hw"), default="float")

    s = sub.add_parser("bench", help="operation counts and latency")
    s.add_argument("--checkpoint", type=Path)
    s.add_argument("--data", type=Path)
    s.add_argument("--batch-sizes", type=lambda t: tuple(int(v) for v in t.split(",")))
    s.add_argument("--repeats", type=int)
    s.add_argument("--backend", choices=("float", "hw"), default="float")

    s = sub.add_parser("maphw", help="hardware parameter validity grid")
    s.add_argument("--taus", type=lambda t: tuple(float(v) for v in t.split(",")))
    s.add_argument("--betas", type=lambda t: tuple(float(v) for v in t.split(",")))
    s.add_argument("--vth", type=int)
    return p


def _effective_config(args) -> RunConfig:
    cfg = config_mod.load_config(args.config) if args.config else RunConfig()
    flag_overrides = {
        "seed": args.seed,
        "out": None if args.out is None else str(args.out),
        "data.per_class": getattr(args, "per_class", None),
        "data.data_dir": None if getattr(args, "data", None) is None else str(args.data),
        "train.epochs": getattr(args, "epochs", None),
        "train.learning_rate": getattr(args, "lr", None),
        "topology.m_lif": getattr(args, "m_lif", None),
        "topology.n_dexat": getattr(args, "n_dexat", None),
        "train.quant_aware": getattr(args, "quant_aware", None),
        "bench.batch_sizes": getattr(args, "batch_sizes", None),
        "bench.repeats": getattr(args, "repeats", None),
        "maphw.taus": getattr(args, "taus", None),
        "maphw.betas": getattr(args, "betas", None),
        "hw.vth_fixed": getattr(args, "vth", None),
    }
    for key, value in flag_overrides.items():
        if value is not None:
            cfg = config_mod.with_override(cfg, key, value)
    for item in args.set:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=JSON, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        if isinstance(value, list):
            value = tuple(value)
        cfg = config_mod.with_override(cfg, key, value)
    return config_mod.with_override(cfg, "train.seed", cfg.seed)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _effective_config(args)
        out = Path(cfg.out) if args.out is not None else Path(cfg.out) / args.command
        if args.command == "synth":
            cmd_synth(cfg, out, args.format)
        elif args.command == "encode":
            cmd_encode(cfg, args.input, args.output, args.start, args.length)
        elif args.command == "train":
            cmd_train(cfg, out)
        elif args.command == "eval":
            cmd_eval(cfg, args.checkpoint, args.backend, out)
        elif args.command == "bench":
            cmd_bench(cfg, out, args.checkpoint, args.backend)
        elif args.command == "maphw":
            cmd_maphw(cfg, out)
    except (ConfigError, UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DomainError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
