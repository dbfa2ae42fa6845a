"""Run configuration: nested dataclasses loadable from JSON with strict keys."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any, Optional

from .encoder import EncoderConfig
from .hardware import DEFAULT_VTH, DEFAULT_WEIGHT_EXP, MEMBRANE_BITS
from .neurons import DexatParams, LifParams, ReadoutParams
from .network import Topology
from .signal_io import SynthConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    data_dir: Optional[str] = None
    per_class: int = 50
    window_T: int = 200
    stride: int = 200
    test_fraction: float = 0.2
    synth: SynthConfig = SynthConfig()


@dataclass(frozen=True)
class HwConfig:
    vth_fixed: int = DEFAULT_VTH
    weight_exp: int = DEFAULT_WEIGHT_EXP
    membrane_bits: int = MEMBRANE_BITS


@dataclass(frozen=True)
class BenchConfig:
    batch_sizes: tuple = (1, 50)
    repeats: int = 5
    costs: Optional[dict] = None


@dataclass(frozen=True)
class MapGridConfig:
    taus: tuple = (5.0, 10.0, 21.0, 50.0, 100.0, 200.0, 400.0, 1000.0)
    betas: tuple = (0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
    b0: float = 1.0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "runs"
    data: DataConfig = DataConfig()
    encoder: EncoderConfig = EncoderConfig()
    topology: Topology = Topology()
    lif: LifParams = LifParams()
    dexat: DexatParams = DexatParams()
    readout: ReadoutParams = ReadoutParams()
    train: TrainConfig = TrainConfig()
    hw: HwConfig = HwConfig()
    bench: BenchConfig = BenchConfig()
    maphw: MapGridConfig = MapGridConfig()


def _build(cls, data: Any, path: str):
    if not dataclasses.is_dataclass(cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name)
        sub = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, sub)
        elif isinstance(default, tuple) and isinstance(value, list):
            kwargs[name] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "")


def load_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return from_dict(data)


def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def with_override(cfg, dotted: str, value):
    """Return a copy of ``cfg`` with the field at ``a.b.c`` replaced."""
    head, _, rest = dotted.partition(".")
    if head not in {f.name for f in dataclasses.fields(cfg)}:
        raise ConfigError(f"unknown key {dotted!r}")
    if rest:
        return dataclasses.replace(cfg, **{head: with_override(getattr(cfg, head), rest, value)})
    try:
        return dataclasses.replace(cfg, **{head: value})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{dotted}: {exc}") from None
