"""Threshold-crossing spike encoder with ONSET, OFFSET and Touch neurons.

Each channel gets ``K`` shared voltage levels.  Per level there is an ONSET
neuron (upward crossing) and an OFFSET neuron (downward crossing); an optional
Touch neuron fires while the signal stays at or above the top level.  Rows of a
channel block are ordered ONSET_0..ONSET_{K-1}, OFFSET_0..OFFSET_{K-1}, Touch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import NonFiniteValue, ShapeMismatch
from .signal_io import EmgWindow


@dataclass(frozen=True)
class EncoderConfig:
    v_min: float = -2.0
    v_max: float = 2.0
    levels_K: int = 4
    touch_enabled: bool = True

    def __post_init__(self):
        if not self.v_min < self.v_max:
            raise ValueError("v_min must be < v_max")
        if self.levels_K < 1:
            raise ValueError("levels_K must be >= 1")

    @property
    def neurons_per_channel(self) -> int:
        return 2 * self.levels_K + int(self.touch_enabled)


@dataclass
class SpikeRaster:
    """Binary (neurons, timesteps) matrix."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2 or 0 in bits.shape:
            raise ShapeMismatch(f"raster must be 2-D with positive dimensions, got {bits.shape}")
        if not np.all((bits == 0) | (bits == 1)):
            raise ValueError("raster entries must be 0 or 1")
        self.bits = bits.astype(np.uint8)

    @property
    def neurons(self) -> int:
        return self.bits.shape[0]

    @property
    def timesteps(self) -> int:
        return self.bits.shape[1]

    def to_text(self) -> str:
        return "".join("".join("1" if b else "0" for b in row) + "\n" for row in self.bits)

    @classmethod
    def from_text(cls, text: str) -> "SpikeRaster":
        rows = [line.strip() for line in text.splitlines() if line.strip()]
        if not rows or len({len(r) for r in rows}) != 1:
            raise ShapeMismatch("raster text rows must be non-empty and equally long")
        if any(set(r) - {"0", "1"} for r in rows):
            raise ValueError("raster text may only contain '0' and '1'")
        return cls(np.array([[c == "1" for c in r] for r in rows], dtype=np.uint8))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "SpikeRaster":
        with open(path) as fh:
            return cls.from_text(fh.read())


def build_thresholds(cfg: EncoderConfig) -> np.ndarray:
    if cfg.levels_K == 1:
        return np.array([(cfg.v_min + cfg.v_max) / 2])
    return np.linspace(cfg.v_min, cfg.v_max, cfg.levels_K)


def _crossings(x: np.ndarray, thresholds: np.ndarray, touch_enabled: bool) -> np.ndarray:
    """Encode ``x`` of shape (channels, T) into (channels, 2K+touch, T)."""
    prev = x[:, None, :-1]
    cur = x[:, None, 1:]
    th = thresholds[None, :, None]
    onset = (prev < th) & (th <= cur)
    offset = (prev >= th) & (th > cur)
    blocks = [onset, offset]
    if touch_enabled:
        top = thresholds[-1]
        blocks.append(((x[:, :-1] >= top) & (x[:, 1:] >= top))[:, None, :])
    body = np.concatenate(blocks, axis=1).astype(np.uint8)
    first = np.zeros(body.shape[:2] + (1,), dtype=np.uint8)
    return np.concatenate([first, body], axis=2)


def encode_channel(signal, thresholds, touch_enabled: bool = True) -> SpikeRaster:
    x = np.asarray(signal, dtype=np.float64)
    th = np.asarray(thresholds, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ShapeMismatch("signal must be 1-D with at least 2 samples")
    if th.ndim != 1 or th.size < 1 or np.any(np.diff(th) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    if not np.all(np.isfinite(x)):
        raise NonFiniteValue("signal contains non-finite values")
    return SpikeRaster(_crossings(x[None, :], th, touch_enabled)[0])


def encode_multichannel(win: Union[EmgWindow, np.ndarray], cfg: EncoderConfig = EncoderConfig()) -> SpikeRaster:
    """Stack per-channel rasters channel-major (channel 0's neurons first)."""
    x = win.data if isinstance(win, EmgWindow) else np.asarray(win, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] < 2:
        raise ShapeMismatch("window must be (channels, T) with T >= 2")
    if not np.all(np.isfinite(x)):
        raise NonFiniteValue("window contains non-finite values")
    per_channel = _crossings(x, build_thresholds(cfg), cfg.touch_enabled)
    return SpikeRaster(per_channel.reshape(-1, x.shape[1]))


def encode_dataset(ds, cfg: EncoderConfig = EncoderConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Encode every window of a dataset into a (N, neurons, T) uint8 array plus labels."""
    windows = list(ds)
    if not windows:
        return np.zeros((0, 0, 0), dtype=np.uint8), np.zeros(0, dtype=np.int64)
    X = np.stack([encode_multichannel(w, cfg).bits for w in windows])
    y = np.array([w.label for w in windows], dtype=np.int64)
    return X, y


def encoder_comparisons(channels: int, timesteps: int, cfg: EncoderConfig = EncoderConfig()) -> int:
    """Threshold comparisons made when encoding a window (two per level per transition)."""
    return channels * max(timesteps - 1, 0) * 2 * cfg.levels_K
