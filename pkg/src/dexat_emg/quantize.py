"""Symmetric per-matrix 8-bit weight quantization.

Codes live in [-127, 127] so negation is exact; the scale of a matrix is
``max|w| / 127`` (1 for an all-zero matrix) and codes round half away from zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

QMAX = 127


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_matrix(w: np.ndarray, bits: int = 8) -> tuple[np.ndarray, float]:
    qmax = 2 ** (bits - 1) - 1
    w = np.asarray(w, dtype=np.float64)
    peak = float(np.max(np.abs(w))) if w.size else 0.0
    if peak == 0.0:
        return np.zeros(w.shape, dtype=np.int8 if bits <= 8 else np.int32), 1.0
    q = np.clip(round_half_away(w * qmax / peak), -qmax, qmax)
    return q.astype(np.int8 if bits <= 8 else np.int32), peak / qmax


def fake_quantize(w: np.ndarray, bits: int = 8) -> np.ndarray:
    """quantize -> dequantize, the forward-path weights of quantization-aware training."""
    q, s = quantize_matrix(w, bits)
    return q.astype(np.float64) * s


@dataclass
class QuantizedWeights:
    q_in: np.ndarray
    q_rec: np.ndarray
    q_out: np.ndarray
    s_in: float
    s_rec: float
    s_out: float
    b_out: np.ndarray

    def __post_init__(self):
        for s in (self.s_in, self.s_rec, self.s_out):
            if not s > 0:
                raise ValueError("quantization scales must be positive")

    def dequantize(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (
            self.q_in.astype(np.float64) * self.s_in,
            self.q_rec.astype(np.float64) * self.s_rec,
            self.q_out.astype(np.float64) * self.s_out,
        )
