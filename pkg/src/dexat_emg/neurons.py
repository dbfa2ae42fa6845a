"""Discrete-time LIF, DEXAT and leaky readout dynamics.

Every step function is a pure transition.  States are NamedTuples whose
fields may be Python floats or numpy arrays; arrays are updated elementwise,
so one call advances a whole population.

Update order within a step is fixed: leak, add input, threshold test against
the threshold *before* this step's adaptation update, reset to zero on spike,
then update the adaptation variables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


def decay_factor(tau: float) -> float:
    """Per-step multiplier exp(-1/tau), tau in timesteps."""
    return math.exp(-1.0 / tau)


@dataclass(frozen=True)
class LifParams:
    tau_m: float = 20.0
    v_th: float = 1.0
    refractory_steps: int = 0

    def __post_init__(self):
        if self.tau_m <= 0 or self.v_th <= 0 or self.refractory_steps < 0:
            raise ValueError("LifParams require tau_m > 0, v_th > 0, refractory_steps >= 0")

    @property
    def alpha(self) -> float:
        return decay_factor(self.tau_m)


@dataclass(frozen=True)
class DexatParams:
    tau_m: float = 20.0
    tau_a1: float = 21.0
    tau_a2: float = 400.0
    beta1: float = 1.0
    beta2: float = 1.0
    b0: float = 1.0
    refractory_steps: int = 0

    def __post_init__(self):
        if min(self.tau_m, self.tau_a1, self.tau_a2) <= 0:
            raise ValueError("time constants must be positive")
        if not self.tau_a1 < self.tau_a2:
            raise ValueError("tau_a1 must be shorter than tau_a2")
        if self.beta1 < 0 or self.beta2 < 0 or self.b0 <= 0 or self.refractory_steps < 0:
            raise ValueError("DexatParams require beta >= 0, b0 > 0, refractory_steps >= 0")

    @property
    def alpha(self) -> float:
        return decay_factor(self.tau_m)

    @property
    def rho1(self) -> float:
        return decay_factor(self.tau_a1)

    @property
    def rho2(self) -> float:
        return decay_factor(self.tau_a2)


@dataclass(frozen=True)
class ReadoutParams:
    tau_out: float = 20.0

    def __post_init__(self):
        if self.tau_out <= 0:
            raise ValueError("tau_out must be positive")

    @property
    def kappa(self) -> float:
        return decay_factor(self.tau_out)


class LifState(NamedTuple):
    v: float | np.ndarray = 0.0
    refrac_left: int | np.ndarray = 0


class DexatState(NamedTuple):
    v: float | np.ndarray = 0.0
    b1: float | np.ndarray = 0.0
    b2: float | np.ndarray = 0.0
    refrac_left: int | np.ndarray = 0


def _fire(v, threshold, refrac_left, refractory_steps):
    can_fire = np.asarray(refrac_left) == 0
    z = (np.asarray(v) > threshold) & can_fire
    v = np.where(z, 0.0, v)
    refrac = np.where(z, refractory_steps, np.maximum(np.asarray(refrac_left) - 1, 0))
    return v, refrac, z.astype(np.float64)


def _unwrap(x):
    return x.item() if isinstance(x, np.ndarray) and x.ndim == 0 else x


def lif_step(state: LifState, input_current, p: LifParams) -> tuple[LifState, float | np.ndarray]:
    v = p.alpha * state.v + input_current
    v, refrac, z = _fire(v, p.v_th, state.refrac_left, p.refractory_steps)
    return LifState(_unwrap(v), _unwrap(refrac)), _unwrap(z)


def dexat_threshold(state: DexatState, p: DexatParams):
    return p.b0 + p.beta1 * state.b1 + p.beta2 * state.b2


def dexat_step(state: DexatState, input_current, p: DexatParams) -> tuple[DexatState, float | np.ndarray]:
    threshold = dexat_threshold(state, p)
    v = p.alpha * state.v + input_current
    v, refrac, z = _fire(v, threshold, state.refrac_left, p.refractory_steps)
    rho1, rho2 = p.rho1, p.rho2
    b1 = rho1 * state.b1 + (1.0 - rho1) * z
    b2 = rho2 * state.b2 + (1.0 - rho2) * z
    return DexatState(_unwrap(v), _unwrap(b1), _unwrap(b2), _unwrap(refrac)), _unwrap(z)


def readout_step(y, input_current, p: ReadoutParams, bias=0.0):
    """Non-spiking leaky integrator; converges to input/(1-kappa) + bias."""
    k = p.kappa
    return k * y + input_current + bias * (1.0 - k)
