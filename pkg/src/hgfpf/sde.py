"""Euler-Maruyama simulation of the signal/observation pair

    dX = g(X) dt + sigma(X) sqrt(Q) dB,    dZ = h(X) dt + sqrt(R) dW.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .gain import ObservationFn
from .rng import STREAM_INCREMENTS, STREAM_TRUTH_OBS, STREAM_TRUTH_STATE, make_rng

__all__ = [
    "SdeModel",
    "TruthRun",
    "SimulationError",
    "n_steps",
    "simulate_truth",
    "gaussian_increments",
    "double_well_model",
    "ou_model",
]


class SimulationError(ArithmeticError):
    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class SdeModel:
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    observation: ObservationFn
    state_noise_cov: float = 1.0
    obs_noise_cov: float = 1.0
    name: str = ""

    def __post_init__(self):
        if self.state_noise_cov < 0 or self.obs_noise_cov < 0:
            raise ValueError("noise covariances must be non-negative")
        if not isinstance(self.observation, ObservationFn):
            object.__setattr__(self, "observation", ObservationFn(self.observation))


def _cubic_drift(x):
    return x * (1.0 - x * x)


def _unit(x):
    return np.ones_like(np.asarray(x, dtype=float))


def _identity(x):
    return np.asarray(x, dtype=float)


def _neg(x):
    return -np.asarray(x, dtype=float)


def double_well_model(state_noise_cov: float = 0.4, obs_noise_cov: float = 0.4) -> SdeModel:
    """dX = X(1 - X^2) dt + dB, dZ = X dt + dW with scaled noises."""
    return SdeModel(_cubic_drift, _unit, ObservationFn(_identity, "h(x) = x"),
                    state_noise_cov, obs_noise_cov, "double-well")


def ou_model(state_noise_cov: float = 1.0, obs_noise_cov: float = 1.0) -> SdeModel:
    return SdeModel(_neg, _unit, ObservationFn(_identity, "h(x) = x"),
                    state_noise_cov, obs_noise_cov, "ornstein-uhlenbeck")


def n_steps(T: float, dt: float) -> int:
    """floor(T / dt), tolerant of binary rounding (40 / 0.01 is 4000)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if T < dt * (1 - 1e-12):
        raise ValueError("T must be at least dt")
    return int(math.floor(T / dt + 1e-9))


@dataclass(frozen=True)
class TruthRun:
    """States X_k and increments dZ_k = Z_{k+1} - Z_k at t_k = k dt, k = 0..floor(T/dt)."""

    times: np.ndarray
    states: np.ndarray
    obs_increments: np.ndarray
    seed: int
    dt: float

    def __post_init__(self):
        if not (len(self.times) == len(self.states) == len(self.obs_increments)):
            raise ValueError("times, states and increments must have equal lengths")

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "state", "dZ"])
            for row in zip(self.times, self.states, self.obs_increments):
                w.writerow([f"{v:.17g}" for v in row])

    def digest(self) -> str:
        import hashlib

        return hashlib.sha256(np.ascontiguousarray(self.obs_increments).tobytes()).hexdigest()


def simulate_truth(model: SdeModel, x0: float, dt: float, T: float, seed: int) -> TruthRun:
    n = n_steps(T, dt)
    xi = make_rng(seed, STREAM_TRUTH_STATE).standard_normal(n + 1)
    eta = make_rng(seed, STREAM_TRUTH_OBS).standard_normal(n + 1)
    sq_dt = math.sqrt(dt)
    sq_q = math.sqrt(model.state_noise_cov)
    sq_r = math.sqrt(model.obs_noise_cov)
    states = np.empty(n + 1)
    x = float(x0)
    for k in range(n + 1):
        if not math.isfinite(x):
            raise SimulationError(f"state became non-finite at step {k}", k)
        states[k] = x
        x = x + float(model.drift(x)) * dt + float(model.diffusion(x)) * sq_q * sq_dt * xi[k]
    h = model.observation(states)
    dz = h * dt + sq_r * sq_dt * eta
    return TruthRun(np.arange(n + 1) * dt, states, dz, seed, dt)


def gaussian_increments(n: int, dt: float, cov: float, seed: int) -> np.ndarray:
    """n i.i.d. draws from N(0, cov * dt)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if cov < 0 or dt < 0:
        raise ValueError("dt and cov must be non-negative")
    return math.sqrt(cov * dt) * make_rng(seed, STREAM_INCREMENTS).standard_normal(n)
