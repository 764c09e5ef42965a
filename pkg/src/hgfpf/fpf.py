"""Feedback particle filter loop for scalar signals.

Each step k: hhat from the particle sample mean, gain K and its slope at
every particle from the selected method, then the Euler-Maruyama update

    X <- X + g(X) dt + sigma(X) sqrt(Q) dB + K dZ_k + u dt,
    u = -K (h(X) + hhat) / 2 + K K' / 2.

By default K solves the unit-noise gain equation. With
``scale_gain_by_obs_noise`` the gain is divided by the observation noise
covariance R and the correction term becomes R K K' / 2.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .density import ParticleEnsemble, kde_build
from .gain import (
    ConvergenceError,
    K_MAX,
    P_FLOOR_REL,
    _gain_parts,
    constant_gain,
    control_term,
    diffusion_map_gain,
    galerkin_gain,
    kde_hhat,
)
from .quadrature import QuadratureError, QuadratureRule
from .rng import STREAM_FILTER_INIT, STREAM_FILTER_NOISE, make_rng
from .sde import SdeModel, TruthRun, n_steps

__all__ = [
    "FilterConfig",
    "FilterOutput",
    "FilterError",
    "GAIN_METHODS",
    "fpf_run",
    "particle_mean",
]


class FilterError(RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class FilterConfig:
    model: SdeModel
    Np: int = 10
    M: int = 6
    eps: float = 0.5
    dt: float = 0.01
    T: float = 400.0
    gain_method: str = "hermite_galerkin"
    init_mean: float = 0.0
    init_var: float = 1.0
    seed: int = 0
    p_floor_rel: float = P_FLOOR_REL
    k_max: float = K_MAX
    eps_dm: float = 0.1
    dm_iters: int = 10_000
    dm_strict: bool = False  # raise on a non-converged kernel fixed point instead of keeping the last iterate
    hhat_mode: str = "sample"  # or "kde": integral of h against the KDE
    scale_gain_by_obs_noise: bool = False  # True: K / R and R K K' / 2, the noise-aware form
    snapshot_every: int = 0  # 0: keep no ensembles
    quad: QuadratureRule = field(default_factory=QuadratureRule)

    def __post_init__(self):
        if self.Np < 1:
            raise ValueError("Np must be at least 1")
        if self.M < 0:
            raise ValueError("M must be non-negative")
        if not (self.eps > 0 and self.dt > 0):
            raise ValueError("eps and dt must be positive")
        if self.T < self.dt:
            raise ValueError("T must be at least dt")
        if self.gain_method not in GAIN_METHODS:
            raise ValueError(f"unknown gain method {self.gain_method!r}; "
                             f"choose from {sorted(GAIN_METHODS)}")
        if self.hhat_mode not in ("sample", "kde"):
            raise ValueError("hhat_mode must be 'sample' or 'kde'")
        if self.init_var < 0:
            raise ValueError("init_var must be non-negative")


@dataclass
class FilterOutput:
    times: np.ndarray
    estimates: np.ndarray
    ensembles: list[ParticleEnsemble] = field(default_factory=list)
    wall_time_seconds: float = 0.0
    gain_time_seconds: float = 0.0
    gain_method: str = ""
    diagnostics: dict = field(default_factory=dict)

    def to_csv(self, path: str | Path, truth: TruthRun | None = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if truth is None:
                w.writerow(["time", "estimate"])
                rows = zip(self.times, self.estimates)
            else:
                w.writerow(["time", "estimate", "state"])
                rows = zip(self.times, self.estimates, truth.states)
            for row in rows:
                w.writerow([f"{v:.17g}" for v in row])


def particle_mean(ensemble) -> float:
    X = ensemble.positions if isinstance(ensemble, ParticleEnsemble) else np.asarray(ensemble)
    return float(np.mean(X))


# A gain method maps (particles, h(particles), hhat, config) to the gain
# and its slope at each particle, for unit observation noise.
GainMethod = Callable[[np.ndarray, np.ndarray, float, FilterConfig], "tuple[np.ndarray, np.ndarray]"]


def _hermite_galerkin(X, hx, hhat, cfg):
    g = galerkin_gain(X, cfg.model.observation, cfg.M, cfg.eps, cfg.quad, hhat,
                      cfg.p_floor_rel, cfg.k_max)
    return _gain_parts(g, X)


def _constant(X, hx, hhat, cfg):
    K = float(np.mean((hx - hhat) * X))
    return np.full_like(X, K), np.zeros_like(X)


def _diffusion_map(X, hx, hhat, cfg, diagnostics=None):
    info = {}
    K = diffusion_map_gain(X, cfg.model.observation, cfg.eps_dm, cfg.dm_iters, hhat=hhat,
                           strict=cfg.dm_strict, info=info)
    if diagnostics is not None:
        diagnostics["dm_sweeps"] = diagnostics.get("dm_sweeps", 0) + info["sweeps"]
        diagnostics["dm_nonconverged_steps"] = (diagnostics.get("dm_nonconverged_steps", 0)
                                                + (not info["converged"]))
    return K, np.zeros_like(X)


GAIN_METHODS: dict[str, GainMethod] = {
    "hermite_galerkin": _hermite_galerkin,
    "constant": _constant,
    "diffusion_map": _diffusion_map,
}


def initial_particles(cfg: FilterConfig) -> np.ndarray:
    rng = make_rng(cfg.seed, STREAM_FILTER_INIT)
    return cfg.init_mean + math.sqrt(cfg.init_var) * rng.standard_normal(cfg.Np)


def fpf_run(cfg: FilterConfig, truth: TruthRun, X0: np.ndarray | None = None) -> FilterOutput:
    """Run the filter over the observation increments of ``truth``.

    Particles start from N(init_mean, init_var) unless ``X0`` is given.
    The estimate at t_k is the particle mean before the k-th update.
    """
    n = n_steps(cfg.T, cfg.dt)
    if len(truth.obs_increments) != n + 1 or not math.isclose(truth.dt, cfg.dt):
        raise ValueError("truth run does not match the filter's dt and T")
    model = cfg.model
    h = model.observation
    R = model.obs_noise_cov if cfg.scale_gain_by_obs_noise else 1.0
    if R <= 0:
        raise ValueError("gain scaling needs a positive observation noise covariance")
    method = GAIN_METHODS[cfg.gain_method]
    sq_dt = math.sqrt(cfg.dt)
    sq_q = math.sqrt(model.state_noise_cov)
    noise = make_rng(cfg.seed, STREAM_FILTER_NOISE)

    X = initial_particles(cfg) if X0 is None else np.array(X0, dtype=float)
    if X.shape != (cfg.Np,):
        raise ValueError(f"expected {cfg.Np} initial particles, got shape {X.shape}")
    estimates = np.empty(n + 1)
    ensembles = []
    gain_time = 0.0
    diagnostics = {}
    extra = {"diagnostics": diagnostics} if method is _diffusion_map else {}
    t_start = time.perf_counter()
    for k in range(n + 1):
        if not np.all(np.isfinite(X)):
            raise FilterError("non-finite particle", k)
        estimates[k] = X.mean()
        if cfg.snapshot_every and k % cfg.snapshot_every == 0:
            ensembles.append(ParticleEnsemble(X.copy(), k * cfg.dt))
        dB = sq_dt * noise.standard_normal(cfg.Np)
        t0 = time.perf_counter()
        hx = h(X)
        if cfg.hhat_mode == "sample" or cfg.gain_method != "hermite_galerkin":
            hhat = float(hx.mean())
        else:
            hhat = kde_hhat(kde_build(X, cfg.eps), h, cfg.quad)
        try:
            K, dK = method(X, hx, hhat, cfg, **extra)
        except (ConvergenceError, QuadratureError, ArithmeticError, ValueError) as exc:
            raise FilterError(f"{cfg.gain_method} gain failed: {exc}", k) from exc
        K = np.clip(np.asarray(K, dtype=float) / R, -cfg.k_max, cfg.k_max)
        dK = np.asarray(dK, dtype=float) / R
        u = control_term(K, dK, hx, hhat, R)
        X = (X + model.drift(X) * cfg.dt + model.diffusion(X) * sq_q * dB
             + K * truth.obs_increments[k] + u * cfg.dt)
        gain_time += time.perf_counter() - t0
    wall = time.perf_counter() - t_start
    return FilterOutput(truth.times.copy(), estimates, ensembles, wall, gain_time,
                        cfg.gain_method, diagnostics)
