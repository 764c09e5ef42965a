"""Particle ensembles, Gaussian-kernel density estimates and reference mixtures."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import STREAM_SAMPLE, make_rng

__all__ = [
    "ParticleEnsemble",
    "KdeModel",
    "GaussianMixture",
    "kde_build",
    "kde_eval",
    "kde_eval_derivative",
    "optimal_bandwidth",
    "calibrated_bandwidth_constant",
    "amise_bandwidth_constant",
    "mixture_eval",
    "mixture_derivative",
    "mixture_sample",
    "example1_mixture",
]

INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
_CHUNK = 1 << 16  # max entries of one point-by-center block (cache-sized)


def _frozen(a, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ParticleEnsemble:
    positions: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "positions", _frozen(self.positions, "positions"))

    @property
    def Np(self) -> int:
        return self.positions.size

    def __len__(self) -> int:
        return self.positions.size


@dataclass(frozen=True)
class KdeModel:
    """p(x) = (1/Np) sum_i N(x; X^i, eps^2)."""

    centers: np.ndarray
    bandwidth_eps: float

    def __post_init__(self):
        object.__setattr__(self, "centers", _frozen(self.centers, "centers"))
        if not (np.isfinite(self.bandwidth_eps) and self.bandwidth_eps > 0):
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth_eps!r}")

    @property
    def Np(self) -> int:
        return self.centers.size

    @property
    def support(self) -> tuple[float, float]:
        """Interval outside which every kernel is below e^{-72} of its peak."""
        pad = 12.0 * self.bandwidth_eps
        return float(self.centers.min() - pad), float(self.centers.max() + pad)

    def __call__(self, x):
        return kde_eval(self, x)


def kde_build(ensemble: ParticleEnsemble | np.ndarray, eps: float) -> KdeModel:
    if not eps > 0:
        raise ValueError(f"bandwidth must be positive, got {eps!r}")
    positions = ensemble.positions if isinstance(ensemble, ParticleEnsemble) else ensemble
    return KdeModel(positions, float(eps))


def _kernel_sums(model: KdeModel, x, derivative: bool):
    pts = np.asarray(x, dtype=float)
    flat = np.atleast_1d(pts).ravel()
    if not np.all(np.isfinite(flat)):
        raise ValueError("evaluation points must be finite")
    eps = model.bandwidth_eps
    xs, cs = flat / eps, model.centers / eps
    out = np.empty(flat.size)
    step = max(1, _CHUNK // cs.size)
    buf = np.empty((min(step, flat.size), cs.size))
    tmp = np.empty_like(buf) if derivative else None
    for s in range(0, flat.size, step):
        u = buf[:min(step, flat.size - s)]
        np.subtract.outer(xs[s:s + step], cs, out=u)
        if derivative:
            k = tmp[:u.shape[0]]
            np.multiply(u, u, out=k)
            k *= -0.5
            np.exp(k, out=k)
            k *= u
        else:
            k = u
            np.square(k, out=k)
            k *= -0.5
            np.exp(k, out=k)
        out[s:s + step] = k.sum(axis=1)
    scale = INV_SQRT_2PI / (eps * cs.size)
    if derivative:
        scale = -scale / eps
    out *= scale
    return out[0] if pts.ndim == 0 else out.reshape(pts.shape)


def kde_eval(model: KdeModel, x):
    """Density estimate at x (scalar or array). Underflows to 0 far from the centers."""
    return _kernel_sums(model, x, derivative=False)


def kde_eval_derivative(model: KdeModel, x):
    return _kernel_sums(model, x, derivative=True)


def optimal_bandwidth(Np: int, s: int = 2, c: float = 1.0) -> float:
    """Rate-optimal bandwidth c * Np^(-1/(2s+1)) for a density of smoothness s."""
    if Np < 1:
        raise ValueError("Np must be at least 1")
    if s < 2:
        raise ValueError("smoothness s must be >= 2")
    if not c > 0:
        raise ValueError("c must be positive")
    return c * Np ** (-1.0 / (2 * s + 1))


def calibrated_bandwidth_constant(eps_ref: float = 0.5, Np_ref: int = 200, s: int = 2) -> float:
    """The c for which optimal_bandwidth(Np_ref, s, c) == eps_ref."""
    return eps_ref * Np_ref ** (1.0 / (2 * s + 1))


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray = field(default=None)

    def __post_init__(self):
        w = _frozen(self.weights, "weights")
        m = _frozen(self.means, "means")
        v = _frozen(self.variances, "variances")
        if not (w.size == m.size == v.size):
            raise ValueError("weights, means and variances must have equal length")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if np.any(v <= 0):
            raise ValueError("variances must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    @property
    def mean(self) -> float:
        return float(self.weights @ self.means)

    def __call__(self, x):
        return mixture_eval(self, x)


def example1_mixture(mu: float = 1.0, var: float = 0.2) -> GaussianMixture:
    """Equal-weight mixture of N(-mu, var) and N(mu, var)."""
    return GaussianMixture([0.5, 0.5], [-mu, mu], [var, var])


def amise_bandwidth_constant(mix: GaussianMixture) -> float:
    """c with c * Np^(-1/5) the AMISE-optimal Gaussian-kernel bandwidth for ``mix``.

    c = (R(K) / R(p''))^(1/5) with R(K) = 1 / (2 sqrt(pi)); R(p'') = int p''^2
    has a closed form for a mixture (fourth derivative of a Gaussian of
    variance v_i + v_j at mu_i - mu_j).
    """
    d = mix.means[:, None] - mix.means[None, :]
    v = mix.variances[:, None] + mix.variances[None, :]
    phi = np.exp(-0.5 * d * d / v) / np.sqrt(2.0 * np.pi * v)
    phi4 = phi * (d ** 4 / v ** 4 - 6.0 * d * d / v ** 3 + 3.0 / v ** 2)
    r_pdd = float(mix.weights @ phi4 @ mix.weights)
    return (0.5 / np.sqrt(np.pi) / r_pdd) ** 0.2


def mixture_eval(mix: GaussianMixture, x):
    pts = np.asarray(x, dtype=float)
    u = pts[..., None] - mix.means
    comp = np.exp(-0.5 * u * u / mix.variances) / np.sqrt(2.0 * np.pi * mix.variances)
    return comp @ mix.weights


def mixture_derivative(mix: GaussianMixture, x):
    pts = np.asarray(x, dtype=float)
    u = pts[..., None] - mix.means
    comp = np.exp(-0.5 * u * u / mix.variances) / np.sqrt(2.0 * np.pi * mix.variances)
    return (-comp * u / mix.variances) @ mix.weights


def mixture_sample(mix: GaussianMixture, n: int, seed: int) -> ParticleEnsemble:
    """n i.i.d. draws: pick a component by weight, then draw from it."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = make_rng(seed, STREAM_SAMPLE)
    k = rng.choice(mix.weights.size, size=n, p=mix.weights)
    z = rng.standard_normal(n)
    return ParticleEnsemble(mix.means[k] + np.sqrt(mix.variances[k]) * z)
