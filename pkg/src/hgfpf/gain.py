"""Gain-function solvers for the scalar feedback particle filter.

The gain K solves (p K)' = -(h - hhat) p. The Hermite-Galerkin route
expands the auxiliary variable f = p K in generalized Hermite functions,
with p replaced by a Gaussian KDE of the particles, and recovers
K = f / p. Baselines: the constant gain, a diffusion-map (kernel) gain,
and the exact gain by direct integration for a known density.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .density import KdeModel, ParticleEnsemble, kde_build, kde_eval, kde_eval_derivative
from .hermite import BasisSpec, HermiteSeries, _derivative_from_table, _table
from .quadrature import QuadratureError, QuadratureRule, composite_nodes

__all__ = [
    "ObservationFn",
    "RhsVector",
    "GalerkinGain",
    "ConvergenceError",
    "compute_hhat",
    "kde_hhat",
    "galerkin_rhs",
    "galerkin_solve",
    "galerkin_matrix",
    "galerkin_gain",
    "gain_eval",
    "gain_derivative_eval",
    "control_term",
    "control_u",
    "exact_gain",
    "constant_gain",
    "diffusion_map_gain",
    "COUNTERS",
]

P_FLOOR_REL = 1e-8
K_MAX = 1e3

# Instrumentation: number of KDE builds, RHS assemblies and backward solves.
COUNTERS = {"kde_build": 0, "rhs": 0, "solve": 0}


class ConvergenceError(ArithmeticError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class ObservationFn:
    """Vectorised observation function h with a label."""

    h: Callable[[np.ndarray], np.ndarray]
    description: str = ""

    def __call__(self, x):
        return np.asarray(self.h(np.asarray(x, dtype=float)), dtype=float) * np.ones_like(x, dtype=float)


def _as_obs(h) -> ObservationFn:
    return h if isinstance(h, ObservationFn) else ObservationFn(h)


def _positions(ensemble) -> np.ndarray:
    return ensemble.positions if isinstance(ensemble, ParticleEnsemble) else np.asarray(ensemble, dtype=float)


def compute_hhat(ensemble, h) -> float:
    """Sample mean of h over the particles."""
    return float(np.mean(_as_obs(h)(_positions(ensemble))))


def kde_hhat(kde: KdeModel, h, quad: QuadratureRule | None = None) -> float:
    """Integral of h against the KDE (alternative to the sample mean)."""
    h = _as_obs(h)
    quad = (quad or QuadratureRule()).widened(*kde.support)
    return float(quad.integrate(lambda x: h(x) * kde_eval(kde, x)))


@dataclass(frozen=True)
class RhsVector:
    """Entries b_0..b_{M+1}, b_l = -int (h - hhat) p Ht_l dx."""

    b: np.ndarray

    def __post_init__(self):
        b = np.array(self.b, dtype=float).ravel()
        if b.size < 2:
            raise ValueError("the right-hand side needs at least two entries (M >= 0)")
        if not np.all(np.isfinite(b)):
            raise ValueError("right-hand side must be finite")
        b.setflags(write=False)
        object.__setattr__(self, "b", b)

    @property
    def order_M(self) -> int:
        return self.b.size - 2


@lru_cache(maxsize=128)
def _nodes_table(lower: float, upper: float, npp: int, n_max: int) -> np.ndarray:
    x, _ = composite_nodes(lower, upper, npp)
    t = _table(n_max, x)
    t.setflags(write=False)
    return t


def galerkin_rhs(kde: KdeModel, h, hhat: float, M: int,
                 quad: QuadratureRule | None = None) -> RhsVector:
    """Assemble b_0..b_{M+1} by composite Gauss-Legendre quadrature.

    The support is the union of the basis decay region (``quad``'s interval,
    [-12, 12] by default) and the KDE support widened by 12 bandwidths.
    """
    if M < 0:
        raise ValueError("M must be non-negative")
    h = _as_obs(h)
    support = kde.support
    quad = (quad or QuadratureRule()).widened(*support)

    def integrand(x, level):
        hx = h(x)
        if not np.all(np.isfinite(hx)):
            raise ValueError("observation function is not finite on the quadrature support")
        table = _nodes_table(float(quad.lower), float(quad.upper),
                             quad.nodes_per_panel * 2 ** level, M + 1)
        # nodes are sorted; outside the KDE support every kernel is below e^-72
        i0, i1 = np.searchsorted(x, support)
        weight = np.zeros_like(x)
        weight[i0:i1] = -(hx[i0:i1] - hhat) * kde_eval(kde, x[i0:i1])
        return table * weight

    COUNTERS["rhs"] += 1
    return RhsVector(quad.integrate(integrand, pass_level=True))


def galerkin_matrix(M: int) -> np.ndarray:
    """The (M+2) x (M+1) tridiagonal matrix of the weak form.

    Row l reads b_l = sqrt((l+1)/2) a_{l+1} - sqrt(l/2) a_{l-1}.
    """
    A = np.zeros((M + 2, M + 1))
    for l in range(M + 2):
        if l >= 1:
            A[l, l - 1] = -math.sqrt(l / 2.0)
        if l + 1 <= M:
            A[l, l + 1] = math.sqrt((l + 1) / 2.0)
    return A


def galerkin_solve(rhs: RhsVector | np.ndarray) -> tuple[HermiteSeries, float]:
    """Backward recursion through rows M+1 down to 1.

    Returns the coefficients a_0..a_M and the mismatch of the unused row 0,
    |a_1 sqrt(1/2) - b_0| (just |b_0| when M = 0).
    """
    b = rhs.b if isinstance(rhs, RhsVector) else RhsVector(rhs).b
    M = b.size - 2
    a = np.zeros(M + 1)
    a[M] = -b[M + 1] * math.sqrt(2.0 / (M + 1))
    if M >= 1:
        a[M - 1] = -b[M] * math.sqrt(2.0 / M)
    for m in range(M - 1, 0, -1):
        a[m - 1] = (a[m + 1] * math.sqrt((m + 1) / 2.0) - b[m]) * math.sqrt(2.0 / m)
    if not np.all(np.isfinite(a)):
        raise ArithmeticError("backward recursion produced non-finite coefficients")
    residual = abs((a[1] if M >= 1 else 0.0) * math.sqrt(0.5) - b[0])
    COUNTERS["solve"] += 1
    return HermiteSeries(a, BasisSpec(M)), residual


@dataclass(frozen=True)
class GalerkinGain:
    """K = f / p with f a Hermite series and p a KDE.

    The density is floored at ``p_floor`` and |K| is clamped at ``k_max``.
    """

    series: HermiteSeries
    kde: KdeModel
    hhat: float
    row0_residual: float = 0.0
    p_floor: float = 0.0
    k_max: float = K_MAX

    def __call__(self, x):
        return gain_eval(self, x)


def density_floor(kde: KdeModel, rel: float = P_FLOOR_REL) -> float:
    """rel times the KDE maximum over the particle hull (centers plus a grid)."""
    c = kde.centers
    probe = np.concatenate([c, np.linspace(c.min(), c.max(), 65)])
    return rel * float(np.max(kde_eval(kde, probe)))


def galerkin_gain(ensemble, h, M: int, eps: float, quad: QuadratureRule | None = None,
                  hhat: float | None = None, p_floor_rel: float = P_FLOOR_REL,
                  k_max: float = K_MAX) -> GalerkinGain:
    """KDE build, RHS assembly and backward solve for one particle cloud.

    ``hhat`` defaults to the sample mean of h over the particles.
    """
    h = _as_obs(h)
    kde = kde_build(ensemble, eps)
    COUNTERS["kde_build"] += 1
    if hhat is None:
        hhat = compute_hhat(kde.centers, h)
    series, r0 = galerkin_solve(galerkin_rhs(kde, h, hhat, M, quad))
    return GalerkinGain(series, kde, float(hhat), r0, density_floor(kde, p_floor_rel), k_max)


def _f_and_derivative(series: HermiteSeries, x: np.ndarray):
    table = _table(series.order_M + 1, x)
    f = series.coeffs @ table[:-1]
    df = series.coeffs @ _derivative_from_table(table, series.order_M)
    return f, df


def _gain_parts(g: GalerkinGain, x):
    pts = np.atleast_1d(np.asarray(x, dtype=float))
    f, df = _f_and_derivative(g.series, pts)
    p = kde_eval(g.kde, pts)
    floored = p < g.p_floor
    p_used = np.where(floored, g.p_floor, p)
    dp = np.where(floored, 0.0, kde_eval_derivative(g.kde, pts))
    K = f / p_used
    dK = (df * p_used - f * dp) / (p_used * p_used)
    clamped = np.abs(K) > g.k_max
    K = np.clip(K, -g.k_max, g.k_max)
    dK = np.where(clamped, 0.0, dK)
    return K, dK


def _shape_like(x, v):
    return float(v[0]) if np.ndim(x) == 0 else v


def gain_eval(g: GalerkinGain, x):
    return _shape_like(x, _gain_parts(g, x)[0])


def gain_derivative_eval(g: GalerkinGain, x):
    """K' = (f' p - f p') / p^2 with the same floor and clamp as gain_eval."""
    return _shape_like(x, _gain_parts(g, x)[1])


def control_term(K, dK, hx, hhat: float, obs_noise_cov: float = 1.0):
    """u = -K (h + hhat) / 2 + R K K' / 2 for gain K already scaled by 1/R."""
    return -0.5 * K * (hx + hhat) + 0.5 * obs_noise_cov * K * dK


def control_u(g: GalerkinGain, h, x):
    """Scalar control u = -K(x)(h(x) + hhat)/2 + K(x) K'(x)/2."""
    K, dK = _gain_parts(g, x)
    hx = _as_obs(h)(np.atleast_1d(np.asarray(x, dtype=float)))
    return _shape_like(x, control_term(K, dK, hx, g.hhat))


def exact_gain(p: Callable[[np.ndarray], np.ndarray], h, hhat: float, x,
               quad: QuadratureRule | None = None, p_floor: float = 1e-300):
    """K(x) = -(1/p(x)) int_{-inf}^x (h(y) - hhat) p(y) dy.

    The tails are cut at ``quad``'s interval. Points right of the balance
    point use int_{-inf}^x = I - int_x^{inf} (I the full integral), which
    keeps the right tail accurate.
    """
    h = _as_obs(h)
    quad = quad or QuadratureRule()
    pts = np.atleast_1d(np.asarray(x, dtype=float))
    lo, hi = float(quad.lower), float(quad.upper)
    if np.any(pts < lo) or np.any(pts > hi):
        raise ValueError(f"points must lie in the quadrature interval [{lo}, {hi}]")
    order = np.argsort(pts, kind="stable")
    edges = np.concatenate([[lo], pts[order], [hi]])
    n = quad.nodes_per_panel

    def piece_integrals(level_nodes: int):
        xg, wg = np.polynomial.legendre.leggauss(level_nodes)
        pieces = np.zeros(edges.size - 1)
        for start in range(0, edges.size - 1, 4096):
            stop = min(start + 4096, edges.size - 1)
            a = edges[start:stop]
            b = edges[start + 1:stop + 1]
            # one unit panel at most per sub-interval; long gaps get split
            n_sub = np.maximum(1, np.ceil((b - a) / quad.panel_width)).astype(int)
            for k in np.unique(n_sub):
                sel = np.nonzero(n_sub == k)[0]
                aa, bb = a[sel], b[sel]
                sub = np.linspace(0.0, 1.0, k + 1)
                lefts = aa[:, None] + (bb - aa)[:, None] * sub[None, :-1]
                half = 0.5 * (bb - aa)[:, None] / k
                nodes = (lefts + half)[:, :, None] + half[:, :, None] * xg[None, None, :]
                vals = (h(nodes.ravel()) - hhat) * np.asarray(p(nodes.ravel()), dtype=float)
                vals = vals.reshape(nodes.shape) * wg
                pieces[start + sel] = (vals.sum(axis=2) * half).sum(axis=1)
        return pieces

    pieces = piece_integrals(n)
    finer = piece_integrals(2 * n)
    if np.max(np.abs(finer - pieces)) > quad.tol:
        raise QuadratureError("exact-gain quadrature did not settle under refinement")
    pieces = finer
    total = pieces.sum()
    left = np.cumsum(pieces)[:-1]
    right = np.cumsum(pieces[::-1])[::-1][1:]
    integral_sorted = np.where(np.abs(left) <= np.abs(right), left, total - right)
    integral = np.empty_like(integral_sorted)
    integral[order] = integral_sorted
    px = np.asarray(p(pts), dtype=float)
    low = px < p_floor
    if np.any(low):
        warnings.warn(f"density below {p_floor:g} at {int(low.sum())} point(s); clamped",
                      RuntimeWarning, stacklevel=2)
        px = np.maximum(px, p_floor)
    return _shape_like(x, -integral / px)


def constant_gain(ensemble, h) -> float:
    """Empirical E[(h - hhat) X]: the Galerkin gain on the single basis x."""
    X = _positions(ensemble)
    hx = _as_obs(h)(X)
    return float(np.mean((hx - hx.mean()) * X))


def _dm_markov_matrix(X: np.ndarray, eps_dm: float) -> np.ndarray:
    G = np.exp(-(X[:, None] - X[None, :]) ** 2 / (4.0 * eps_dm))
    d = np.sqrt(G.sum(axis=1))
    k = G / d[:, None] / d[None, :]
    return k / k.sum(axis=1)[:, None]


_DM_BLOCK = 64
_DM_BLOCK_MAX_NP = 48


def _dm_fixed_point(T: np.ndarray, forcing: np.ndarray, iters: int, tol: float):
    """Sweeps phi <- C(T phi + forcing), C the mean-removal, from phi = 0.

    Returns (phi, sweeps, last_change). For small ensembles the affine map
    is advanced ``_DM_BLOCK`` sweeps per matrix product; every intermediate
    sweep is still checked against ``tol``.
    """
    n = forcing.size
    A = T - T.mean(axis=0, keepdims=True)
    c = forcing - forcing.mean()
    phi = np.zeros(n)
    change = math.inf
    if n > _DM_BLOCK_MAX_NP:
        for sweep in range(1, iters + 1):
            new = A @ phi + c
            change = float(np.max(np.abs(new - phi)))
            phi = new
            if change < tol:
                return phi, sweep, change
        return phi, iters, change
    # powers[j] = A^(j+1), offsets[j] = (I + A + ... + A^j) c
    powers = np.empty((_DM_BLOCK, n, n))
    offsets = np.empty((_DM_BLOCK, n))
    powers[0], offsets[0] = A, c
    for j in range(1, _DM_BLOCK):
        powers[j] = A @ powers[j - 1]
        offsets[j] = A @ offsets[j - 1] + c
    stacked = powers.reshape(_DM_BLOCK * n, n)
    done = 0
    while done < iters:
        block = (stacked @ phi).reshape(_DM_BLOCK, n) + offsets
        seq = np.vstack([phi, block])
        changes = np.max(np.abs(np.diff(seq, axis=0)), axis=1)
        take = min(_DM_BLOCK, iters - done)
        hit = np.nonzero(changes[:take] < tol)[0]
        if hit.size:
            j = int(hit[0])
            return block[j], done + j + 1, float(changes[j])
        phi, change = block[take - 1], float(changes[take - 1])
        done += take
    return phi, iters, change


def diffusion_map_gain(ensemble, h, eps_dm: float = 0.1, iters: int = 10_000,
                       tol: float = 1e-9, hhat: float | None = None,
                       strict: bool = True, info: dict | None = None) -> np.ndarray:
    """Per-particle gain from the kernel (diffusion-map) fixed point.

    Gaussian affinities with variance 2 eps_dm are symmetrically normalised
    by the square roots of their row sums and turned into a Markov matrix T.
    Phi solves Phi = T Phi + eps_dm (h - hhat) by iteration (mean-zero at
    every sweep). With r = Phi + eps_dm h, the gain at X^i is the
    T-weighted covariance of r and X over row i, divided by 2 eps_dm.

    If ``iters`` sweeps do not reach ``tol``, raises ConvergenceError, or
    with ``strict=False`` keeps the last iterate. ``info`` (if given)
    receives the sweep count, the last change and a convergence flag.
    """
    X = _positions(ensemble)
    if X.size < 2:
        raise ValueError("the kernel gain needs at least two particles")
    if not eps_dm > 0:
        raise ValueError("eps_dm must be positive")
    hx = _as_obs(h)(X)
    if hhat is None:
        hhat = float(hx.mean())
    T = _dm_markov_matrix(X, eps_dm)
    phi, sweeps, change = _dm_fixed_point(T, eps_dm * (hx - hhat), iters, tol)
    converged = change < tol
    if info is not None:
        info.update(sweeps=sweeps, change=change, converged=converged)
    if not converged and strict:
        raise ConvergenceError(
            f"diffusion-map fixed point did not converge in {iters} sweeps (last change {change:.3e})",
            change)
    r = phi + eps_dm * hx
    r_bar = T @ r
    x_bar = T @ X
    return (T * (r[None, :] - r_bar[:, None]) * (X[None, :] - x_bar[:, None])).sum(axis=1) / (2.0 * eps_dm)
