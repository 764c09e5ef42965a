"""Generalized (L2-orthonormal) Hermite functions.

    Ht_n(x) = pi^{-1/4} (2^n n!)^{-1/2} exp(-x^2/2) H_n(x)

evaluated by the forward three-term recursion

    Ht_0 = pi^{-1/4} e^{-x^2/2},   Ht_1 = sqrt(2) x Ht_0,
    Ht_{n+1} = sqrt(2/(n+1)) x Ht_n - sqrt(n/(n+1)) Ht_{n-1}.

Every evaluator accepts a scalar or a 1-D array of points. Tables have the
basis index on the first axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .quadrature import QuadratureRule

__all__ = [
    "BasisSpec",
    "HermiteSeries",
    "eval_all",
    "eval_derivative_all",
    "eval_series",
    "eval_series_derivative",
    "project",
]

PI_M14 = np.pi ** -0.25


@dataclass(frozen=True)
class BasisSpec:
    """Span of Ht_0..Ht_M."""

    order_M: int

    def __post_init__(self):
        if int(self.order_M) != self.order_M or self.order_M < 0:
            raise ValueError(f"order_M must be a non-negative integer, got {self.order_M!r}")

    @property
    def size(self) -> int:
        return self.order_M + 1


@dataclass(frozen=True)
class HermiteSeries:
    """Finite expansion sum_m coeffs[m] * Ht_m(x)."""

    coeffs: np.ndarray
    basis: BasisSpec = field(default=None)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).ravel()
        if c.size == 0:
            raise ValueError("a series needs at least one coefficient")
        if not np.all(np.isfinite(c)):
            raise ValueError("series coefficients must be finite")
        basis = self.basis if self.basis is not None else BasisSpec(c.size - 1)
        if basis.size != c.size:
            raise ValueError(f"{c.size} coefficients for a basis of order {basis.order_M}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "basis", basis)

    @property
    def order_M(self) -> int:
        return self.basis.order_M

    def __add__(self, other: "HermiteSeries") -> "HermiteSeries":
        return HermiteSeries(self.coeffs + other.coeffs, self.basis)

    def __mul__(self, alpha: float) -> "HermiteSeries":
        return HermiteSeries(alpha * self.coeffs, self.basis)

    __rmul__ = __mul__

    def __call__(self, x):
        return eval_series(self, x)


def _as_points(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    if arr.ndim > 1:
        raise ValueError("points must be a scalar or a 1-D array")
    if not np.all(np.isfinite(arr)):
        raise ValueError("Hermite functions need finite arguments")
    return np.atleast_1d(arr), arr.ndim == 0


def _table(n_max: int, x: np.ndarray) -> np.ndarray:
    """Rows Ht_0..Ht_{n_max} at points x, shape (n_max + 1, len(x))."""
    out = np.empty((n_max + 1, x.size))
    out[0] = PI_M14 * np.exp(-0.5 * x * x)
    if n_max >= 1:
        out[1] = np.sqrt(2.0) * x * out[0]
    for n in range(1, n_max):
        out[n + 1] = np.sqrt(2.0 / (n + 1)) * x * out[n] - np.sqrt(n / (n + 1)) * out[n - 1]
    return out


def _derivative_from_table(vals: np.ndarray, M: int) -> np.ndarray:
    # Ht'_n = sqrt(n/2) Ht_{n-1} - sqrt((n+1)/2) Ht_{n+1}; vals has rows 0..M+1
    n = np.arange(M + 1, dtype=float)[:, None]
    d = -np.sqrt((n + 1) / 2.0) * vals[1:M + 2]
    d[1:] += np.sqrt(n[1:] / 2.0) * vals[0:M]
    return d


def eval_all(spec: BasisSpec, x):
    """Return [Ht_0(x), ..., Ht_M(x)].

    Shape (M+1,) for scalar x, (M+1, n) for an array of n points.
    """
    pts, scalar = _as_points(x)
    vals = _table(spec.order_M, pts)
    return vals[:, 0] if scalar else vals


def eval_derivative_all(spec: BasisSpec, x):
    """Return [Ht'_0(x), ..., Ht'_M(x)], using the table up to order M+1."""
    pts, scalar = _as_points(x)
    d = _derivative_from_table(_table(spec.order_M + 1, pts), spec.order_M)
    return d[:, 0] if scalar else d


def eval_series(series: HermiteSeries, x):
    vals = eval_all(series.basis, x)
    return series.coeffs @ vals


def eval_series_derivative(series: HermiteSeries, x):
    d = eval_derivative_all(series.basis, x)
    return series.coeffs @ d


def project(f: Callable[[np.ndarray], np.ndarray], spec: BasisSpec,
            quad: QuadratureRule | None = None) -> HermiteSeries:
    """L2-orthogonal projection onto span{Ht_0..Ht_M}.

    The coefficients int f Ht_m dx come from ``quad`` (default: composite
    Gauss-Legendre on [-12, 12]); ``f`` must accept an array of points.
    Raises QuadratureError if refinement does not settle.
    """
    quad = quad or QuadratureRule()
    coeffs = quad.integrate(lambda x: _table(spec.order_M, x) * np.asarray(f(x), dtype=float))
    return HermiteSeries(coeffs, spec)
