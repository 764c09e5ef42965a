"""Error metrics: RMSE/ARMSE of state estimates, grid norms and rate fits."""

from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = ["rmse", "armse", "grid_error", "loglog_slope"]


def rmse(truth, estimate) -> float:
    """sqrt(sum_k (X_k - Xhat_k)^2): a root of the sum, not of the mean."""
    a = np.asarray(truth, dtype=float).ravel()
    b = np.asarray(estimate, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} truth values, {b.size} estimates")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def armse(rmses) -> float:
    r = np.asarray(rmses, dtype=float).ravel()
    if r.size == 0:
        raise ValueError("need at least one RMSE value")
    return float(r.mean())


def _on_grid(f, grid: np.ndarray) -> np.ndarray:
    vals = f(grid) if callable(f) else f
    vals = np.broadcast_to(np.asarray(vals, dtype=float), grid.shape)
    return vals


def grid_error(f_ref: Callable | np.ndarray, f_test: Callable | np.ndarray,
               grid, norm: str = "L2") -> float:
    """Composite-trapezoid ||f_ref - f_test|| over the grid interval.

    Either function may be given as a callable or as its values on the grid.
    """
    x = np.asarray(grid, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("grid needs at least two points")
    if np.any(np.diff(x) <= 0):
        raise ValueError("grid must be strictly increasing")
    d = _on_grid(f_ref, x) - _on_grid(f_test, x)
    if norm == "L1":
        return float(np.trapezoid(np.abs(d), x))
    if norm == "L2":
        return float(np.sqrt(np.trapezoid(d * d, x)))
    raise ValueError(f"norm must be 'L1' or 'L2', got {norm!r}")


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of log y against log x."""
    x = np.asarray(xs, dtype=float).ravel()
    y = np.asarray(ys, dtype=float).ravel()
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need at least two (x, y) pairs of equal length")
    if np.any(~(x > 0)) or np.any(~(y > 0)):
        raise ValueError("log-log fit needs strictly positive data")
    lx = np.log(x)
    if np.ptp(lx) == 0:
        raise ValueError("xs must not all be equal")
    return float(np.polyfit(lx, np.log(y), 1)[0])
