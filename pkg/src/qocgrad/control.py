"""Piecewise-linear control signals on a uniform time grid.

A control is stored by its nodal values u_0..u_N on t_j = j*delta with
delta = T/N; between nodes it is the hat-function interpolant.  The module
provides the trapezoid penalty quadrature, exact piecewise L1/L2 integrals,
interpolation-error instrumentation, and the step-count selection rules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._io import write_csv

__all__ = [
    "ControlGrid",
    "QuadratureRule",
    "interpolate",
    "quadrature_penalty",
    "interpolation_error_norm",
    "choose_num_steps",
    "l1_norm",
    "l2_norm_squared",
    "export_control_csv",
]


@dataclass(frozen=True, eq=False)
class ControlGrid:
    """Time horizon, step count, and nodal control values (length N+1)."""

    horizon: float
    num_steps: int
    nodal_values: np.ndarray

    def __post_init__(self):
        if self.horizon <= 0 or not math.isfinite(self.horizon):
            raise ValueError("horizon must be positive and finite")
        if self.num_steps < 1:
            raise ValueError("num_steps must be at least 1")
        vals = np.asarray(self.nodal_values, dtype=float).reshape(-1).copy()
        if vals.size != self.num_steps + 1:
            raise ValueError(
                f"expected {self.num_steps + 1} nodal values, got {vals.size}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("nodal values must be finite")
        vals.flags.writeable = False
        object.__setattr__(self, "nodal_values", vals)

    @property
    def delta(self) -> float:
        return self.horizon / self.num_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.num_steps + 1) * self.delta

    @classmethod
    def constant(cls, horizon, num_steps, value=0.0) -> "ControlGrid":
        return cls(horizon, num_steps, np.full(num_steps + 1, float(value)))

    @classmethod
    def from_function(cls, horizon, num_steps, fn) -> "ControlGrid":
        times = np.arange(num_steps + 1) * (horizon / num_steps)
        return cls(horizon, num_steps, np.array([fn(t) for t in times], dtype=float))

    def with_values(self, values) -> "ControlGrid":
        return ControlGrid(self.horizon, self.num_steps, np.asarray(values, dtype=float))


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodal quadrature weights w_0..w_N."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1).copy()
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @classmethod
    def trapezoid(cls, num_steps: int) -> "QuadratureRule":
        """Composite trapezoid weights: 1/2 at the endpoints, 1 inside."""
        if num_steps < 1:
            raise ValueError("num_steps must be at least 1")
        w = np.ones(num_steps + 1)
        w[0] = w[-1] = 0.5
        return cls(w)


def trapezoid_weights(num_steps: int) -> np.ndarray:
    return QuadratureRule.trapezoid(num_steps).weights


def interpolate(grid: ControlGrid, t):
    """Hat-function interpolation of the nodal values; exact at nodes.

    ``t`` may be a scalar or an array; values outside [0, T] are rejected.
    """
    arr = np.asarray(t, dtype=float)
    slack = 1e-12 * max(1.0, grid.horizon)
    if np.any(arr < -slack) or np.any(arr > grid.horizon + slack):
        raise ValueError(f"time outside [0, {grid.horizon}]")
    out = np.interp(np.clip(arr, 0.0, grid.horizon), grid.times, grid.nodal_values)
    return float(out) if np.isscalar(t) or arr.ndim == 0 else out


def quadrature_penalty(grid: ControlGrid, alpha: float) -> float:
    """Trapezoid-rule penalty alpha * delta * sum_j w_j u_j^2."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    w = trapezoid_weights(grid.num_steps)
    return float(alpha * grid.delta * np.sum(w * grid.nodal_values**2))


def interpolation_error_norm(u_exact, grid: ControlGrid, samples_per_interval: int = 32) -> float:
    """L2 norm of (u_exact - interpolant), integrated on a fine sub-grid.

    Uses composite Simpson with ``samples_per_interval`` sub-intervals per
    grid interval (minimum 32).
    """
    m = max(32, int(samples_per_interval))
    if m % 2:
        m += 1
    frac = np.linspace(0.0, 1.0, m + 1)
    delta = grid.delta
    t_fine = grid.times[:-1, None] + frac[None, :] * delta  # (N, m+1)
    u = grid.nodal_values
    u_lin = u[:-1, None] + (u[1:] - u[:-1])[:, None] * frac[None, :]
    try:
        exact = np.asarray(u_exact(t_fine), dtype=float)
        if exact.shape != t_fine.shape:
            raise TypeError
    except TypeError:
        exact = np.array([[u_exact(t) for t in row] for row in t_fine], dtype=float)
    sq = (exact - u_lin) ** 2
    simpson = np.ones(m + 1)
    simpson[1:-1:2] = 4.0
    simpson[2:-1:2] = 2.0
    simpson *= (delta / m) / 3.0
    return float(np.sqrt(np.sum(sq @ simpson)))


def _slack_ceil(x: float) -> int:
    """Ceiling that forgives last-bit floating-point overshoot."""
    return int(math.ceil(x * (1.0 - 1e-12)))


def choose_num_steps(horizon: float, eps: float, smooth: bool = False) -> int:
    """Number of time steps needed for a target accuracy.

    Non-smooth mode: ceil(T^(3/2) / eps^(1/2)).  Smooth mode:
    ceil(T * log(T/eps) / max(1, loglog(T/eps))).  Both are floored at 2.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if smooth:
        ratio = horizon / eps
        if ratio <= 1.0:
            return 2
        lg = math.log(ratio)
        denom = max(1.0, math.log(lg)) if lg > 1.0 else 1.0
        n = _slack_ceil(horizon * lg / denom)
    else:
        n = _slack_ceil(horizon**1.5 / math.sqrt(eps))
    return max(2, n)


def l1_norm(grid: ControlGrid) -> float:
    """Exact integral of |interpolant| using per-interval closed forms."""
    a = grid.nodal_values[:-1]
    b = grid.nodal_values[1:]
    delta = grid.delta
    same_sign = a * b >= 0
    areas = np.where(
        same_sign,
        0.5 * delta * (np.abs(a) + np.abs(b)),
        # sign change inside the interval: two triangles
        0.5 * delta * (a**2 + b**2) / np.maximum(np.abs(a) + np.abs(b), 1e-300),
    )
    return float(np.sum(areas))


def l2_norm_squared(grid: ControlGrid) -> float:
    """Exact integral of the squared interpolant (per-interval closed form)."""
    a = grid.nodal_values[:-1]
    b = grid.nodal_values[1:]
    return float(np.sum(grid.delta * (a**2 + a * b + b**2) / 3.0))


def export_control_csv(grid: ControlGrid, path) -> None:
    """Write (t, u) node pairs with header ``t,u``."""
    write_csv(path, ["t", "u"], zip(grid.times.tolist(), grid.nodal_values.tolist()))
