"""Time-dependent propagation of controlled quantum systems.

The effective Hamiltonian at control amplitude c is H0 - c*mu.  Two per-step
propagators are provided: a midpoint-exponential rule (default; each interval
applies the exponential of the Hamiltonian frozen at the interval midpoint of
the interpolated control) and a truncated time-ordered series with uniform
in-interval sampling.  The matrix-exponential action itself is a truncated
Taylor series with an a-priori term count from the operator norm bound, so
identical inputs always produce bit-identical trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._io import write_csv
from .control import ControlGrid
from .operators import QuantumState, SparseHermitianOperator

__all__ = [
    "PropagatorConfig",
    "TrajectoryRecord",
    "SeriesUnderConvergedError",
    "expm_apply",
    "step",
    "dyson_step",
    "evolve",
    "propagate_amplitudes",
    "write_trajectory_csv",
]


class SeriesUnderConvergedError(RuntimeError):
    """Truncated series output drifted too far from unit norm."""


@dataclass(frozen=True)
class PropagatorConfig:
    method: str = "midpoint_expm"        # "midpoint_expm" | "dyson"
    dyson_order: int = 2                 # truncation order K
    dyson_points: int = 4                # in-interval sample count M
    substeps_per_interval: int = 1
    expm_tolerance: float = 1e-12
    renormalize: bool = True             # unit-norm correction after each step
    dyson_drift_tolerance: float = 1e-6

    def __post_init__(self):
        if self.method not in ("midpoint_expm", "dyson"):
            raise ValueError(f"unknown propagator method {self.method!r}")
        if not 0 <= self.dyson_order <= 6:
            raise ValueError("dyson_order must lie in 0..6")
        if self.dyson_points < 1:
            raise ValueError("dyson_points must be at least 1")
        if self.substeps_per_interval < 1:
            raise ValueError("substeps_per_interval must be at least 1")
        if not 0 < self.expm_tolerance <= 1e-6:
            raise ValueError("expm_tolerance must lie in (0, 1e-6]")


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """States at every node t_0..t_N plus an echo of the configuration."""

    states: np.ndarray  # (N+1, D) complex
    times: np.ndarray
    config: PropagatorConfig

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.complex128)
        norms = np.linalg.norm(states, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            worst = float(np.max(np.abs(norms - 1.0)))
            raise ValueError(f"trajectory contains non-unit state (drift {worst:.3e})")
        states.flags.writeable = False
        object.__setattr__(self, "states", states)

    def state(self, j: int) -> QuantumState:
        return QuantumState(self.states[j])


class _EffectiveHamiltonian:
    """H0 - c*mu with a fused tridiagonal fast path.

    ``c`` may be a scalar or an array of per-row control values for batched
    states of shape (..., D).
    """

    def __init__(self, h0: SparseHermitianOperator, mu: SparseHermitianOperator | None):
        if mu is not None and mu.dimension != h0.dimension:
            raise ValueError("operator dimensions differ")
        self.h0 = h0
        self.mu = mu
        self.dimension = h0.dimension
        kinds_ok = h0.kind in ("diagonal", "tridiagonal") and (
            mu is None or mu.kind in ("diagonal", "tridiagonal")
        )
        self.fused = kinds_ok
        if kinds_ok:
            d = h0.dimension
            self.d0 = h0.diag.astype(float)
            self.e0 = h0.off.astype(float) if h0.kind == "tridiagonal" else None
            if mu is None:
                self.dmu = np.zeros(d)
                self.emu = None
            else:
                self.dmu = mu.diag.astype(float)
                self.emu = mu.off.astype(float) if mu.kind == "tridiagonal" else None
        self.bound0 = h0.row_sum_bound()
        self.bound_mu = mu.row_sum_bound() if mu is not None else 0.0

    def norm_bound(self, c) -> float:
        return self.bound0 + float(np.max(np.abs(c))) * self.bound_mu

    def diag_off(self, c):
        """Fused (diag, off) arrays at control value(s) c."""
        c_arr = np.asarray(c, dtype=float)
        if c_arr.ndim == 0:
            d = self.d0 - float(c_arr) * self.dmu
            if self.e0 is None and self.emu is None:
                e = None
            else:
                e = (self.e0 if self.e0 is not None else 0.0) - (
                    float(c_arr) * self.emu if self.emu is not None else 0.0
                )
                e = np.asarray(e, dtype=float)
        else:
            d = self.d0 - c_arr[..., None] * self.dmu
            if self.emu is not None:
                e = (self.e0 if self.e0 is not None else 0.0) - c_arr[..., None] * self.emu
            else:
                e = self.e0
        return d, e

    def apply(self, v: np.ndarray, c) -> np.ndarray:
        if self.fused:
            d, e = self.diag_off(c)
            out = d * v
            if e is not None:
                out[..., 1:] += e * v[..., :-1]
                out[..., :-1] += e * v[..., 1:]
            return out
        out = self.h0.apply_array(v)
        if self.mu is not None:
            c_arr = np.asarray(c, dtype=float)
            factor = c_arr if c_arr.ndim == 0 else c_arr[..., None]
            out = out - factor * self.mu.apply_array(v)
        return out

    def apply_mu(self, v: np.ndarray) -> np.ndarray:
        if self.mu is None:
            return np.zeros_like(v)
        return self.mu.apply_array(v)


def _tridiag_apply(d, e, v):
    out = d * v
    if e is not None:
        out[..., 1:] += e * v[..., :-1]
        out[..., :-1] += e * v[..., 1:]
    return out


def _term_count(x: float, tol: float) -> int:
    """Terms needed so the Taylor tail of exp at argument x stays below tol."""
    if x == 0.0:
        return 0
    n = 1
    bound = x * math.e  # tail after the k=0 term
    while bound > tol and n < 120:
        n += 1
        bound *= x / n
    return n


def _taylor_exp(apply_h, v, coef, nterms):
    w = v.copy()
    term = v
    for k in range(1, nterms + 1):
        term = (coef / k) * apply_h(term)
        w += term
    return w


def _taylor_exp_frechet(apply_h, apply_mu, v, coef, mu_coef, nterms):
    """Joint series for (exp(A) v, dA-direction derivative applied to v).

    A = coef*H, and the derivative direction is mu_coef*Mu:
    p_k = (coef/k) H p_{k-1};  q_k = (coef/k) H q_{k-1} + (mu_coef/k) Mu p_{k-1}.
    """
    w = v.copy()
    dw = np.zeros_like(v)
    p = v
    q = None
    for k in range(1, nterms + 1):
        mu_p = apply_mu(p)
        if q is None:
            q = (mu_coef / k) * mu_p
        else:
            q = (coef / k) * apply_h(q) + (mu_coef / k) * mu_p
        p = (coef / k) * apply_h(p)
        w += p
        dw += q
    return w, dw


def _expm_eff(eff: _EffectiveHamiltonian, c, v, tau: float, tol: float) -> np.ndarray:
    """exp(-1j*tau*(H0 - c*mu)) @ v by sub-stepped truncated Taylor."""
    bound = eff.norm_bound(c)
    x = abs(tau) * bound
    m = max(1, int(math.ceil(x)))
    theta = tau / m
    nterms = _term_count(abs(theta) * bound, tol / m)
    coef = -1j * theta
    if eff.fused:
        d, e = eff.diag_off(c)
        apply_h = lambda u: _tridiag_apply(d, e, u)
    else:
        apply_h = lambda u: eff.apply(u, c)
    out = v
    for _ in range(m):
        out = _taylor_exp(apply_h, out, coef, nterms)
    return out


def _expm_eff_frechet(eff: _EffectiveHamiltonian, c: float, v, tau: float, tol: float):
    """Returns (exp(A) v, d/dc exp(A) v) for A = -1j*tau*(H0 - c*mu)."""
    bound = eff.norm_bound(c)
    x = abs(tau) * bound
    m = max(1, int(math.ceil(x)))
    theta = tau / m
    nterms = _term_count(abs(theta) * bound, tol / (4 * m)) + 2
    coef = -1j * theta
    mu_coef = 1j * theta  # derivative of A w.r.t. c is +1j*tau*mu
    if eff.fused:
        d, e = eff.diag_off(c)
        apply_h = lambda u: _tridiag_apply(d, e, u)
        dmu, emu = eff.dmu, eff.emu
        apply_mu = lambda u: _tridiag_apply(dmu, emu, u)
    else:
        apply_h = lambda u: eff.apply(u, c)
        apply_mu = eff.apply_mu
    psi = v
    phi = None
    for _ in range(m):
        new_psi, l_psi = _taylor_exp_frechet(apply_h, apply_mu, psi, coef, mu_coef, nterms)
        if phi is None:
            phi = l_psi
        else:
            phi = _taylor_exp(apply_h, phi, coef, nterms) + l_psi
        psi = new_psi
    return psi, phi


def expm_apply(op: SparseHermitianOperator, v, tau: float, tol: float = 1e-12) -> np.ndarray:
    """Action exp(-1j*tau*op) @ v with Euclidean error below tol."""
    vec = np.asarray(v, dtype=np.complex128)
    if not np.all(np.isfinite(vec.view(np.float64))):
        raise ValueError("input vector must be finite")
    if not math.isfinite(tau):
        raise ValueError("tau must be finite")
    if tol <= 0:
        raise ValueError("tol must be positive")
    eff = _EffectiveHamiltonian(op, None)
    return _expm_eff(eff, 0.0, vec.copy(), tau, tol)


def _midpoint_controls(grid: ControlGrid, substeps: int) -> np.ndarray:
    """Interpolated control value at every sub-interval midpoint, shape (N, S)."""
    u = grid.nodal_values
    theta = (np.arange(substeps) + 0.5) / substeps
    return u[:-1, None] * (1.0 - theta)[None, :] + u[1:, None] * theta[None, :]


def _renorm(v: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / nrm


def propagate_amplitudes(h0, mu, grid: ControlGrid, amplitudes,
                         config: PropagatorConfig = PropagatorConfig()) -> np.ndarray:
    """Raw time-marching kernel; returns the (N+1, D) trajectory array.

    No unit-norm requirement on the input: the map is linear when
    ``config.renormalize`` is off.
    """
    v = np.array(amplitudes, dtype=np.complex128).reshape(-1)
    if v.size != h0.dimension:
        raise ValueError("state dimension does not match operators")
    if not np.all(np.isfinite(v.view(np.float64))):
        raise ValueError("initial amplitudes must be finite")
    eff = _EffectiveHamiltonian(h0, mu)
    n = grid.num_steps
    out = np.empty((n + 1, v.size), dtype=np.complex128)
    out[0] = v
    if config.method == "dyson":
        for j in range(n):
            v = _dyson_apply(eff, grid, j, v, config.dyson_order, config.dyson_points,
                             config.dyson_drift_tolerance)
            out[j + 1] = v
        return out
    s = config.substeps_per_interval
    h = grid.delta / s
    c = _midpoint_controls(grid, s)
    tol = config.expm_tolerance
    for j in range(n):
        row = c[j]
        for k in range(s):
            v = _expm_eff(eff, row[k], v, h, tol)
        if config.renormalize:
            v = _renorm(v)
        out[j + 1] = v
    return out


def step(h0, mu, grid: ControlGrid, j: int, psi, config: PropagatorConfig = PropagatorConfig()):
    """One midpoint-exponential step from t_j to t_{j+1}."""
    if not 0 <= j < grid.num_steps:
        raise ValueError("interval index out of range")
    wrap = isinstance(psi, QuantumState)
    v = psi.amplitudes.copy() if wrap else np.array(psi, dtype=np.complex128)
    eff = _EffectiveHamiltonian(h0, mu)
    s = config.substeps_per_interval
    h = grid.delta / s
    row = _midpoint_controls(grid, s)[j]
    for k in range(s):
        v = _expm_eff(eff, row[k], v, h, config.expm_tolerance)
    if config.renormalize:
        v = _renorm(v)
    return QuantumState(v) if wrap else v


def _dyson_apply(eff: _EffectiveHamiltonian, grid: ControlGrid, j: int, v: np.ndarray,
                 order: int, points: int, drift_tolerance: float) -> np.ndarray:
    delta = grid.delta
    m = points
    total_terms = sum(math.comb(m + k - 1, k) for k in range(order + 1))
    if total_terms > 1e7:
        raise ValueError(
            f"time-ordered series would enumerate {total_terms} terms; reduce order or points"
        )
    # in-interval sample midpoints and interpolated control there
    frac = (np.arange(m) + 0.5) / m
    u = grid.nodal_values
    c_samples = u[j] * (1.0 - frac) + u[j + 1] * frac
    scale = [(-1j * delta / m) ** k for k in range(order + 1)]
    acc = v.astype(np.complex128).copy()

    def extend(vec, min_index, depth, prev_index, run_len):
        # vec carries the tie-weighted operator product for the current tuple
        nonlocal acc
        for i in range(min_index, m):
            prod = eff.apply(vec, c_samples[i])
            if i == prev_index:
                rl = run_len + 1
                prod = prod / rl
            else:
                rl = 1
            acc += scale[depth + 1] * prod
            if depth + 1 < order:
                extend(prod, i, depth + 1, i, rl)

    if order >= 1:
        extend(v.astype(np.complex128), 0, 0, -1, 0)
    nrm = float(np.linalg.norm(acc))
    drift = abs(nrm - 1.0)
    if drift >= drift_tolerance:
        raise SeriesUnderConvergedError(
            f"series under-converged: norm drift {drift:.3e} >= {drift_tolerance:.1e}; "
            "increase the truncation order or the sample count"
        )
    return acc / nrm


def dyson_step(h0, mu, grid: ControlGrid, j: int, psi, order: int, points: int,
               drift_tolerance: float = 1e-6):
    """Truncated time-ordered series step from t_j to t_{j+1}.

    Sampling is uniform at in-interval midpoints; only tuples with
    nondecreasing sample times enter the sum, a run of r equal indices
    carrying weight 1/r!.  The output is renormalized when the norm drift is
    below ``drift_tolerance``, otherwise the step fails.
    """
    if not 0 <= j < grid.num_steps:
        raise ValueError("interval index out of range")
    if not 0 <= order <= 6:
        raise ValueError("order must lie in 0..6")
    if points < 1:
        raise ValueError("points must be at least 1")
    wrap = isinstance(psi, QuantumState)
    v = psi.amplitudes if wrap else np.asarray(psi, dtype=np.complex128)
    eff = _EffectiveHamiltonian(h0, mu)
    out = _dyson_apply(eff, grid, j, v, order, points, drift_tolerance)
    return QuantumState(out) if wrap else out


def evolve(h0, mu, grid: ControlGrid, psi0, config: PropagatorConfig = PropagatorConfig()):
    """March the state across all N intervals; returns (final state, record)."""
    amps = psi0.amplitudes if isinstance(psi0, QuantumState) else np.asarray(psi0)
    states = propagate_amplitudes(h0, mu, grid, amps, config)
    record = TrajectoryRecord(states=states, times=grid.times, config=config)
    return QuantumState(states[-1]), record


def write_trajectory_csv(record: TrajectoryRecord, path) -> None:
    """Dump the trajectory as j,t,re_amp_0..,im_amp_0.. rows (large)."""
    dim = record.states.shape[1]
    header = ["j", "t"]
    header += [f"re_amp_{i}" for i in range(dim)]
    header += [f"im_amp_{i}" for i in range(dim)]

    def rows():
        for j, (t, state) in enumerate(zip(record.times.tolist(), record.states)):
            yield [j, t, *state.real.tolist(), *state.imag.tolist()]

    write_csv(path, header, rows())
