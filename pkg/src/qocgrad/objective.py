"""Discrete objective for terminal-expectation control and its gradients.

The objective is the terminal expectation of an observable minus a trapezoid
quadrature of alpha * u^2.  The adjoint gradient differentiates the
implemented discretization itself: a forward pass stores the trajectory, a
backward pass propagates the costate through the adjoints of the same
per-interval exponentials, and every sub-step contributes through the exact
derivative of its matrix exponential with respect to the midpoint control
value.  Finite-difference routines provide the independent cross-checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .control import ControlGrid, quadrature_penalty, trapezoid_weights
from .dynamics import (
    PropagatorConfig,
    _EffectiveHamiltonian,
    _expm_eff,
    _expm_eff_frechet,
    _midpoint_controls,
    _renorm,
    _term_count,
    propagate_amplitudes,
)
from .operators import QuantumState, SparseHermitianOperator, expectation, spectral_norm_estimate

__all__ = [
    "ObjectiveSpec",
    "GradientEstimate",
    "evaluate_terminal",
    "evaluate_penalty",
    "evaluate",
    "value_and_gradient_adjoint",
    "gradient_adjoint",
    "gradient_fd",
    "hessian_fd",
    "derivative_bound",
    "lipschitz_bound",
    "default_hessian_lipschitz",
]

_PROVENANCES = ("adjoint", "finite_difference", "jordan_sim")


@dataclass(frozen=True, eq=False)
class GradientEstimate:
    """Gradient vector over the N+1 control nodes with provenance tag."""

    values: np.ndarray
    provenance: str
    error_bound: float = 0.0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).reshape(-1).copy()
        if not np.all(np.isfinite(vals)):
            raise ValueError("gradient values must be finite")
        if self.provenance not in _PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


@dataclass(frozen=True, eq=False)
class ObjectiveSpec:
    """Operators, regularization, horizon/grid template, and initial state."""

    h0: SparseHermitianOperator
    mu: SparseHermitianOperator
    observable: SparseHermitianOperator
    alpha: float
    horizon: float
    num_steps: int
    initial_state: QuantumState
    propagator: PropagatorConfig = field(default_factory=PropagatorConfig)
    norm_check_tol: float = 1e-6

    def __post_init__(self):
        dims = {self.h0.dimension, self.mu.dimension, self.observable.dimension,
                self.initial_state.dimension}
        if len(dims) != 1:
            raise ValueError(f"operator/state dimensions differ: {sorted(dims)}")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.horizon <= 0 or self.num_steps < 1:
            raise ValueError("horizon must be positive and num_steps >= 1")
        norms = {}
        for name, op in (("h0", self.h0), ("mu", self.mu), ("observable", self.observable)):
            norms[name] = spectral_norm_estimate(op, tol=1e-9)
            if norms[name] > 1.0 + self.norm_check_tol:
                raise ValueError(
                    f"operator {name} has norm {norms[name]:.6f} > 1; rescale the model"
                )
        object.__setattr__(self, "_norms", norms)

    @property
    def delta(self) -> float:
        return self.horizon / self.num_steps

    @property
    def mu_norm(self) -> float:
        return self._norms["mu"]

    @property
    def alpha_meets_lower_bound(self) -> bool:
        """Whether alpha >= 2/T, the regime assumed by the a-priori L1 bound."""
        return self.alpha >= 2.0 / self.horizon - 1e-12

    def grid_template(self, values=None) -> ControlGrid:
        if values is None:
            return ControlGrid.constant(self.horizon, self.num_steps, 0.0)
        return ControlGrid(self.horizon, self.num_steps, values)

    def check_grid(self, u: ControlGrid) -> None:
        if u.num_steps != self.num_steps or abs(u.horizon - self.horizon) > 1e-12 * self.horizon:
            raise ValueError("control grid does not match the objective grid template")


def evaluate_terminal(spec: ObjectiveSpec, u: ControlGrid) -> float:
    """Terminal expectation of the observable after propagating under u."""
    spec.check_grid(u)
    states = propagate_amplitudes(spec.h0, spec.mu, u, spec.initial_state.amplitudes,
                                  spec.propagator)
    return expectation(spec.observable, states[-1])


def evaluate_penalty(spec: ObjectiveSpec, u: ControlGrid) -> float:
    """Quadrature penalty alpha * delta * sum_j w_j u_j^2."""
    spec.check_grid(u)
    return quadrature_penalty(u, spec.alpha)


def evaluate(spec: ObjectiveSpec, u: ControlGrid) -> float:
    """Full objective: terminal expectation minus penalty."""
    return evaluate_terminal(spec, u) - evaluate_penalty(spec, u)


def _fused_forward(d, e, v, coef, nterms):
    """Taylor action of exp(coef*H) on v for tridiagonal H = (d, e)."""
    w = v.copy()
    term = v
    for k in range(1, nterms + 1):
        t = d * term
        if e is not None:
            t[1:] += e * term[:-1]
            t[:-1] += e * term[1:]
        term = (coef / k) * t
        w += term
    return w


def _fused_backward(d, e, dmu, emu, psi, lam, h, nterms):
    """One batched Taylor walk for the backward sweep at a sub-step.

    Rows: p follows exp(-1j*h*H) psi, q accumulates the control derivative of
    that exponential applied to psi, and the costate row follows
    exp(+1j*h*H) lam.  Returns (q_total, propagated costate).
    """
    x = np.zeros((3, psi.size), dtype=np.complex128)
    x[0] = psi
    x[2] = lam
    w = x.copy()
    coefs = np.array([[-1j * h], [-1j * h], [1j * h]])
    mu_coef = 1j * h
    for k in range(1, nterms + 1):
        mu_p = dmu * x[0]
        if emu is not None:
            mu_p[1:] += emu * x[0][:-1]
            mu_p[:-1] += emu * x[0][1:]
        hx = d * x
        if e is not None:
            hx[:, 1:] += e * x[:, :-1]
            hx[:, :-1] += e * x[:, 1:]
        x = (coefs / k) * hx
        x[1] += (mu_coef / k) * mu_p
        w += x
    return w[1], w[2]


def value_and_gradient_adjoint(spec: ObjectiveSpec, u: ControlGrid):
    """Objective value and its exact gradient in one forward/backward sweep.

    Returns ``(value, GradientEstimate)``.  The backward pass reuses the
    stored trajectory; each sub-step's contribution enters through the hat
    weights that tie the midpoint control value to its two enclosing nodes.
    """
    spec.check_grid(u)
    cfg = spec.propagator
    if cfg.method != "midpoint_expm":
        raise ValueError("the adjoint gradient requires the midpoint propagator")
    eff = _EffectiveHamiltonian(spec.h0, spec.mu)
    n = spec.num_steps
    s = cfg.substeps_per_interval
    h = u.delta / s
    tol = cfg.expm_tolerance
    c = _midpoint_controls(u, s)
    theta = (np.arange(s) + 0.5) / s

    c_max = float(np.max(np.abs(c)))
    fast = eff.fused and h * (eff.bound0 + c_max * eff.bound_mu) <= 1.0
    if fast:
        x_max = h * (eff.bound0 + c_max * eff.bound_mu)
        n_fwd = _term_count(x_max, tol)
        n_bwd = _term_count(x_max, tol / 4.0) + 2
        d0, e0, dmu, emu = eff.d0, eff.e0, eff.dmu, eff.emu

    # forward pass, keeping all sub-step states
    v = spec.initial_state.amplitudes.copy()
    sub_states = np.empty((n, s, v.size), dtype=np.complex128)
    coef = -1j * h
    for j in range(n):
        for k in range(s):
            sub_states[j, k] = v
            if fast:
                cv = c[j, k]
                d = d0 - cv * dmu
                e = e0 if emu is None else (
                    (e0 if e0 is not None else 0.0) - cv * emu
                )
                v = _fused_forward(d, e, v, coef, n_fwd)
            else:
                v = _expm_eff(eff, c[j, k], v, h, tol)
        if cfg.renormalize:
            v = _renorm(v)
    psi_n = v
    j1 = expectation(spec.observable, psi_n)

    # backward pass with per-sub-step exponential derivatives
    lam = spec.observable.apply_array(psi_n)
    grad1 = np.zeros(n + 1)
    for j in range(n - 1, -1, -1):
        for k in range(s - 1, -1, -1):
            if fast:
                cv = c[j, k]
                d = d0 - cv * dmu
                e = e0 if emu is None else (
                    (e0 if e0 is not None else 0.0) - cv * emu
                )
                dpsi, lam_prev = _fused_backward(d, e, dmu, emu, sub_states[j, k], lam,
                                                 h, n_bwd)
            else:
                _, dpsi = _expm_eff_frechet(eff, c[j, k], sub_states[j, k], h, tol)
                lam_prev = _expm_eff(eff, c[j, k], lam, -h, tol)
            gc = 2.0 * float(np.real(np.vdot(lam, dpsi)))
            grad1[j] += (1.0 - theta[k]) * gc
            grad1[j + 1] += theta[k] * gc
            lam = lam_prev

    w = trapezoid_weights(n)
    grad = grad1 - 2.0 * spec.alpha * u.delta * w * u.nodal_values
    value = j1 - quadrature_penalty(u, spec.alpha)
    error_bound = 20.0 * n * s * tol
    return value, GradientEstimate(grad, "adjoint", error_bound)


def gradient_adjoint(spec: ObjectiveSpec, u: ControlGrid) -> GradientEstimate:
    """Exact gradient of the discrete objective (adjoint/backward sweep)."""
    return value_and_gradient_adjoint(spec, u)[1]


def gradient_fd(spec: ObjectiveSpec, u: ControlGrid, h: float = 1e-4) -> GradientEstimate:
    """Central-difference gradient, one coordinate at a time."""
    if h <= 0:
        raise ValueError("step size must be positive")
    spec.check_grid(u)
    base = u.nodal_values
    vals = np.empty(base.size)
    for j in range(base.size):
        plus = base.copy()
        plus[j] += h
        minus = base.copy()
        minus[j] -= h
        vals[j] = (evaluate(spec, u.with_values(plus)) - evaluate(spec, u.with_values(minus))) / (2 * h)
    return GradientEstimate(vals, "finite_difference", error_bound=10.0 * h * h)


def hessian_fd(spec: ObjectiveSpec, u: ControlGrid, h: float = 1e-4) -> np.ndarray:
    """Symmetrized central differences of the adjoint gradient."""
    if spec.num_steps > 64:
        raise ValueError(
            f"N={spec.num_steps} exceeds the finite-difference Hessian guard (N <= 64); "
            "use a coarser grid"
        )
    if h <= 0:
        raise ValueError("step size must be positive")
    spec.check_grid(u)
    base = u.nodal_values
    m = base.size
    hess = np.empty((m, m))
    for j in range(m):
        plus = base.copy()
        plus[j] += h
        minus = base.copy()
        minus[j] -= h
        gp = gradient_adjoint(spec, u.with_values(plus)).values
        gm = gradient_adjoint(spec, u.with_values(minus)).values
        hess[:, j] = (gp - gm) / (2 * h)
    return 0.5 * (hess + hess.T)


def derivative_bound(k: int, delta: float, mu_norm: float) -> float:
    """A-priori bound (k+1)! (delta*||mu||)^k on k-th order derivatives."""
    if k < 1:
        raise ValueError("derivative order must be at least 1")
    if k > 12:
        raise ValueError("derivative order above 12 would overflow the factorial bound")
    return math.factorial(k + 1) * (delta * mu_norm) ** k


def lipschitz_bound(spec: ObjectiveSpec) -> float:
    """Gradient Lipschitz bound T*delta*||mu||^2 + 2*alpha*delta."""
    d = spec.delta
    return spec.horizon * d * spec.mu_norm**2 + 2.0 * spec.alpha * d


def default_hessian_lipschitz(spec: ObjectiveSpec) -> float:
    """Conservative Hessian-Lipschitz constant from the order-3 derivative bound."""
    return derivative_bound(3, spec.delta, spec.mu_norm) / spec.delta
