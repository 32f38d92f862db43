"""Perturbed gradient ascent with stationarity checks and ascent auditing.

The update is u <- u + eta * (g + zeta) with seeded per-coordinate Gaussian
noise.  Iteration stops at the first-order condition ||g|| < eps or at the
iteration cap; every visited iterate can be retained so the ascent
inequality can be re-audited afterwards against exact adjoint gradients.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._io import write_csv
from .control import ControlGrid
from .objective import (
    GradientEstimate,
    ObjectiveSpec,
    evaluate,
    gradient_adjoint,
    gradient_fd,
    lipschitz_bound,
    value_and_gradient_adjoint,
)

__all__ = [
    "OptimizerConfig",
    "IterateTrace",
    "AscentReport",
    "ascend",
    "check_first_order",
    "check_second_order",
    "ascent_property_check",
    "iteration_bound",
    "write_trace_csv",
]


@dataclass(frozen=True)
class OptimizerConfig:
    eta: float | None = None          # learning rate; None -> 1/(2L)
    max_iterations: int = 1000
    noise_std: float = 0.0            # per-coordinate Gaussian std r
    eps: float = 0.0                  # first-order stop threshold; 0 disables
    seed: int = 0
    hessian_lipschitz: float | None = None
    failure_probability: float = 1.0 / 3.0
    divergence_guard: float = 1e3     # abort when any |u_j| passes this

    def __post_init__(self):
        if self.eta is not None and self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if not 0 < self.failure_probability < 1:
            raise ValueError("failure_probability must lie in (0, 1)")
        if self.divergence_guard <= 0:
            raise ValueError("divergence_guard must be positive")

    def resolve_eta(self, spec: ObjectiveSpec) -> float:
        lip = lipschitz_bound(spec)
        if self.eta is None:
            return 0.5 / lip if lip > 0 else 1.0
        if lip > 0 and self.eta >= 1.0 / lip:
            warnings.warn(
                f"learning rate {self.eta} is not below 1/L = {1.0 / lip:.4g}; "
                "the ascent guarantee may fail",
                RuntimeWarning,
            )
        return self.eta


@dataclass(eq=False)
class IterateTrace:
    """Per-iteration records of an ascent run.

    Row k describes the k-th visited iterate before it is updated.  The
    online ``slacks`` column audits the ascent inequality treating the
    provider gradients as exact; ``ascent_property_check`` re-audits with
    adjoint ground truth and provider error.
    """

    objective_values: np.ndarray
    gradient_norms: np.ndarray
    noise_norms: np.ndarray
    slacks: np.ndarray
    termination_reason: str
    final_control: ControlGrid
    eta: float
    spec: ObjectiveSpec
    iterates: np.ndarray | None = None   # (rows, N+1)
    gradients: np.ndarray | None = None  # provider gradients per row
    noises: np.ndarray | None = None

    def __len__(self) -> int:
        return self.objective_values.size


@dataclass(frozen=True, eq=False)
class AscentReport:
    """Per-iteration audit of the ascent inequality."""

    slacks: np.ndarray            # descent-form slack with noise and error sums
    eps_form_slacks: np.ndarray   # slack of the k*eta*eps^2/4 form
    gradient_error_norms: np.ndarray
    satisfied: np.ndarray

    @property
    def all_satisfied(self) -> bool:
        return bool(np.all(self.satisfied))


def _resolve_provider(provider, fd_step: float):
    if callable(provider):
        return None, provider
    if provider == "adjoint":
        return "adjoint", None
    if provider == "fd":
        return "fd", lambda spec, u: gradient_fd(spec, u, fd_step)
    if provider == "jordan_sim":
        raise ValueError(
            "pass a configured callable for the jordan_sim provider "
            "(see qgrad.jordan_gradient_provider)"
        )
    raise ValueError(f"unknown gradient provider {provider!r}")


def ascend(spec: ObjectiveSpec, u0: ControlGrid, config: OptimizerConfig,
           gradient_provider="adjoint", record_iterates: bool = True) -> IterateTrace:
    """Run perturbed gradient ascent from u0 and record the trace."""
    spec.check_grid(u0)
    eta = config.resolve_eta(spec)
    kind, provider = _resolve_provider(gradient_provider, fd_step=1e-4)
    rng = np.random.default_rng(config.seed)
    r = config.noise_std
    n_coords = spec.num_steps + 1

    u = u0.nodal_values.copy()
    js, gnorms, znorms, slacks = [], [], [], []
    iterates, gradients, noises = [], [], []
    sum_g2 = 0.0
    sum_z2 = 0.0
    termination = "max-iterations"

    for k in range(config.max_iterations + 1):
        grid = u0.with_values(u)
        if kind == "adjoint":
            j_val, grad = value_and_gradient_adjoint(spec, grid)
        else:
            grad = provider(spec, grid)
            j_val = evaluate(spec, grid)
        g = grad.values
        gnorm = float(np.linalg.norm(g))

        if not math.isfinite(j_val) or not math.isfinite(gnorm):
            termination = "non-finite"
            break

        if k == 0:
            j0 = j_val
        slack = j_val - j0 - 0.5 * eta * sum_g2 + eta * sum_z2
        js.append(j_val)
        gnorms.append(gnorm)
        slacks.append(slack)
        if record_iterates:
            iterates.append(u.copy())
            gradients.append(g.copy())

        if config.eps > 0 and gnorm < config.eps:
            znorms.append(0.0)
            if record_iterates:
                noises.append(np.zeros(n_coords))
            termination = "first-order"
            break
        if k == config.max_iterations:
            znorms.append(0.0)
            if record_iterates:
                noises.append(np.zeros(n_coords))
            break

        zeta = rng.normal(0.0, r, n_coords) if r > 0 else np.zeros(n_coords)
        znorm = float(np.linalg.norm(zeta))
        znorms.append(znorm)
        if record_iterates:
            noises.append(zeta)
        sum_g2 += gnorm**2
        sum_z2 += znorm**2
        u = u + eta * (g + zeta)
        if float(np.max(np.abs(u))) > config.divergence_guard:
            # runaway control; propagation cost grows with the amplitude
            termination = "diverged"
            break

    return IterateTrace(
        objective_values=np.array(js),
        gradient_norms=np.array(gnorms),
        noise_norms=np.array(znorms),
        slacks=np.array(slacks),
        termination_reason=termination,
        final_control=u0.with_values(u),
        eta=eta,
        spec=spec,
        iterates=np.array(iterates) if record_iterates else None,
        gradients=np.array(gradients) if record_iterates else None,
        noises=np.array(noises) if record_iterates else None,
    )


def check_first_order(g, eps: float) -> bool:
    """Strict Euclidean-norm test ||g|| < eps."""
    values = g.values if isinstance(g, GradientEstimate) else np.asarray(g, dtype=float)
    return bool(np.linalg.norm(values) < eps)


def check_second_order(hessian: np.ndarray, rho: float, eps: float) -> bool:
    """Largest Hessian eigenvalue at most sqrt(rho*eps)."""
    h = np.asarray(hessian, dtype=float)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError("hessian must be a square matrix")
    if h.shape[0] > 65:
        raise ValueError("matrix too large for the dense second-order certificate (N <= 64)")
    if not np.allclose(h, h.T, atol=1e-10 * max(1.0, float(np.abs(h).max()))):
        raise ValueError("hessian must be symmetric")
    if rho < 0 or eps < 0:
        raise ValueError("rho and eps must be nonnegative")
    lam_max = float(np.linalg.eigvalsh(h)[-1])
    return lam_max <= math.sqrt(rho * eps)


def ascent_property_check(trace: IterateTrace, eta: float, eps: float) -> AscentReport:
    """Audit the ascent inequality along a recorded run.

    Ground-truth gradients are recomputed with the adjoint method; the
    provider error e_k is the recorded provider gradient minus the ground
    truth.  Verifies, for every k,

        J(u_k) >= J(u_0) + (eta/2) * sum_{j<k} ||dJ(u_j)||^2
                  - eta * sum_{j<k} ||zeta_j||^2 - eta * sum_{j<k} ||e_j||^2.
    """
    if trace.iterates is None or trace.gradients is None or trace.noises is None:
        raise ValueError("trace lacks per-iteration records; rerun with record_iterates=True")
    spec = trace.spec
    rows = len(trace)
    true_norms2 = np.empty(rows)
    err_norms = np.empty(rows)
    for k in range(rows):
        grid = trace.final_control.with_values(trace.iterates[k])
        g_true = gradient_adjoint(spec, grid).values
        true_norms2[k] = float(np.dot(g_true, g_true))
        err_norms[k] = float(np.linalg.norm(trace.gradients[k] - g_true))
    noise2 = trace.noise_norms**2
    err2 = err_norms**2
    j0 = trace.objective_values[0]
    slacks = np.empty(rows)
    eps_slacks = np.empty(rows)
    for k in range(rows):
        gain = 0.5 * eta * float(np.sum(true_norms2[:k]))
        penalty = eta * float(np.sum(noise2[:k])) + eta * float(np.sum(err2[:k]))
        slacks[k] = trace.objective_values[k] - j0 - gain + penalty
        eps_slacks[k] = trace.objective_values[k] - j0 - gain + k * eta * eps**2 / 4.0
    satisfied = slacks >= -1e-12
    return AscentReport(slacks=slacks, eps_form_slacks=eps_slacks,
                        gradient_error_norms=err_norms, satisfied=satisfied)


def iteration_bound(lipschitz: float, j_star: float, j0: float, eps: float, nu: float) -> int:
    """Iterations sufficient to visit a first-order point: ceil(4 L gap / eps^2)
    times the log(1/nu) confidence multiplier."""
    if j_star < j0:
        raise ValueError("j_star must be at least j0")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not 0 < nu < 1:
        raise ValueError("nu must lie in (0, 1)")
    raw = 4.0 * lipschitz * (j_star - j0) / eps**2 * math.log(1.0 / nu)
    return int(math.ceil(raw * (1.0 - 1e-12)))


def write_trace_csv(trace: IterateTrace, path) -> None:
    """Write the trace as k,J,grad_norm,noise_norm,ascent_slack rows."""
    rows = (
        [k, j, g, z, s]
        for k, (j, g, z, s) in enumerate(
            zip(
                trace.objective_values.tolist(),
                trace.gradient_norms.tolist(),
                trace.noise_norms.tolist(),
                trace.slacks.tolist(),
            )
        )
    )
    write_csv(path, ["k", "J", "grad_norm", "noise_norm", "ascent_slack"], rows)
