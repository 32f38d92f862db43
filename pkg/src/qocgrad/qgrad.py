"""Statevector simulation of quantum gradient estimation.

Three pieces: an interference (Hadamard-test) circuit that turns the
terminal expectation into a measurement probability; higher-order central
difference schemes; and the gradient-estimation routine that loads a phase
proportional to the differenced function onto a tensor grid of registers,
applies an inverse Fourier transform per register, and decodes the modal
measurement outcome into a gradient vector.

Phases are applied exactly; the cost of synthesizing a phase oracle from a
probability oracle is tracked by a separate bookkeeping model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._io import write_csv
from .control import ControlGrid, trapezoid_weights
from .dynamics import (
    _EffectiveHamiltonian,
    _midpoint_controls,
    _renorm,
    _taylor_exp,
    _term_count,
    _tridiag_apply,
    propagate_amplitudes,
)
from .objective import GradientEstimate, ObjectiveSpec, derivative_bound

__all__ = [
    "GridRegisterSpec",
    "CentralDifferenceScheme",
    "PhaseOracleSpec",
    "JordanResult",
    "QueryCostReport",
    "hadamard_test_probability",
    "central_difference_coefficients",
    "jordan_estimate_gradient",
    "inverse_qft",
    "phase_to_probability_cost_model",
    "default_phase_scale",
    "restricted_objective",
    "jordan_gradient_provider",
]

_MAX_TOTAL_QUBITS = 22


@dataclass(frozen=True)
class GridRegisterSpec:
    """Register layout: one b-bit register per estimated gradient coordinate."""

    num_vars: int
    bits_per_var: int
    probe_radius: float

    def __post_init__(self):
        if self.num_vars < 1:
            raise ValueError("num_vars must be at least 1")
        if self.bits_per_var < 2:
            raise ValueError("bits_per_var must be at least 2")
        if self.num_vars * self.bits_per_var > _MAX_TOTAL_QUBITS:
            raise ValueError(
                f"register layout needs {self.num_vars * self.bits_per_var} qubits; "
                f"the simulator budget is {_MAX_TOTAL_QUBITS}"
            )
        if not self.probe_radius > 0:
            raise ValueError("probe_radius must be positive")

    @property
    def points_per_var(self) -> int:
        return 1 << self.bits_per_var

    @property
    def cell_width(self) -> float:
        return 2.0 * self.probe_radius / self.points_per_var

    def grid_values(self) -> np.ndarray:
        """Symmetric half-integer grid in (-probe_radius, probe_radius)."""
        p = self.points_per_var
        k = np.arange(p)
        return 2.0 * self.probe_radius * (k + 0.5 - p / 2.0) / p


@dataclass(frozen=True, eq=False)
class CentralDifferenceScheme:
    """Antisymmetric (2m+1)-point stencil for a first derivative."""

    order: int
    offsets: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        offs = np.asarray(self.offsets, dtype=int).copy()
        coef = np.asarray(self.coefficients, dtype=float).copy()
        if offs.size != 2 * self.order + 1 or coef.size != offs.size:
            raise ValueError("stencil must have 2m+1 offsets and coefficients")
        scale = max(1.0, float(np.abs(coef).max()))
        for q in range(0, 2 * self.order + 1):
            target = 1.0 if q == 1 else 0.0
            if abs(float(np.sum(coef * offs.astype(float) ** q)) - target) > 1e-12 * scale * max(
                1.0, float(self.order) ** q
            ):
                raise ValueError(f"order condition at power {q} violated")
        offs.flags.writeable = False
        coef.flags.writeable = False
        object.__setattr__(self, "offsets", offs)
        object.__setattr__(self, "coefficients", coef)


def central_difference_coefficients(m: int) -> CentralDifferenceScheme:
    """Solve the (2m+1)-point order conditions for first-derivative weights."""
    if not 1 <= m <= 6:
        raise ValueError("difference order must lie in 1..6 (ill-conditioned beyond)")
    offsets = np.arange(-m, m + 1)
    powers = np.vander(offsets.astype(float), 2 * m + 1, increasing=True).T
    rhs = np.zeros(2 * m + 1)
    rhs[1] = 1.0
    coeffs = np.linalg.solve(powers, rhs)
    return CentralDifferenceScheme(order=m, offsets=offsets, coefficients=coeffs)


@dataclass(frozen=True, eq=False)
class PhaseOracleSpec:
    """A real-valued target with the phase scaling used to encode it.

    ``max_abs_value`` is the declared bound on |f| over the probe domain;
    the guard S * max|f| < pi keeps the encoded phase unambiguous.
    """

    function: object
    phase_scale: float
    error_budget: float
    max_abs_value: float

    def __post_init__(self):
        if not callable(self.function):
            raise ValueError("function must be callable")
        if not self.phase_scale > 0:
            raise ValueError("phase scale must be positive")
        if self.phase_scale * self.max_abs_value >= math.pi:
            raise ValueError(
                "phase scale violates the anti-aliasing guard S * max|f| < pi"
            )
        if not 0 < self.error_budget < 1.0 / 3.0:
            raise ValueError("error budget must lie in (0, 1/3)")

    def phases(self, x) -> np.ndarray:
        return self.phase_scale * np.asarray(self.function(x), dtype=float)


def phase_to_probability_cost_model(eps: float, c: float = 1.0) -> int:
    """Probability-to-phase conversion cost: ceil(c * log(1/eps)) invocations.

    Bookkeeping only; the simulator applies phases exactly and charges this
    count in query reports.
    """
    if not 0 < eps < 1.0 / 3.0:
        raise ValueError("eps must lie in (0, 1/3)")
    return int(math.ceil(c * math.log(1.0 / eps) * (1.0 - 1e-12)))


def default_phase_scale(probe_radius: float, derivative_bound_1: float) -> float:
    """Conservative phase scaling pi / (2 * probe_radius * B1)."""
    if probe_radius <= 0 or derivative_bound_1 <= 0:
        raise ValueError("probe_radius and derivative bound must be positive")
    return math.pi / (2.0 * probe_radius * derivative_bound_1)


def inverse_qft(block: np.ndarray, axis: int = -1) -> np.ndarray:
    """Exact inverse discrete Fourier transform on amplitudes (unitary)."""
    arr = np.asarray(block, dtype=np.complex128)
    n = arr.shape[axis]
    return np.fft.fft(arr, axis=axis) / math.sqrt(n)


def _check_state_norm(state: np.ndarray, where: str) -> None:
    nrm = float(np.linalg.norm(state))
    if abs(nrm - 1.0) > 1e-10:
        raise AssertionError(f"statevector norm drifted to {nrm!r} after {where}")


def hadamard_test_probability(spec: ObjectiveSpec, u: ControlGrid) -> float:
    """Probability of measuring |1> on the test ancilla.

    The observable (norm at most 1) is embedded in a unitary dilation
    U = [[O, R], [R, -O]] with R = sqrt(I - O^2); the interference circuit
    (H x I)(c-U)(H x I) on |0>|0>|psi_N> then returns
    P(1) = 1/2 - <psi_N|O|psi_N>/2 exactly.
    """
    o_dense = spec.observable.to_dense()
    eigvals, eigvecs = np.linalg.eigh(o_dense)
    if float(np.max(np.abs(eigvals))) > 1.0 + 1e-9:
        raise ValueError("observable norm exceeds 1; the probability encoding is undefined")
    root = eigvecs @ np.diag(np.sqrt(np.clip(1.0 - eigvals**2, 0.0, None))) @ eigvecs.conj().T
    dim = spec.observable.dimension
    dilation = np.block([[o_dense, root], [root, -o_dense]])
    psi_n = propagate_amplitudes(spec.h0, spec.mu, u, spec.initial_state.amplitudes,
                                 spec.propagator)[-1]

    # registers: control ancilla (2) x dilation block (2*dim)
    state = np.zeros((2, 2 * dim), dtype=np.complex128)
    state[0, :dim] = psi_n
    _check_state_norm(state, "preparation")
    # Hadamard on the ancilla
    state = np.stack([(state[0] + state[1]), (state[0] - state[1])]) / math.sqrt(2.0)
    _check_state_norm(state, "first Hadamard")
    # controlled dilation
    state[1] = dilation @ state[1]
    _check_state_norm(state, "controlled dilation")
    # Hadamard on the ancilla again
    state = np.stack([(state[0] + state[1]), (state[0] - state[1])]) / math.sqrt(2.0)
    _check_state_norm(state, "second Hadamard")
    return float(np.sum(np.abs(state[1]) ** 2))


@dataclass(frozen=True, eq=False)
class JordanResult:
    """Outcome of one gradient-estimation run."""

    estimate: GradientEstimate
    modal_share: float          # fraction of shots that produced the modal outcome
    modal_outcome: tuple
    oracle_calls: int           # function evaluations consumed by the phase load
    phase_applications: int     # grid points receiving a phase

    @property
    def values(self) -> np.ndarray:
        return self.estimate.values


def jordan_estimate_gradient(f, point, grid: GridRegisterSpec,
                             scheme: CentralDifferenceScheme, phase_scale: float,
                             shots: int, seed: int = 0) -> JordanResult:
    """Estimate the gradient of f at ``point`` from a phase-loaded grid state.

    ``f`` must map an (..., num_vars) array of probe vectors to real values
    of shape (...,).  The loaded phase is the antisymmetric central-difference
    surrogate sum_l a_l * f(point + l*x); aliasing is rejected whenever the
    phase advances by pi or more between adjacent grid points along any
    register axis.
    """
    if shots < 1:
        raise ValueError("shots must be at least 1")
    if phase_scale <= 0:
        raise ValueError("phase scale must be positive")
    point = np.asarray(point, dtype=float).reshape(-1)
    if point.size != grid.num_vars:
        raise ValueError("expansion point length must equal num_vars")
    p = grid.points_per_var
    nvars = grid.num_vars
    axes_values = grid.grid_values()
    mesh = np.meshgrid(*([axes_values] * nvars), indexing="ij")
    probes = np.stack(mesh, axis=-1)  # (p, ..., p, nvars)

    surrogate = np.zeros(probes.shape[:-1])
    oracle_calls = 0
    for a_l, ell in zip(scheme.coefficients.tolist(), scheme.offsets.tolist()):
        if a_l == 0.0:
            continue
        vals = np.asarray(f(point + ell * probes), dtype=float)
        if vals.shape != probes.shape[:-1]:
            raise ValueError("f must return one value per probe vector")
        surrogate += a_l * vals
        oracle_calls += vals.size

    phases = phase_scale * surrogate
    for axis in range(nvars):
        step_change = float(np.max(np.abs(np.diff(phases, axis=axis)))) if p > 1 else 0.0
        if step_change >= math.pi * (1.0 - 1e-12):
            suggested = 0.9 * math.pi * phase_scale / step_change
            raise ValueError(
                f"aliasing guard violated on register {axis}: adjacent-point phase "
                f"advance {step_change:.4f} >= pi; retry with phase scale <= {suggested:.6g}"
            )

    state = np.exp(1j * phases)
    state /= math.sqrt(state.size)
    _check_state_norm(state, "phase load")
    state = np.fft.fftn(state) / math.sqrt(state.size)  # inverse QFT on every register
    _check_state_norm(state, "inverse Fourier transform")

    probs = np.abs(state.reshape(-1)) ** 2
    probs /= probs.sum()
    rng = np.random.default_rng(seed)
    outcomes = rng.choice(probs.size, size=shots, p=probs)
    uniq, counts = np.unique(outcomes, return_counts=True)
    mode_flat = int(uniq[np.argmax(counts)])
    modal_share = float(np.max(counts)) / shots
    mode = np.unravel_index(mode_flat, phases.shape)

    signed = np.array([m - p if m >= p // 2 else m for m in mode], dtype=float)
    values = 2.0 * math.pi * signed / (phase_scale * 2.0 * grid.probe_radius)
    cell = 2.0 * math.pi / (phase_scale * 2.0 * grid.probe_radius)
    estimate = GradientEstimate(values, "jordan_sim", error_bound=cell)
    return JordanResult(
        estimate=estimate,
        modal_share=modal_share,
        modal_outcome=tuple(int(m) for m in mode),
        oracle_calls=oracle_calls,
        phase_applications=int(phases.size),
    )


def restricted_objective(spec: ObjectiveSpec, base: ControlGrid, coords):
    """Vectorized terminal expectation as a function of a few nodal values.

    Returns f with f(X) for X of shape (..., len(coords)): the control is
    ``base`` with X added on the selected nodes, and every probe row is
    propagated in one batched sweep.
    """
    spec.check_grid(base)
    coords = [int(c) for c in coords]
    n = spec.num_steps
    for c in coords:
        if not 0 <= c <= n:
            raise ValueError("coordinate index out of range")
    cfg = spec.propagator
    s = cfg.substeps_per_interval
    h = base.delta / s
    base_controls = _midpoint_controls(base, s)  # (N, S)
    theta = (np.arange(s) + 0.5) / s
    # hat weight of each probed node at every (interval, substep) midpoint
    weights = np.zeros((len(coords), n, s))
    for idx, c in enumerate(coords):
        if c < n:
            weights[idx, c, :] = 1.0 - theta
        if c > 0:
            weights[idx, c - 1, :] = theta
    eff = _EffectiveHamiltonian(spec.h0, spec.mu)
    obs = spec.observable
    psi0 = spec.initial_state.amplitudes
    tol = cfg.expm_tolerance

    def f(x):
        arr = np.asarray(x, dtype=float)
        if arr.shape[-1] != len(coords):
            raise ValueError(f"expected last axis of length {len(coords)}")
        lead = arr.shape[:-1]
        flat = arr.reshape(-1, len(coords))
        v = np.broadcast_to(psi0, (flat.shape[0], psi0.size)).astype(np.complex128).copy()
        bound_extra = float(np.max(np.abs(flat))) * eff.bound_mu if flat.size else 0.0
        for j in range(n):
            for k in range(s):
                c_batch = base_controls[j, k] + flat @ weights[:, j, k]
                bound = eff.norm_bound(base_controls[j, k]) + bound_extra
                m = max(1, int(math.ceil(h * bound)))
                nterms = _term_count(h / m * bound, tol / m)
                coef = -1j * h / m
                if eff.fused:
                    d, e = eff.diag_off(c_batch)
                    for _ in range(m):
                        v = _taylor_exp(lambda w: _tridiag_apply(d, e, w), v, coef, nterms)
                else:
                    for _ in range(m):
                        v = _taylor_exp(lambda w: eff.apply(w, c_batch), v, coef, nterms)
            if cfg.renormalize:
                v = _renorm(v)
        vals = np.real(np.einsum("bi,bi->b", v.conj(), obs.apply_array(v)))
        return vals.reshape(lead)

    return f


def jordan_gradient_provider(grid_spec: GridRegisterSpec, scheme: CentralDifferenceScheme,
                             shots: int, phase_scale: float | None = None,
                             master_seed: int = 0):
    """Gradient provider for the optimizer backed by the grid estimator.

    Estimates the terminal-expectation part on all N+1 nodes at once (so it
    only fits small grids) and adds the penalty gradient in closed form.
    """
    seed_rng = np.random.default_rng(master_seed)

    def provider(spec: ObjectiveSpec, u: ControlGrid) -> GradientEstimate:
        if spec.num_steps + 1 != grid_spec.num_vars:
            raise ValueError(
                f"provider expects num_vars == N+1 == {spec.num_steps + 1}, "
                f"got {grid_spec.num_vars}"
            )
        scale = phase_scale
        if scale is None:
            b1 = derivative_bound(1, spec.delta, spec.mu_norm)
            scale = default_phase_scale(grid_spec.probe_radius, b1)
        f = restricted_objective(spec, u, range(spec.num_steps + 1))
        result = jordan_estimate_gradient(
            f, np.zeros(grid_spec.num_vars), grid_spec, scheme, scale, shots,
            seed=int(seed_rng.integers(2**63)),
        )
        penalty_grad = 2.0 * spec.alpha * u.delta * trapezoid_weights(spec.num_steps) * u.nodal_values
        return GradientEstimate(result.values - penalty_grad, "jordan_sim",
                                error_bound=result.estimate.error_bound)

    return provider


@dataclass(eq=False)
class QueryCostReport:
    """Accumulated oracle bookkeeping, exportable as CSV."""

    rows: list

    @classmethod
    def from_runs(cls, component: str, results, conversion_eps: float,
                  iterations: int = 1) -> "QueryCostReport":
        factor = phase_to_probability_cost_model(conversion_eps)
        oracle = sum(r.oracle_calls for r in results) * iterations
        phase = sum(r.phase_applications for r in results) * iterations
        return cls(rows=[(component, oracle, phase, oracle * factor)])

    def add(self, component: str, oracle_calls: int, phase_calls: int,
            estimated_paper_cost: int) -> None:
        self.rows.append((component, oracle_calls, phase_calls, estimated_paper_cost))

    def to_csv(self, path) -> None:
        write_csv(path, ["component", "oracle_calls", "phase_calls", "estimated_paper_cost"],
                  self.rows)
