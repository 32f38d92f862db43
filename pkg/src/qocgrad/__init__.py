"""Gradient-based optimal control of time-dependent quantum systems.

Library layout:

- ``operators``: states, structured sparse Hermitian operators, model builder
- ``control``: piecewise-linear controls, quadrature, step-count selection
- ``dynamics``: midpoint-exponential and truncated time-ordered propagators
- ``objective``: discrete objective, exact adjoint gradient, bound calculators
- ``optimizer``: perturbed gradient ascent with stationarity certificates
- ``qgrad``: statevector simulation of grid-based quantum gradient estimation
- ``cli``: experiment orchestration (``python -m qocgrad --help``)
"""

from .control import (
    ControlGrid,
    QuadratureRule,
    choose_num_steps,
    interpolate,
    interpolation_error_norm,
    l1_norm,
    l2_norm_squared,
    quadrature_penalty,
)
from .dynamics import (
    PropagatorConfig,
    SeriesUnderConvergedError,
    TrajectoryRecord,
    dyson_step,
    evolve,
    expm_apply,
    propagate_amplitudes,
    step,
)
from .objective import (
    GradientEstimate,
    ObjectiveSpec,
    derivative_bound,
    evaluate,
    evaluate_penalty,
    evaluate_terminal,
    gradient_adjoint,
    gradient_fd,
    hessian_fd,
    lipschitz_bound,
    value_and_gradient_adjoint,
)
from .operators import (
    ExampleModelParams,
    QuantumState,
    SparseHermitianOperator,
    apply,
    basis_state,
    build_example_model,
    expectation,
    gaussian_state,
    max_norm,
    spectral_norm_estimate,
)
from .optimizer import (
    IterateTrace,
    OptimizerConfig,
    ascend,
    ascent_property_check,
    check_first_order,
    check_second_order,
    iteration_bound,
)
from .qgrad import (
    CentralDifferenceScheme,
    GridRegisterSpec,
    JordanResult,
    PhaseOracleSpec,
    QueryCostReport,
    central_difference_coefficients,
    default_phase_scale,
    hadamard_test_probability,
    inverse_qft,
    jordan_estimate_gradient,
    jordan_gradient_provider,
    phase_to_probability_cost_model,
    restricted_objective,
)

__version__ = "0.1.0"
