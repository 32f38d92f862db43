import math

import numpy as np
import pytest

from qocgrad.objective import ObjectiveSpec, gradient_adjoint, lipschitz_bound
from qocgrad.operators import (
    ExampleModelParams,
    SparseHermitianOperator,
    build_example_model,
    gaussian_state,
)
from qocgrad.optimizer import (
    IterateTrace,
    OptimizerConfig,
    ascend,
    ascent_property_check,
    check_first_order,
    check_second_order,
    iteration_bound,
    write_trace_csv,
)

from conftest import small_spec


def decoupled_spec(alpha=1.0, horizon=2.0, num_steps=8, dim=4):
    """mu = 0: the objective reduces to the penalty plus a constant."""
    h0, _mu, obs = build_example_model(ExampleModelParams(dimension=dim))
    zero_mu = SparseHermitianOperator.diagonal(np.zeros(dim))
    return ObjectiveSpec(h0=h0, mu=zero_mu, observable=obs, alpha=alpha,
                         horizon=horizon, num_steps=num_steps,
                         initial_state=gaussian_state(dim, dim / 2.0, dim / 5.0))


class TestAscend:
    def test_decoupled_quadratic_converges_geometrically(self, rng):
        spec = decoupled_spec()
        u0 = spec.grid_template(rng.uniform(-1, 1, spec.num_steps + 1))
        cfg = OptimizerConfig(eta=1.0, max_iterations=300, eps=0.0, seed=0)
        trace = ascend(spec, u0, cfg)
        final = trace.final_control.nodal_values
        assert np.max(np.abs(final)) < 1e-6
        # interior nodes contract by exactly |1 - 2*eta*alpha*delta| per step
        factor = abs(1 - 2 * 1.0 * spec.alpha * spec.delta)
        u_mid0 = abs(u0.nodal_values[3])
        k = 40
        expected = u_mid0 * factor**k
        assert abs(trace.iterates[k][3]) == pytest.approx(expected, rel=1e-9)

    def test_reproducible_bit_identical(self):
        spec = small_spec(dim=6, horizon=1.5, num_steps=8, alpha=1.5)
        cfg = OptimizerConfig(eta=0.5, max_iterations=40, noise_std=0.05, seed=123)
        a = ascend(spec, spec.grid_template(), cfg)
        b = ascend(spec, spec.grid_template(), cfg)
        assert np.array_equal(a.objective_values, b.objective_values)
        assert np.array_equal(a.final_control.nodal_values, b.final_control.nodal_values)

    def test_monotone_ascent_with_exact_gradients(self):
        spec = small_spec(dim=8, horizon=2.0, num_steps=10, alpha=1.0)
        eta = 0.5 / lipschitz_bound(spec)
        cfg = OptimizerConfig(eta=eta, max_iterations=150, seed=0)
        trace = ascend(spec, spec.grid_template(), cfg)
        assert np.all(np.diff(trace.objective_values) >= -1e-12)

    def test_stopping_reason_first_order(self):
        spec = decoupled_spec()
        u0 = spec.grid_template(np.full(spec.num_steps + 1, 0.5))
        cfg = OptimizerConfig(eta=1.0, max_iterations=5000, eps=1e-4, seed=0)
        trace = ascend(spec, u0, cfg)
        assert trace.termination_reason == "first-order"
        assert trace.gradient_norms[-1] < 1e-4
        assert np.all(trace.gradient_norms[:-1] >= 1e-4)

    def test_trace_length_cap(self):
        spec = decoupled_spec()
        cfg = OptimizerConfig(eta=0.1, max_iterations=7, seed=0)
        trace = ascend(spec, spec.grid_template(), cfg)
        assert len(trace) <= 8

    def test_noise_statistics_zero_mean(self):
        spec = decoupled_spec(num_steps=6)
        r = 0.2
        cfg = OptimizerConfig(eta=0.2, max_iterations=400, noise_std=r, seed=5)
        trace = ascend(spec, spec.grid_template(), cfg)
        zetas = trace.noises[:-1]
        n_samples = zetas.size
        assert abs(zetas.mean()) < 4 * r / math.sqrt(n_samples)

    def test_eta_above_stability_warns(self):
        spec = small_spec(dim=4, horizon=2.0, num_steps=6, alpha=1.0)
        big = 10.0 / lipschitz_bound(spec)
        cfg = OptimizerConfig(eta=big, max_iterations=3, seed=0)
        with pytest.warns(RuntimeWarning):
            ascend(spec, spec.grid_template(), cfg)

    def test_fd_provider_matches_adjoint_run(self):
        spec = small_spec(dim=6, horizon=1.0, num_steps=5, alpha=2.0)
        cfg = OptimizerConfig(eta=0.2, max_iterations=10, seed=0)
        ta = ascend(spec, spec.grid_template(), cfg, gradient_provider="adjoint")
        tf = ascend(spec, spec.grid_template(), cfg, gradient_provider="fd")
        assert np.allclose(ta.objective_values, tf.objective_values, atol=1e-8)


class TestFirstOrderCheck:
    def test_zero_gradient(self):
        assert check_first_order(np.zeros(5), 1e-9)

    def test_boundary_is_strict(self):
        g = np.zeros(4)
        g[0] = 0.1
        assert not check_first_order(g, 0.1)

    def test_scaled_below_threshold(self, rng):
        g = rng.standard_normal(6)
        g *= 0.9 * 0.05 / np.linalg.norm(g)
        assert check_first_order(g, 0.05)


class TestSecondOrderCheck:
    def test_zero_hessian(self):
        assert check_second_order(np.zeros((4, 4)), rho=1.0, eps=0.01)

    def test_eigenvalue_above_threshold(self):
        rho, eps = 1.0, 0.04
        h = np.diag([2 * math.sqrt(rho * eps)] * 3)
        assert not check_second_order(h, rho, eps)

    def test_refuses_large_matrix(self):
        with pytest.raises(ValueError):
            check_second_order(np.zeros((70, 70)), 1.0, 0.1)

    def test_refuses_asymmetric(self):
        h = np.array([[0.0, 1.0], [0.0, 0.0]])
        with pytest.raises(ValueError):
            check_second_order(h, 1.0, 0.1)

    def test_certificate_at_converged_point(self):
        # a converged decoupled run is a maximum: Hessian is negative definite
        from qocgrad.objective import hessian_fd

        spec = decoupled_spec(num_steps=6)
        cfg = OptimizerConfig(eta=1.0, max_iterations=2000, eps=1e-8, seed=0)
        trace = ascend(spec, spec.grid_template(np.full(7, 0.3)), cfg)
        hess = hessian_fd(spec, trace.final_control, 1e-4)
        assert check_second_order(hess, rho=1.0, eps=1e-4)


class TestAscentProperty:
    def test_exact_gradients_always_satisfied(self):
        spec = small_spec(dim=8, horizon=2.0, num_steps=10, alpha=1.0)
        eta = 0.5 / lipschitz_bound(spec)
        for seed in range(3):
            rng = np.random.default_rng(seed)
            u0 = spec.grid_template(0.3 * rng.standard_normal(11))
            cfg = OptimizerConfig(eta=eta, max_iterations=30, seed=seed)
            trace = ascend(spec, u0, cfg)
            report = ascent_property_check(trace, eta, eps=0.01)
            assert report.all_satisfied

    def test_zero_iterations_trivially_true(self):
        spec = small_spec(dim=4, horizon=1.0, num_steps=4, alpha=2.0)
        cfg = OptimizerConfig(eta=0.1, max_iterations=0, seed=0)
        trace = ascend(spec, spec.grid_template(), cfg)
        report = ascent_property_check(trace, 0.1, eps=0.01)
        assert report.all_satisfied
        assert report.slacks[0] == 0.0

    def test_oversized_learning_rate_violations_detected(self):
        spec = small_spec(dim=8, horizon=2.0, num_steps=10, alpha=2.0)
        eta = 10.0 / lipschitz_bound(spec)
        rng = np.random.default_rng(3)
        u0 = spec.grid_template(0.5 * rng.standard_normal(11))
        cfg = OptimizerConfig(eta=eta, max_iterations=4, seed=3)
        with pytest.warns(RuntimeWarning):
            trace = ascend(spec, u0, cfg)
        report = ascent_property_check(trace, eta, eps=0.01)
        assert not report.all_satisfied

    def test_runaway_control_aborts(self):
        spec = small_spec(dim=4, horizon=2.0, num_steps=6, alpha=2.0)
        cfg = OptimizerConfig(eta=100.0 / lipschitz_bound(spec), max_iterations=500,
                              seed=0)
        u0 = spec.grid_template(np.full(7, 0.9))
        with pytest.warns(RuntimeWarning):
            trace = ascend(spec, u0, cfg)
        assert trace.termination_reason == "diverged"

    def test_refuses_without_records(self):
        spec = small_spec(dim=4, horizon=1.0, num_steps=4, alpha=2.0)
        cfg = OptimizerConfig(eta=0.1, max_iterations=3, seed=0)
        trace = ascend(spec, spec.grid_template(), cfg, record_iterates=False)
        with pytest.raises(ValueError):
            ascent_property_check(trace, 0.1, eps=0.01)


class TestIterationBound:
    def test_zero_gap(self):
        assert iteration_bound(1.0, 0.5, 0.5, 0.1, 0.5) == 0

    def test_formula(self):
        assert iteration_bound(1.0, 1.0, 0.0, 0.1, math.exp(-1.0)) == 400

    def test_noiseless_run_reaches_condition_within_bound(self):
        spec = small_spec(dim=8, horizon=2.0, num_steps=10, alpha=1.0)
        lip = lipschitz_bound(spec)
        eta = 0.5 / lip
        eps = 0.02
        cfg = OptimizerConfig(eta=eta, max_iterations=100000, eps=eps, seed=0)
        trace = ascend(spec, spec.grid_template(), cfg, record_iterates=False)
        assert trace.termination_reason == "first-order"
        budget = iteration_bound(lip, 1.0, trace.objective_values[0], eps, math.exp(-1.0))
        assert len(trace) - 1 <= budget

    def test_validation(self):
        with pytest.raises(ValueError):
            iteration_bound(1.0, 0.0, 0.5, 0.1, 0.5)
        with pytest.raises(ValueError):
            iteration_bound(1.0, 1.0, 0.0, 0.1, 1.5)


class TestTraceCsv:
    def test_schema_and_determinism(self, tmp_path):
        spec = small_spec(dim=4, horizon=1.0, num_steps=4, alpha=2.0)
        cfg = OptimizerConfig(eta=0.3, max_iterations=5, noise_std=0.1, seed=2)
        trace = ascend(spec, spec.grid_template(), cfg)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_trace_csv(trace, p1)
        write_trace_csv(ascend(spec, spec.grid_template(), cfg), p2)
        lines = p1.read_text().splitlines()
        assert lines[0] == "k,J,grad_norm,noise_norm,ascent_slack"
        assert len(lines) == len(trace) + 1
        assert p1.read_bytes() == p2.read_bytes()
