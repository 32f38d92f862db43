import math

import numpy as np
import pytest

from qocgrad.operators import (
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

from conftest import random_hermitian_coo, random_unit_state


class TestQuantumState:
    def test_requires_unit_norm(self):
        with pytest.raises(ValueError):
            QuantumState(np.array([1.0, 1.0]))

    def test_normalized_constructor(self):
        psi = QuantumState.normalized(np.array([3.0, 4.0]))
        assert np.allclose(psi.amplitudes, [0.6, 0.8])
        assert psi.dimension == 2

    def test_rejects_zero_vector(self):
        with pytest.raises(ValueError):
            QuantumState.normalized(np.zeros(4))

    def test_amplitudes_read_only(self):
        psi = basis_state(3, 0)
        with pytest.raises(ValueError):
            psi.amplitudes[0] = 0.0


class TestApply:
    def test_identity(self, rng):
        ident = SparseHermitianOperator.diagonal(np.ones(5))
        psi = random_unit_state(5, rng)
        assert np.allclose(apply(ident, psi), psi)

    def test_diagonal_eigenvector(self):
        op = SparseHermitianOperator.diagonal([1.0, 2.0])
        assert np.allclose(apply(op, basis_state(2, 0)), [1.0, 0.0])

    def test_tridiagonal_laplacian_stencil(self):
        op = SparseHermitianOperator.tridiagonal([2.0, 2.0, 2.0], [-1.0, -1.0])
        psi = np.ones(3) / math.sqrt(3)
        assert np.allclose(apply(op, psi), np.array([1.0, 0.0, 1.0]) / math.sqrt(3))

    def test_matches_dense_matvec(self, rng):
        op = random_hermitian_coo(6, rng)
        v = random_unit_state(6, rng)
        assert np.allclose(apply(op, v), op.to_dense() @ v, atol=1e-12)

    def test_dimension_mismatch(self):
        op = SparseHermitianOperator.diagonal([1.0, 2.0])
        with pytest.raises(ValueError):
            apply(op, np.ones(3))

    def test_linearity(self, rng):
        for _ in range(20):
            op = random_hermitian_coo(5, rng)
            a, b = rng.standard_normal(2)
            x = random_unit_state(5, rng)
            y = random_unit_state(5, rng)
            lhs = apply(op, a * x + b * y)
            rhs = a * apply(op, x) + b * apply(op, y)
            assert np.max(np.abs(lhs - rhs)) < 1e-12

    def test_batched_last_axis(self, rng):
        op = random_hermitian_coo(4, rng)
        batch = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
        out = op.apply_array(batch)
        for i in range(3):
            assert np.allclose(out[i], op.to_dense() @ batch[i])


class TestExpectation:
    def test_identity_gives_one(self, rng):
        ident = SparseHermitianOperator.diagonal(np.ones(6))
        assert expectation(ident, random_unit_state(6, rng)) == pytest.approx(1.0)

    def test_orthogonal_eigenstate(self):
        op = SparseHermitianOperator.diagonal([0.0, 1.0])
        assert expectation(op, basis_state(2, 0)) == pytest.approx(0.0, abs=1e-15)

    def test_gaussian_state_against_dense_quadratic_form(self):
        _h0, _mu, obs = build_example_model(ExampleModelParams(dimension=16))
        psi = gaussian_state(16, 5.0, 2.0)
        dense = psi.amplitudes.conj() @ obs.to_dense() @ psi.amplitudes
        assert expectation(obs, psi) == pytest.approx(dense.real, abs=1e-12)

    def test_real_for_random_hermitian(self, rng):
        for _ in range(10):
            op = random_hermitian_coo(5, rng)
            val = expectation(op, random_unit_state(5, rng))
            assert isinstance(val, float)


class TestNorms:
    def test_max_norm_diagonal(self):
        assert max_norm(SparseHermitianOperator.diagonal([1.0, -3.0])) == 3.0

    def test_max_norm_zero(self):
        assert max_norm(SparseHermitianOperator.diagonal(np.zeros(4))) == 0.0

    def test_max_norm_dipole_scan(self):
        params = ExampleModelParams(dimension=64, r0=10.0)
        _h0, mu, _obs = build_example_model(params, normalize=False)
        r = np.arange(64.0)
        assert max_norm(mu) == pytest.approx(np.max(r * np.exp(-r / 10.0)), rel=1e-14)

    def test_spectral_norm_diagonal(self):
        op = SparseHermitianOperator.diagonal([2.0, -5.0])
        assert spectral_norm_estimate(op, tol=1e-10) == pytest.approx(5.0, rel=1e-8)

    def test_spectral_norm_identity(self):
        op = SparseHermitianOperator.diagonal(np.ones(7))
        assert spectral_norm_estimate(op, tol=1e-10) == pytest.approx(1.0, rel=1e-10)

    def test_spectral_norm_matches_dense_eig(self, rng):
        for _ in range(5):
            op = random_hermitian_coo(8, rng, norm=2.5)
            top = np.max(np.abs(np.linalg.eigvalsh(op.to_dense())))
            assert spectral_norm_estimate(op, tol=1e-10) == pytest.approx(top, rel=1e-7)

    def test_spectral_at_least_max_norm(self, rng):
        for _ in range(10):
            op = random_hermitian_coo(6, rng, norm=rng.uniform(0.5, 3.0))
            assert spectral_norm_estimate(op, tol=1e-9) >= max_norm(op) - 1e-8


class TestHermiticity:
    def test_coo_rejects_non_hermitian(self):
        with pytest.raises(ValueError):
            SparseHermitianOperator.from_coo(2, [0], [1], [1.0 + 0j])

    def test_coo_accepts_hermitian_pair(self):
        op = SparseHermitianOperator.from_coo(
            2, [0, 1], [1, 0], [1.0 + 2.0j, 1.0 - 2.0j]
        )
        dense = op.to_dense()
        assert np.allclose(dense, dense.conj().T)

    def test_sparsity_count(self):
        op = SparseHermitianOperator.tridiagonal([2.0, 2.0, 2.0], [-1.0, -1.0])
        assert op.sparsity_d == 3


class TestExampleModel:
    def test_dipole_formula_before_rescaling(self):
        params = ExampleModelParams(dimension=2, r0=1.0)
        _h0, mu, _obs = build_example_model(params, normalize=False)
        assert np.allclose(mu.diag, [0.0, math.exp(-1.0)])

    def test_observable_concentrates_at_origin_for_large_gamma(self):
        params = ExampleModelParams(dimension=8, gamma0=50.0)
        _h0, _mu, obs = build_example_model(params, normalize=False)
        assert obs.diag[0] > 0
        assert np.all(obs.diag[1:] < 1e-200 * max(obs.diag[0], 1.0) + 1e-300)

    def test_d64_against_dense_build(self):
        params = ExampleModelParams(dimension=64)
        h0, mu, obs = build_example_model(params, normalize=False)
        dense = np.zeros((64, 64))
        np.fill_diagonal(dense, 2.0)
        idx = np.arange(63)
        dense[idx, idx + 1] = -1.0
        dense[idx + 1, idx] = -1.0
        assert np.allclose(h0.to_dense().real, dense)
        assert h0.sparsity_d == 3
        assert max_norm(h0) == 2.0
        assert mu.sparsity_d == 1
        assert obs.sparsity_d == 1

    def test_normalization_brings_norms_to_one(self):
        h0, mu, obs = build_example_model(ExampleModelParams(dimension=32))
        for op in (h0, mu, obs):
            assert spectral_norm_estimate(op, tol=1e-9) == pytest.approx(1.0, abs=1e-6)

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            ExampleModelParams(dimension=1)
        with pytest.raises(ValueError):
            ExampleModelParams(dimension=4, r0=-1.0)
