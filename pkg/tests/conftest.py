"""Shared helpers: dense linear-algebra oracles and small model builders."""

import numpy as np
import pytest

from qocgrad.control import ControlGrid
from qocgrad.dynamics import PropagatorConfig
from qocgrad.objective import ObjectiveSpec
from qocgrad.operators import (
    ExampleModelParams,
    SparseHermitianOperator,
    build_example_model,
    gaussian_state,
)


def dense_expm_action(h_dense, v, tau):
    """exp(-1j*tau*H) @ v through a dense eigendecomposition."""
    eigvals, eigvecs = np.linalg.eigh(h_dense)
    return eigvecs @ (np.exp(-1j * tau * eigvals) * (eigvecs.conj().T @ v))


def random_hermitian_coo(dim, rng, norm=1.0):
    """Dense random Hermitian matrix stored in coordinate-list form."""
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    h = 0.5 * (a + a.conj().T)
    top = np.max(np.abs(np.linalg.eigvalsh(h)))
    h *= norm / top
    rows, cols = np.nonzero(np.ones((dim, dim)))
    return SparseHermitianOperator.from_coo(dim, rows, cols, h[rows, cols])


def random_unit_state(dim, rng):
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def small_spec(dim=8, horizon=2.0, num_steps=10, alpha=None, center=None, width=None,
               propagator=None):
    """Reduced demonstration model wrapped in an objective."""
    h0, mu, obs = build_example_model(ExampleModelParams(dimension=dim))
    psi0 = gaussian_state(dim, dim / 2.0 if center is None else center,
                          dim / 5.0 if width is None else width)
    return ObjectiveSpec(
        h0=h0, mu=mu, observable=obs,
        alpha=(2.0 / horizon) if alpha is None else alpha,
        horizon=horizon, num_steps=num_steps, initial_state=psi0,
        propagator=propagator or PropagatorConfig(),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def model64():
    return build_example_model(ExampleModelParams(dimension=64))


def sine_grid(horizon, num_steps):
    return ControlGrid.from_function(horizon, num_steps, np.sin)
