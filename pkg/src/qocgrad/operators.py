"""Complex state vectors and structured sparse Hermitian operators.

Operators come in three storage forms: real diagonal, real symmetric
tridiagonal, and a general complex coordinate list.  Application is
matrix-free and broadcasts over leading axes, so a batch of states can be
pushed through one operator in a single call.  The module also builds the
one-dimensional demonstration model (discrete-Laplacian kinetic term,
exponentially damped dipole, Gaussian observable) used throughout the
package.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "QuantumState",
    "SparseHermitianOperator",
    "ExampleModelParams",
    "apply",
    "expectation",
    "max_norm",
    "spectral_norm_estimate",
    "build_example_model",
    "basis_state",
    "gaussian_state",
]

_NORM_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class QuantumState:
    """Unit-norm complex amplitude vector."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=np.complex128).reshape(-1).copy()
        if amps.size < 1:
            raise ValueError("state must have at least one amplitude")
        if not np.all(np.isfinite(amps.view(np.float64))):
            raise ValueError("state amplitudes must be finite")
        nrm = float(np.linalg.norm(amps))
        if abs(nrm - 1.0) > _NORM_TOL:
            raise ValueError(f"state norm {nrm!r} deviates from 1 by more than {_NORM_TOL}")
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dimension(self) -> int:
        return self.amplitudes.size

    @classmethod
    def normalized(cls, vector) -> "QuantumState":
        """Rescale an arbitrary nonzero vector to unit norm."""
        vec = np.asarray(vector, dtype=np.complex128).reshape(-1)
        nrm = np.linalg.norm(vec)
        if nrm == 0.0 or not np.isfinite(nrm):
            raise ValueError("cannot normalize a zero or non-finite vector")
        return cls(vec / nrm)


def basis_state(dimension: int, index: int) -> QuantumState:
    if not 0 <= index < dimension:
        raise ValueError("basis index out of range")
    amps = np.zeros(dimension, dtype=np.complex128)
    amps[index] = 1.0
    return QuantumState(amps)


def gaussian_state(dimension: int, center: float, width: float,
                   momentum: float = 0.0) -> QuantumState:
    """Normalized Gaussian wave packet; ``width`` is the probability std.

    A nonzero ``momentum`` multiplies the envelope by exp(-1j*momentum*x),
    which sets the packet moving on a hopping-type kinetic term.
    """
    if width <= 0:
        raise ValueError("width must be positive")
    x = np.arange(dimension, dtype=float)
    amps = np.exp(-((x - center) ** 2) / (4.0 * width**2) - 1j * momentum * x)
    return QuantumState.normalized(amps)


class SparseHermitianOperator:
    """Hermitian matrix in diagonal, tridiagonal, or coordinate-list form.

    Instances are immutable; use the classmethod constructors.  ``kind`` is
    one of ``"diagonal"``, ``"tridiagonal"``, ``"coo"``.
    """

    __slots__ = ("dimension", "kind", "diag", "off", "rows", "cols", "vals", "_norm_cache")

    def __init__(self, dimension, kind, diag=None, off=None, rows=None, cols=None, vals=None):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = int(dimension)
        self.kind = kind
        self.diag = diag
        self.off = off
        self.rows = rows
        self.cols = cols
        self.vals = vals
        self._norm_cache = None
        for arr in (diag, off, rows, cols, vals):
            if arr is not None:
                arr.flags.writeable = False

    @classmethod
    def diagonal(cls, entries) -> "SparseHermitianOperator":
        d = np.asarray(entries, dtype=float).reshape(-1).copy()
        if not np.all(np.isfinite(d)):
            raise ValueError("diagonal entries must be finite")
        return cls(d.size, "diagonal", diag=d)

    @classmethod
    def tridiagonal(cls, diagonal, off_diagonal) -> "SparseHermitianOperator":
        d = np.asarray(diagonal, dtype=float).reshape(-1).copy()
        e = np.asarray(off_diagonal, dtype=float).reshape(-1).copy()
        if e.size != d.size - 1:
            raise ValueError("off-diagonal must have length dimension-1")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(e))):
            raise ValueError("tridiagonal entries must be finite")
        return cls(d.size, "tridiagonal", diag=d, off=e)

    @classmethod
    def from_coo(cls, dimension, rows, cols, values) -> "SparseHermitianOperator":
        r = np.asarray(rows, dtype=np.intp).reshape(-1).copy()
        c = np.asarray(cols, dtype=np.intp).reshape(-1).copy()
        v = np.asarray(values, dtype=np.complex128).reshape(-1).copy()
        if not (r.size == c.size == v.size):
            raise ValueError("rows, cols, values must have equal length")
        if r.size and (r.min() < 0 or r.max() >= dimension or c.min() < 0 or c.max() >= dimension):
            raise ValueError("coordinate index out of range")
        if not np.all(np.isfinite(v.view(np.float64))):
            raise ValueError("values must be finite")
        # Hermiticity: accumulate duplicates, then require A[i,j] == conj(A[j,i]).
        acc: dict[tuple[int, int], complex] = {}
        for i, j, val in zip(r.tolist(), c.tolist(), v.tolist()):
            acc[(i, j)] = acc.get((i, j), 0.0) + val
        for (i, j), val in acc.items():
            mirror = acc.get((j, i), 0.0)
            if abs(val - np.conj(mirror)) > 1e-12 * max(1.0, abs(val)):
                raise ValueError(f"operator is not Hermitian at entry ({i}, {j})")
        return cls(dimension, "coo", rows=r, cols=c, vals=v)

    @property
    def sparsity_d(self) -> int:
        """Max count of nonzero entries in any row."""
        if self.kind == "diagonal":
            return int(np.max(self.diag != 0.0)) if self.diag.size else 0
        if self.kind == "tridiagonal":
            counts = (self.diag != 0.0).astype(int)
            counts[:-1] += (self.off != 0.0).astype(int)
            counts[1:] += (self.off != 0.0).astype(int)
            return int(counts.max())
        acc: dict[tuple[int, int], complex] = {}
        for i, j, val in zip(self.rows.tolist(), self.cols.tolist(), self.vals.tolist()):
            acc[(i, j)] = acc.get((i, j), 0.0) + val
        per_row = np.zeros(self.dimension, dtype=int)
        for (i, _j), val in acc.items():
            if val != 0.0:
                per_row[i] += 1
        return int(per_row.max()) if self.dimension else 0

    def apply_array(self, vec: np.ndarray) -> np.ndarray:
        """Matrix-vector product along the last axis; broadcasts leading axes."""
        v = np.asarray(vec)
        if v.shape[-1] != self.dimension:
            raise ValueError(
                f"dimension mismatch: operator is {self.dimension}, vector has {v.shape[-1]}"
            )
        if self.kind == "diagonal":
            return self.diag * v
        if self.kind == "tridiagonal":
            out = self.diag * v
            out[..., 1:] += self.off * v[..., :-1]
            out[..., :-1] += self.off * v[..., 1:]
            return out
        out = np.zeros(v.shape, dtype=np.result_type(v.dtype, np.complex128))
        contrib = self.vals * v[..., self.cols]
        np.add.at(out, (..., self.rows), contrib)
        return out

    def scaled(self, factor: float) -> "SparseHermitianOperator":
        if self.kind == "diagonal":
            return SparseHermitianOperator.diagonal(self.diag * factor)
        if self.kind == "tridiagonal":
            return SparseHermitianOperator.tridiagonal(self.diag * factor, self.off * factor)
        return SparseHermitianOperator.from_coo(self.dimension, self.rows, self.cols, self.vals * factor)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.dimension, self.dimension), dtype=np.complex128)
        if self.kind == "diagonal":
            np.fill_diagonal(dense, self.diag)
        elif self.kind == "tridiagonal":
            np.fill_diagonal(dense, self.diag)
            idx = np.arange(self.dimension - 1)
            dense[idx, idx + 1] = self.off
            dense[idx + 1, idx] = self.off
        else:
            np.add.at(dense, (self.rows, self.cols), self.vals)
        return dense

    def row_sum_bound(self) -> float:
        """Max row 1-norm; upper bound on the spectral norm."""
        if self.kind == "diagonal":
            return float(np.max(np.abs(self.diag))) if self.diag.size else 0.0
        if self.kind == "tridiagonal":
            sums = np.abs(self.diag).astype(float)
            sums[:-1] += np.abs(self.off)
            sums[1:] += np.abs(self.off)
            return float(sums.max())
        sums = np.zeros(self.dimension)
        np.add.at(sums, self.rows, np.abs(self.vals))
        return float(sums.max()) if self.dimension else 0.0


def _as_array(psi) -> np.ndarray:
    if isinstance(psi, QuantumState):
        return psi.amplitudes
    return np.asarray(psi, dtype=np.complex128)


def apply(op: SparseHermitianOperator, psi) -> np.ndarray:
    """Return ``op @ psi`` without renormalization."""
    return op.apply_array(_as_array(psi))


def expectation(op: SparseHermitianOperator, psi) -> float:
    """Real expectation value of a Hermitian operator in the given state."""
    vec = _as_array(psi)
    val = complex(np.vdot(vec, op.apply_array(vec)))
    if abs(val.imag) >= 1e-10:
        raise ValueError(f"expectation value has imaginary part {val.imag:.3e}")
    return val.real


def max_norm(op: SparseHermitianOperator) -> float:
    """Largest absolute matrix entry."""
    if op.kind == "diagonal":
        return float(np.max(np.abs(op.diag))) if op.diag.size else 0.0
    if op.kind == "tridiagonal":
        best = float(np.max(np.abs(op.diag)))
        if op.off.size:
            best = max(best, float(np.max(np.abs(op.off))))
        return best
    if not op.vals.size:
        return 0.0
    dense: dict[tuple[int, int], complex] = {}
    for i, j, val in zip(op.rows.tolist(), op.cols.tolist(), op.vals.tolist()):
        dense[(i, j)] = dense.get((i, j), 0.0) + val
    return max(abs(v) for v in dense.values()) if dense else 0.0


def spectral_norm_estimate(op: SparseHermitianOperator, tol: float = 1e-9,
                           max_iterations: int = 20000) -> float:
    """Largest absolute eigenvalue via power iteration on ``op @ op``.

    Squaring makes the iteration insensitive to +/- eigenvalue pairs.  If the
    start vector is (numerically) orthogonal to the dominant eigenspace the
    iteration restarts from a fresh random vector; no deflation is performed.
    Non-convergence raises a warning and returns the best estimate.
    """
    if op._norm_cache is not None and op._norm_cache[0] <= tol:
        return op._norm_cache[1]
    if max_norm(op) == 0.0:
        return 0.0
    rng = np.random.default_rng(0)
    dim = op.dimension
    best = 0.0
    for _restart in range(4):
        v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        prev = 0.0
        for _ in range(max_iterations):
            w = op.apply_array(v)
            sigma = float(np.linalg.norm(w))  # = sqrt(v' A^2 v), lower bound on ||A||
            w2 = op.apply_array(w)
            n2 = np.linalg.norm(w2)
            if n2 == 0.0:
                break  # v in the kernel of A^2; restart
            v = w2 / n2
            if sigma > 0 and abs(sigma - prev) <= tol * sigma:
                best = max(best, sigma)
                op._norm_cache = (tol, best)
                return best
            prev = sigma
        best = max(best, prev)
    warnings.warn(
        f"spectral norm power iteration did not reach tol={tol}; returning best estimate {best}",
        RuntimeWarning,
    )
    op._norm_cache = (tol, best)
    return best


@dataclass(frozen=True)
class ExampleModelParams:
    """Parameters of the one-dimensional demonstration model."""

    dimension: int = 64
    laplacian_scale: float = 1.0  # spatial step of the three-point stencil
    r0: float = 10.0              # dipole decay length
    gamma0: float = 0.5           # observable width parameter
    grid_coordinates: np.ndarray | None = None

    def __post_init__(self):
        if self.dimension < 2:
            raise ValueError("dimension must be at least 2")
        if self.r0 <= 0 or self.gamma0 <= 0:
            raise ValueError("r0 and gamma0 must be positive")
        if self.laplacian_scale <= 0:
            raise ValueError("laplacian_scale must be positive")
        coords = self.grid_coordinates
        if coords is None:
            coords = np.arange(self.dimension, dtype=float)
        else:
            coords = np.asarray(coords, dtype=float).reshape(-1).copy()
            if coords.size != self.dimension:
                raise ValueError("grid_coordinates length must equal dimension")
        coords.flags.writeable = False
        object.__setattr__(self, "grid_coordinates", coords)


def build_example_model(params: ExampleModelParams, normalize: bool = True):
    """Return ``(kinetic, dipole, observable)`` operators for the 1-D model.

    The kinetic term is the three-point discrete Laplacian with spacing
    ``laplacian_scale``; dipole and observable are diagonal in the position
    grid.  With ``normalize`` (default) each operator is divided by its
    spectral norm so all three have unit norm.
    """
    d = params.dimension
    h2 = params.laplacian_scale**2
    kinetic = SparseHermitianOperator.tridiagonal(
        np.full(d, 2.0 / h2), np.full(d - 1, -1.0 / h2)
    )
    r = params.grid_coordinates
    dipole = SparseHermitianOperator.diagonal(r * np.exp(-r / params.r0))
    observable = SparseHermitianOperator.diagonal(
        (params.gamma0 / math.pi) * np.exp(-(params.gamma0**2) * r**2)
    )
    if normalize:
        ops = []
        for op in (kinetic, dipole, observable):
            nrm = spectral_norm_estimate(op, tol=1e-11)
            ops.append(op.scaled(1.0 / nrm) if nrm > 0 else op)
        kinetic, dipole, observable = ops
    return kinetic, dipole, observable
