"""
Fock-space operators, state vectors and density matrices.

Mode order is global: index 0 is the controller mode a, index 1 the plant
mode b. Mode 0 is the leftmost (slow) Kronecker factor. Operators are stored
as CSR matrices with no explicit zeros; states and density matrices are dense.
"""

import math
from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np
import scipy.sparse as sp

import src.kerrloop.const as const
from src.kerrloop.errors import InvalidDimensionError, NormalizationError
from src.kerrloop.utils.logger import logger


@dataclass(frozen=True)
class HilbertSpec:
    mode_dims: tuple[int, ...] = const.DEFAULT_DIMS

    def __post_init__(self):
        dims = tuple(int(d) for d in self.mode_dims)
        if not dims or len(dims) > 2:
            raise InvalidDimensionError(
                f"expected one or two modes, got mode_dims={self.mode_dims}"
            )
        if any(d < 2 for d in dims):
            raise InvalidDimensionError(
                f"every mode needs dimension >= 2, got mode_dims={dims}"
            )
        object.__setattr__(self, "mode_dims", dims)

    @property
    def total_dim(self) -> int:
        return math.prod(self.mode_dims)

    @property
    def n_modes(self) -> int:
        return len(self.mode_dims)


def _require_same_space(left: HilbertSpec, right: HilbertSpec) -> None:
    if left != right:
        raise InvalidDimensionError(
            f"space mismatch: {left.mode_dims} vs {right.mode_dims}"
        )


@dataclass(frozen=True, eq=False)
class Operator:
    space: HilbertSpec
    data: sp.csr_matrix

    # numpy scalars defer to __rmul__ instead of building object arrays
    __array_ufunc__ = None

    def __post_init__(self):
        data = sp.csr_matrix(self.data, dtype=complex, copy=True)
        data.eliminate_zeros()
        data.sort_indices()
        n = self.space.total_dim
        if data.shape != (n, n):
            raise InvalidDimensionError(
                f"operator shape {data.shape} does not match space of dimension {n}"
            )
        object.__setattr__(self, "data", data)

    def dag(self) -> "Operator":
        return Operator(self.space, self.data.conj().T.tocsr())

    def to_dense(self) -> np.ndarray:
        return self.data.toarray()

    def is_hermitian(self, tol: float = const.HERMITIAN_TOL) -> bool:
        diff = self.data - self.data.conj().T
        return diff.nnz == 0 or float(np.abs(diff.data).max()) <= tol

    def __add__(self, other: "Operator") -> "Operator":
        _require_same_space(self.space, other.space)
        return Operator(self.space, self.data + other.data)

    def __sub__(self, other: "Operator") -> "Operator":
        _require_same_space(self.space, other.space)
        return Operator(self.space, self.data - other.data)

    def __neg__(self) -> "Operator":
        return Operator(self.space, -self.data)

    def __mul__(self, scalar: complex) -> "Operator":
        if isinstance(scalar, Operator):
            raise TypeError("use @ for operator products")
        return Operator(self.space, self.data * complex(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar: complex) -> "Operator":
        return Operator(self.space, self.data / complex(scalar))

    def __matmul__(self, other: "Operator") -> "Operator":
        _require_same_space(self.space, other.space)
        return Operator(self.space, self.data @ other.data)


def adjoint(op: Operator) -> Operator:
    return op.dag()


def commutator(left: Operator, right: Operator) -> Operator:
    return left @ right - right @ left


def destroy(dim: int) -> Operator:
    """Annihilation operator with M[n, n+1] = sqrt(n+1)"""
    if dim < 2:
        raise InvalidDimensionError(f"destroy needs dim >= 2, got {dim}")
    data = sp.diags(np.sqrt(np.arange(1, dim)), offsets=1, shape=(dim, dim), format="csr")
    return Operator(HilbertSpec((dim,)), data)


def identity(dim: int) -> Operator:
    return Operator(HilbertSpec((dim,)), sp.identity(dim, dtype=complex, format="csr"))


def number(dim: int) -> Operator:
    data = sp.diags(np.arange(dim, dtype=float), offsets=0, format="csr")
    return Operator(HilbertSpec((dim,)), data)


def embed(op: Operator, mode_index: int, space: HilbertSpec) -> Operator:
    """Lift a single-mode operator onto `space`, identities on the other modes"""
    if not 0 <= mode_index < space.n_modes:
        raise InvalidDimensionError(
            f"mode index {mode_index} out of range for {space.mode_dims}"
        )
    if op.space.mode_dims != (space.mode_dims[mode_index],):
        raise InvalidDimensionError(
            f"operator of dims {op.space.mode_dims} cannot act on mode {mode_index} "
            f"of dimension {space.mode_dims[mode_index]}"
        )
    factors = [
        op.data if k == mode_index else sp.identity(d, dtype=complex, format="csr")
        for k, d in enumerate(space.mode_dims)
    ]
    data = reduce(lambda left, right: sp.kron(left, right, format="csr"), factors)
    return Operator(space, data)


def mode_destroy(space: HilbertSpec, mode_index: int) -> Operator:
    return embed(destroy(space.mode_dims[mode_index]), mode_index, space)


def mode_number(space: HilbertSpec, mode_index: int) -> Operator:
    return embed(number(space.mode_dims[mode_index]), mode_index, space)


@dataclass(frozen=True, eq=False)
class StateVector:
    space: HilbertSpec
    amplitudes: np.ndarray

    def __post_init__(self):
        amplitudes = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amplitudes.shape[0] != self.space.total_dim:
            raise InvalidDimensionError(
                f"state of length {amplitudes.shape[0]} does not match "
                f"space of dimension {self.space.total_dim}"
            )
        object.__setattr__(self, "amplitudes", amplitudes)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "StateVector":
        return StateVector(self.space, self.amplitudes / self.norm())


def _mode_vector(dim: int, occupation: int) -> np.ndarray:
    if not 0 <= occupation < dim:
        raise InvalidDimensionError(
            f"occupation {occupation} outside cutoff of mode with dimension {dim}"
        )
    vec = np.zeros(dim, dtype=complex)
    vec[occupation] = 1.0
    return vec


def _product(vectors: Sequence[np.ndarray]) -> np.ndarray:
    return reduce(np.kron, vectors)


def fock_state(space: HilbertSpec, occupations: Sequence[int] | int) -> StateVector:
    occupations = np.atleast_1d(occupations).astype(int)
    if len(occupations) != space.n_modes:
        raise InvalidDimensionError(
            f"{len(occupations)} occupations given for {space.n_modes} modes"
        )
    vectors = [_mode_vector(d, n) for d, n in zip(space.mode_dims, occupations)]
    return StateVector(space, _product(vectors))


def _coherent_vector(dim: int, alpha: complex) -> np.ndarray:
    vec = np.zeros(dim, dtype=complex)
    vec[0] = 1.0
    for n in range(1, dim):
        vec[n] = vec[n - 1] * alpha / math.sqrt(n)
    weight = float(np.sum(np.abs(vec) ** 2)) * math.exp(-abs(alpha) ** 2)
    if 1.0 - weight > 1e-6:
        logger.warning(
            f"coherent state alpha={alpha} loses {1.0 - weight:.2e} of its norm "
            f"to truncation at dim {dim}"
        )
    return vec / np.linalg.norm(vec)


def coherent_state(space: HilbertSpec, alphas: Sequence[complex] | complex) -> StateVector:
    """Truncated coherent product state, renormalized to unit norm"""
    alphas = np.atleast_1d(np.asarray(alphas, dtype=complex))
    if len(alphas) != space.n_modes:
        raise InvalidDimensionError(f"{len(alphas)} amplitudes given for {space.n_modes} modes")
    vectors = [_coherent_vector(d, a) for d, a in zip(space.mode_dims, alphas)]
    return StateVector(space, _product(vectors))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    space: HilbertSpec
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        n = self.space.total_dim
        if data.shape != (n, n):
            raise InvalidDimensionError(
                f"density matrix shape {data.shape} does not match space of dimension {n}"
            )
        object.__setattr__(self, "data", data)

    @classmethod
    def from_state(cls, psi: StateVector) -> "DensityMatrix":
        amplitudes = psi.amplitudes / psi.norm()
        return cls(psi.space, np.outer(amplitudes, amplitudes.conj()))

    @classmethod
    def maximally_mixed(cls, space: HilbertSpec) -> "DensityMatrix":
        n = space.total_dim
        return cls(space, np.eye(n, dtype=complex) / n)

    def trace(self) -> complex:
        return complex(np.trace(self.data))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.data - self.data.conj().T)))

    def min_eigenvalue(self) -> float:
        hermitian = 0.5 * (self.data + self.data.conj().T)
        return float(np.linalg.eigvalsh(hermitian)[0])

    def purity(self) -> float:
        return float(np.real(np.vdot(self.data, self.data)))

    def violations(
        self,
        herm_tol: float = const.HERMITIAN_TOL,
        trace_tol: float = const.TRACE_TOL,
        pos_tol: float = const.POSITIVITY_TOL,
    ) -> list[str]:
        found = []
        if self.hermiticity_error() > herm_tol:
            found.append(f"hermiticity error {self.hermiticity_error():.3e} > {herm_tol}")
        if abs(self.trace() - 1.0) > trace_tol:
            found.append(f"trace {self.trace():.12g} differs from 1 by more than {trace_tol}")
        if self.min_eigenvalue() < -pos_tol:
            found.append(f"minimum eigenvalue {self.min_eigenvalue():.3e} < -{pos_tol}")
        return found

    def is_valid(self, **tolerances) -> bool:
        return not self.violations(**tolerances)

    def check(self, **tolerances) -> "DensityMatrix":
        found = self.violations(**tolerances)
        if found:
            raise NormalizationError("invalid density matrix: " + "; ".join(found))
        return self


def ket2dm(psi: StateVector) -> DensityMatrix:
    return DensityMatrix.from_state(psi)


def expectation(rho: DensityMatrix, op: Operator) -> complex:
    """Tr(op rho)"""
    _require_same_space(rho.space, op.space)
    return complex(np.trace(op.data @ rho.data))


def state_expectation(psi: StateVector, op: Operator) -> complex:
    """<psi|op|psi>/<psi|psi> for a possibly unnormalized state"""
    _require_same_space(psi.space, op.space)
    amplitudes = psi.amplitudes
    return complex(np.vdot(amplitudes, op.data @ amplitudes) / np.vdot(amplitudes, amplitudes))


def partial_trace(rho: DensityMatrix, keep: int) -> DensityMatrix:
    """Reduce a two-mode density matrix to mode `keep`"""
    if rho.space.n_modes == 1:
        if keep != 0:
            raise InvalidDimensionError(f"single-mode state has no mode {keep}")
        return rho
    d0, d1 = rho.space.mode_dims
    tensor = rho.data.reshape(d0, d1, d0, d1)
    if keep == 0:
        reduced = np.einsum("ijkj->ik", tensor)
    elif keep == 1:
        reduced = np.einsum("ijik->jk", tensor)
    else:
        raise InvalidDimensionError(f"cannot keep mode {keep} of a two-mode state")
    return DensityMatrix(HilbertSpec((rho.space.mode_dims[keep],)), reduced)


def photon_distribution(rho: DensityMatrix, mode: int = 0) -> np.ndarray:
    """P(n) of one mode"""
    reduced = partial_trace(rho, mode)
    return np.real(np.diag(reduced.data)).copy()
