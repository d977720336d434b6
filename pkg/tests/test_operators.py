import math

import numpy as np
import pytest
import scipy.sparse as sp
from numpy.testing import assert_allclose, assert_array_equal

from src.kerrloop.errors import InvalidDimensionError, NormalizationError
from src.kerrloop.quantum.operators import (
    DensityMatrix,
    HilbertSpec,
    Operator,
    adjoint,
    coherent_state,
    commutator,
    destroy,
    embed,
    expectation,
    fock_state,
    identity,
    ket2dm,
    number,
    partial_trace,
    photon_distribution,
    state_expectation,
)


def test_destroy_smallest_case():
    assert_array_equal(destroy(2).to_dense(), [[0, 1], [0, 0]])


def test_destroy_entries():
    assert destroy(3).to_dense()[1, 2] == pytest.approx(math.sqrt(2), abs=1e-15)


def test_number_identity():
    a = destroy(4)
    assert_allclose((adjoint(a) @ a).to_dense(), np.diag([0, 1, 2, 3]), atol=1e-15)


def test_destroy_rejects_small_dims():
    with pytest.raises(InvalidDimensionError):
        destroy(1)
    with pytest.raises(InvalidDimensionError):
        HilbertSpec((25, 1))


@pytest.mark.parametrize("dim", [2, 3, 5, 8])
def test_truncated_commutator_structure(dim):
    a = destroy(dim)
    expected = np.eye(dim)
    expected[-1, -1] = -(dim - 1)
    result = commutator(a, a.dag()).to_dense()
    assert_array_equal(result != 0, expected != 0)
    assert_allclose(result, expected, atol=1e-14)


def test_double_adjoint_is_exact():
    data = sp.random(6, 6, density=0.4, random_state=1) + 1j * sp.random(6, 6, density=0.4, random_state=2)
    op = Operator(HilbertSpec((6,)), data)
    assert_array_equal(op.dag().dag().to_dense(), op.to_dense())


def test_operator_never_stores_zeros():
    op = destroy(3) - destroy(3)
    assert op.data.nnz == 0


def test_embed_is_kronecker_with_mode_zero_leftmost():
    space = HilbertSpec((2, 2))
    lifted = embed(destroy(2), 0, space)
    assert_array_equal(lifted.to_dense(), np.kron(destroy(2).to_dense(), np.eye(2)))


def test_embed_identity():
    assert_array_equal(embed(identity(2), 1, HilbertSpec((2, 2))).to_dense(), np.eye(4))


def test_disjoint_modes_commute():
    space = HilbertSpec((3, 4))
    a = embed(destroy(3), 0, space)
    b_dag = embed(destroy(4), 1, space).dag()
    assert commutator(a, b_dag).data.nnz == 0


def test_embed_dimension_mismatch():
    with pytest.raises(InvalidDimensionError):
        embed(destroy(3), 0, HilbertSpec((2, 3)))


@pytest.mark.parametrize("dims, mode", [((3, 4), 0), ((3, 4), 1), ((2, 3), 1)])
def test_embed_preserves_spectrum(rng, dims, mode):
    d = dims[mode]
    m = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    op = Operator(HilbertSpec((d,)), m + m.conj().T)
    lifted = embed(op, mode, HilbertSpec(dims))
    repeat = math.prod(dims) // d
    expected = np.sort(np.repeat(np.linalg.eigvalsh(op.to_dense()), repeat))
    assert_allclose(np.linalg.eigvalsh(lifted.to_dense()), expected, atol=1e-12)


def test_operator_products_need_matmul():
    with pytest.raises(TypeError):
        destroy(2) * destroy(2)
    assert_array_equal((np.float64(2.0) * destroy(2)).to_dense(), 2 * destroy(2).to_dense())


def test_sparse_dense_product_matches_dense(rng):
    space = HilbertSpec((20,))
    left = Operator(space, sp.random(20, 20, density=0.2, random_state=3) * (1 + 2j))
    right = rng.normal(size=(20, 20)) + 1j * rng.normal(size=(20, 20))
    assert_allclose(left.data @ right, left.to_dense() @ right, atol=1e-12)


def test_expectation_examples():
    rho = ket2dm(fock_state(HilbertSpec((3,)), 1))
    assert expectation(rho, number(3)) == pytest.approx(1.0)
    mixed = DensityMatrix.maximally_mixed(HilbertSpec((5,)))
    assert expectation(mixed, identity(5)) == pytest.approx(1.0)


def test_coherent_state_photon_number():
    rho = ket2dm(coherent_state(HilbertSpec((30,)), 2.0))
    assert expectation(rho, number(30)).real == pytest.approx(4.0, abs=1e-6)
    psi = coherent_state(HilbertSpec((25,)), 3.0)
    assert state_expectation(psi, number(25)).real == pytest.approx(9.0, abs=1e-4)


def test_coherent_vacuum():
    psi = coherent_state(HilbertSpec((25,)), 0.0)
    assert_array_equal(psi.amplitudes, fock_state(HilbertSpec((25,)), 0).amplitudes)


def test_fock_state_layout():
    psi = fock_state(HilbertSpec((25, 25)), (0, 9))
    assert psi.amplitudes[9] == 1.0
    assert psi.norm() == 1.0
    with pytest.raises(InvalidDimensionError):
        fock_state(HilbertSpec((25, 25)), (0, 25))


def test_expectation_of_identity_is_trace(rng, random_density):
    space = HilbertSpec((3, 4))
    for _ in range(10):
        rho = random_density(space, rng)
        lifted = embed(identity(3), 0, space)
        assert expectation(rho, lifted) == pytest.approx(rho.trace(), abs=1e-12)


def test_expectation_is_real_for_hermitian(rng, random_density):
    rho = random_density(HilbertSpec((6,)), rng)
    a = destroy(6)
    assert abs(expectation(rho, a + a.dag()).imag) < 1e-10


def test_expectation_space_mismatch():
    with pytest.raises(InvalidDimensionError):
        expectation(DensityMatrix.maximally_mixed(HilbertSpec((3,))), number(4))


def test_partial_trace_of_product_state():
    space = HilbertSpec((2, 3))
    rho = ket2dm(fock_state(space, (1, 2)))
    assert_allclose(partial_trace(rho, 0).data, np.diag([0, 1]), atol=1e-15)
    assert_allclose(photon_distribution(rho, 1), [0, 0, 1], atol=1e-15)


def test_density_validity(rng, random_density):
    rho = random_density(HilbertSpec((4,)), rng)
    assert rho.is_valid()
    assert rho.check() is rho
    doubled = DensityMatrix(rho.space, 2 * rho.data)
    assert any("trace" in v for v in doubled.violations())
    with pytest.raises(NormalizationError):
        doubled.check()
