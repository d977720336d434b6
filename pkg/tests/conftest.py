import numpy as np
import pytest

from src.kerrloop.quantum.models import LindbladModel
from src.kerrloop.quantum.operators import DensityMatrix, HilbertSpec, destroy, number


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def random_density():
    def make(space: HilbertSpec, rng: np.random.Generator) -> DensityMatrix:
        n = space.total_dim
        g = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        rho = g @ g.conj().T
        return DensityMatrix(space, rho / np.trace(rho))

    return make


@pytest.fixture
def decay_model():
    """Two-level pure decay at rate kappa, H = 0"""

    def make(kappa: float = 1.0) -> LindbladModel:
        a = destroy(2)
        return LindbladModel(
            space=a.space,
            hamiltonian=a * 0.0,
            collapse_ops=(a * np.sqrt(kappa),),
            labels={"n": number(2), "a": a},
            name="two-level-decay",
        )

    return make
