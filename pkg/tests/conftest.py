import numpy as np
import pytest

from torusendo.lattice import IntMatrix2
from torusendo.maps import TorusMap, compose, make_linear, make_shear
from torusendo.perturbation import make_g_epsilon

SQRT2 = np.sqrt(2.0)
LAMBDA_U = 2.0 + SQRT2
LAMBDA_S = 2.0 - SQRT2
CAT = [[3, 1], [1, 1]]


def eigen_oracle():
    """Eigenvalues and unit eigenvectors of ``[[3,1],[1,1]]`` (unstable first)."""
    w, V = np.linalg.eigh(np.array(CAT, dtype=float))
    return w[1], V[:, 1], w[0], V[:, 0]


def shear_sandwich(a: float):
    """``shear(a, vertical) o E o shear(a, horizontal)``."""
    return compose(make_shear(a, "vertical"), compose(make_linear(CAT), make_shear(a, "horizontal")))


class Uncompensated(TorusMap):
    """``(x, y) -> (2x + s sin(2 pi x), y)``: a degree-2 cover that does not preserve Lebesgue."""

    kind = "test"

    def __init__(self, s=0.05):
        super().__init__(IntMatrix2.diag(2, 1))
        self.s = s

    def lift(self, p):
        p = np.asarray(p, dtype=float)
        return np.stack([2 * p[..., 0] + self.s * np.sin(2 * np.pi * p[..., 0]), p[..., 1]], axis=-1)

    def lift_inverse(self, q):
        q = np.asarray(q, dtype=float)
        lo, hi = (q[..., 0] - self.s) / 2, (q[..., 0] + self.s) / 2
        for _ in range(80):
            mid = (lo + hi) / 2
            below = 2 * mid + self.s * np.sin(2 * np.pi * mid) < q[..., 0]
            lo, hi = np.where(below, mid, lo), np.where(below, hi, mid)
        return np.stack([(lo + hi) / 2, q[..., 1]], axis=-1)

    def jacobian(self, p):
        p = np.asarray(p, dtype=float)
        J = np.zeros(p.shape[:-1] + (2, 2))
        J[..., 0, 0] = 2 + 2 * np.pi * self.s * np.cos(2 * np.pi * p[..., 0])
        J[..., 1, 1] = 1.0
        return J


@pytest.fixture
def E():
    return make_linear(CAT)


@pytest.fixture
def homothety():
    return make_linear([[2, 0], [0, 2]])


@pytest.fixture
def sandwich():
    return shear_sandwich(0.5)


@pytest.fixture
def g_eps():
    return make_g_epsilon(IntMatrix2.from_rows(CAT), 0.02)
