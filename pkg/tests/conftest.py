import numpy as np
import pytest

from kbody.radon import build_radon_operator
from kbody.symmetry import Dimensions

# Operator grids sized so membership calibration separates signal from
# quadrature noise; all are disk-cached after the first build.
OP_SIZES = {
    (2, 2): 400,
    (1, 3): 400,
    (2, 3): 800,
    (1, 4): 600,
    (1, 5): 1000,
    (3, 3): 500,
    (2, 4): 1000,
}


def _op(kappa, n):
    return build_radon_operator(Dimensions(kappa, n), OP_SIZES[(kappa, n)],
                                seed=0)


@pytest.fixture(scope="session")
def op22():
    return _op(2, 2)


@pytest.fixture(scope="session")
def op13():
    return _op(1, 3)


@pytest.fixture(scope="session")
def op23():
    return _op(2, 3)


@pytest.fixture(scope="session")
def op14():
    return _op(1, 4)


@pytest.fixture(scope="session")
def op15():
    return _op(1, 5)


@pytest.fixture(scope="session")
def op33():
    return _op(3, 3)


@pytest.fixture(scope="session")
def op24():
    return _op(2, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(20260814)
