import numpy as np
import pytest

from slowfast import curvature, fibers, manifold
from slowfast.systems import make_lindemann, make_mmh, make_neishtadt


@pytest.fixture(scope="session")
def mmh():
    return make_mmh(2.0, 1.0, 0.1)


@pytest.fixture(scope="session")
def mmh_raw_man(mmh):
    return manifold.build_manifold(mmh.system, mmh.grid, 10)


@pytest.fixture(scope="session")
def mmh_raw_fib(mmh_raw_man):
    return fibers.build_phi(mmh_raw_man, 8)


@pytest.fixture(scope="session")
def mmh_dev_man(mmh):
    return manifold.build_manifold(mmh.deviation, mmh.grid, 10)


@pytest.fixture(scope="session")
def mmh_dev_fib(mmh_dev_man):
    return fibers.build_phi(mmh_dev_man, 8)


@pytest.fixture(scope="session")
def mmh_dev_quad(mmh_dev_fib):
    return curvature.build_psi(mmh_dev_fib, 4)


@pytest.fixture(scope="session")
def lindemann():
    return make_lindemann(0.1)


@pytest.fixture(scope="session")
def neishtadt():
    return make_neishtadt(0.2)


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(1e-300, float(np.max(np.abs(b)))))
