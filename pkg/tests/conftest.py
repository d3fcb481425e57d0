import numpy as np
import pytest

from thermoreg.mesh import Geometry, build_structured_mesh


@pytest.fixture(scope="session")
def geometry():
    return Geometry()


@pytest.fixture(scope="session")
def mesh5(geometry):
    return build_structured_mesh(geometry, 5)


@pytest.fixture(scope="session")
def mesh11(geometry):
    return build_structured_mesh(geometry, 11)


@pytest.fixture(scope="session")
def mesh21(geometry):
    return build_structured_mesh(geometry, 21)


@pytest.fixture(scope="session")
def mesh41(geometry):
    return build_structured_mesh(geometry, 41)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240607)
