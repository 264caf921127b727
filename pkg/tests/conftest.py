import numpy as np
import pytest

from quadcarve import fixtures
from quadcarve.field import compute_cross_field
from quadcarve.mesh import Surface

np.seterr(all="warn")


@pytest.fixture(scope="session")
def square_surface():
    return Surface.build(fixtures.unit_square(8))


@pytest.fixture(scope="session")
def triangle_surface():
    return Surface.build(fixtures.equilateral_triangle(12))


@pytest.fixture(scope="session")
def pentagon_surface():
    return Surface.build(fixtures.regular_pentagon(10))


@pytest.fixture(scope="session")
def lshape_surface():
    return Surface.build(fixtures.l_shape(6))


@pytest.fixture(scope="session")
def annulus_surface():
    return Surface.build(fixtures.square_annulus(9))


@pytest.fixture(scope="session")
def hemisphere_surface():
    return Surface.build(fixtures.hemisphere_patch(10))


@pytest.fixture(scope="session")
def disk_surface():
    return Surface.build(fixtures.disk(rings=10, sides=12))


@pytest.fixture(scope="session")
def triangle_field(triangle_surface):
    field, system = compute_cross_field(triangle_surface)
    return field


@pytest.fixture(scope="session")
def pentagon_field(pentagon_surface):
    field, system = compute_cross_field(pentagon_surface)
    return field


@pytest.fixture(scope="session")
def square_field(square_surface):
    field, system = compute_cross_field(square_surface)
    return field
