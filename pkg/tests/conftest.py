import numpy as np
import pytest

from icpp.basis import CUBIC_BSPLINE, build_basis
from icpp.geometry import Region, build_quadrature
from icpp.model import ModelParams, ScoreParams


@pytest.fixture(scope="session")
def unit_region():
    return Region.interval(0.0, 1.0)


@pytest.fixture(scope="session")
def unit_quad(unit_region):
    return build_quadrature(unit_region, 128)


@pytest.fixture(scope="session")
def bspline_basis(unit_region, unit_quad):
    return build_basis(CUBIC_BSPLINE, unit_region, unit_quad, knots=10)


@pytest.fixture(scope="session")
def small_basis(unit_region, unit_quad):
    return build_basis(CUBIC_BSPLINE, unit_region, unit_quad, knots=5)


def random_feasible_coeffs(basis, p, rng):
    c = rng.random((p, basis.q)) + 0.05
    return c / (c @ basis.integrals)[:, None]


@pytest.fixture
def two_component_model(bspline_basis):
    rng = np.random.default_rng(101)
    coeffs = random_feasible_coeffs(bspline_basis, 2, rng)
    return ModelParams(coeffs=coeffs, scores=ScoreParams([3.0, 2.0], 1.5), basis=bspline_basis)
