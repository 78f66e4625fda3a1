import numpy as np
import pytest

from icpp.errors import InvalidRegionError, OutOfRegionError
from icpp.geometry import Region, build_quadrature

TRIANGLE = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]


def test_interval_weights_sum_to_length():
    quad = build_quadrature(Region.interval(0.0, 1.0), 7)
    assert quad.weights.sum() == pytest.approx(1.0, abs=1e-12)
    quad = build_quadrature(Region.interval(-2.0, 3.5), 13)
    assert quad.weights.sum() == pytest.approx(5.5, abs=1e-10)


def test_unit_square_weights():
    square = Region.polygon([(0, 0), (1, 0), (1, 1), (0, 1)])
    quad = build_quadrature(square, 100)
    assert quad.weights.sum() == pytest.approx(1.0, abs=1e-4)


def test_triangle_area_against_exact():
    tri = Region.polygon(TRIANGLE)
    quad = build_quadrature(tri, 200)
    assert quad.weights.sum() == pytest.approx(0.5, abs=5e-3)


def test_quadrature_convergence_monotone_on_polygons():
    shapes = [
        Region.polygon(TRIANGLE),
        Region.polygon([(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)]),  # L-shape
    ]
    exact = [0.5, 3.0]
    for region, target in zip(shapes, exact):
        errs = [abs(build_quadrature(region, res).weights.sum() - target)
                for res in (25, 50, 100, 200)]
        assert all(e2 <= e1 + 1e-12 for e1, e2 in zip(errs, errs[1:])), errs


def test_interval_quadrature_integrates_polynomials_exactly():
    quad = build_quadrature(Region.interval(0.0, 2.0), 4)
    vals = quad.nodes**7 - 3.0 * quad.nodes**2
    assert quad.integrate(vals) == pytest.approx(2.0**8 / 8 - 2.0**3, rel=1e-12)


def test_region_contains_closed_boundary():
    iv = Region.interval(0.0, 1.0)
    assert iv.contains([0.0, 0.5, 1.0]).all()
    assert not iv.contains([-1e-9]).any()
    tri = Region.polygon(TRIANGLE)
    assert tri.contains([(0.0, 0.0), (0.5, 0.5), (0.2, 0.2)]).all()
    assert not tri.contains([(0.6, 0.6)]).any()


def test_require_inside_raises():
    with pytest.raises(OutOfRegionError):
        Region.interval(0.0, 1.0).require_inside([0.5, 1.2])


def test_degenerate_regions_rejected():
    with pytest.raises(InvalidRegionError):
        Region.interval(1.0, 1.0)
    with pytest.raises(InvalidRegionError):
        Region.polygon([(0, 0), (1, 0)])
    with pytest.raises(InvalidRegionError):
        Region.polygon([(0, 0), (1, 1), (1, 0), (0, 1)])  # bow-tie


def test_resolution_validated():
    with pytest.raises(ValueError):
        build_quadrature(Region.interval(0, 1), 1)


def test_weights_positive():
    quad = build_quadrature(Region.polygon(TRIANGLE), 50)
    assert np.all(quad.weights > 0)
    assert quad.region.contains(quad.nodes).all()
