import numpy as np
import pytest

from icpp.basis import (CUBIC_BSPLINE, GAUSSIAN_RBF, basis_hessian_components, build_basis,
                        evaluate_basis, penalty_gram)
from icpp.errors import BasisError, OutOfRegionError
from icpp.geometry import Region, build_quadrature

from .oracles import de_boor_design

RECT = [(0.0, 0.0), (2.0, 0.0), (2.0, 1.0), (0.0, 1.0)]


def test_bspline_size_formula(unit_region, unit_quad):
    for k, q in [(10, 13), (5, 8), (2, 5)]:
        basis = build_basis(CUBIC_BSPLINE, unit_region, unit_quad, knots=k)
        assert basis.q == q


def test_bspline_matches_de_boor_oracle(unit_region, unit_quad):
    basis = build_basis(CUBIC_BSPLINE, unit_region, unit_quad, knots=4)
    rng = np.random.default_rng(0)
    pts = np.concatenate([[0.0, 1.0], rng.random(40)])
    ours = evaluate_basis(basis, pts)
    ref = de_boor_design(pts, basis.knots)
    assert np.max(np.abs(ours - ref)) < 1e-12


def test_partition_of_unity(bspline_basis):
    rng = np.random.default_rng(1)
    pts = rng.random(1000)
    rows = evaluate_basis(bspline_basis, pts).sum(axis=1)
    assert np.max(np.abs(rows - 1.0)) < 1e-10


def test_basis_nonnegative_everywhere(bspline_basis, unit_region, unit_quad):
    rng = np.random.default_rng(2)
    pts = rng.random(100)
    assert np.min(evaluate_basis(bspline_basis, pts)) >= 0.0
    rect = Region.polygon(RECT)
    quad2 = build_quadrature(rect, 60)
    rbf = build_basis(GAUSSIAN_RBF, rect, quad2, centers=(5, 5), bandwidth=0.3)
    pts2 = np.column_stack([2 * rng.random(100), rng.random(100)])
    assert np.min(evaluate_basis(rbf, pts2)) >= 0.0


def test_rbf_grid_count_and_values():
    rect = Region.polygon(RECT)
    quad = build_quadrature(rect, 80)
    basis = build_basis(GAUSSIAN_RBF, rect, quad, centers=(7, 7), bandwidth=0.25)
    assert basis.q == 49
    at_centers = evaluate_basis(basis, basis.centers)
    assert np.diag(at_centers) == pytest.approx(np.ones(49))
    # one bandwidth away from a center, along x
    c = basis.centers[24]
    val = evaluate_basis(basis, [(c[0] + 0.25, c[1])])[0, 24]
    assert val == pytest.approx(np.exp(-0.5), rel=1e-12)


def test_rbf_default_bandwidth_from_spacing():
    rect = Region.polygon(RECT)
    quad = build_quadrature(rect, 60)
    basis = build_basis(GAUSSIAN_RBF, rect, quad, centers=(5, 5))
    # spacing: max(2/4, 1/4) = 0.5 -> h = 0.6
    assert basis.bandwidth == pytest.approx(0.6)


def test_integral_vector_consistency(bspline_basis, unit_quad):
    rng = np.random.default_rng(3)
    design = evaluate_basis(bspline_basis, unit_quad.nodes)
    for _ in range(100):
        c = rng.random(bspline_basis.q)
        direct = unit_quad.integrate(design @ c)
        assert abs(bspline_basis.integrals @ c - direct) < 1e-8 * max(1.0, abs(direct))


def test_out_of_region_evaluation(bspline_basis):
    with pytest.raises(OutOfRegionError):
        evaluate_basis(bspline_basis, [1.5])


def test_penalty_zero_for_linear_functions(bspline_basis, unit_quad):
    # coefficients reproducing a linear function have zero roughness
    nodes = np.asarray(unit_quad.nodes)
    design = evaluate_basis(bspline_basis, nodes)
    target = 0.3 + 0.4 * nodes
    c, *_ = np.linalg.lstsq(design, target, rcond=None)
    assert abs(c @ bspline_basis.penalty @ c) < 1e-8


def test_penalty_matches_finite_difference_oracle(unit_region):
    quad = build_quadrature(unit_region, 256)
    basis = build_basis(CUBIC_BSPLINE, unit_region, quad, knots=5)
    grid = np.linspace(0.0, 1.0, 20001)
    h = 1e-4

    def eval_clipped(x):
        return evaluate_basis(basis, np.clip(x, 0.0, 1.0))

    d2 = np.empty((grid.size, basis.q))
    inner = (grid >= h) & (grid <= 1.0 - h)
    d2[inner] = (eval_clipped(grid[inner] + h) - 2.0 * eval_clipped(grid[inner])
                 + eval_clipped(grid[inner] - h)) / h**2
    # one-sided at the ends
    for idx in np.nonzero(~inner)[0]:
        x = grid[idx]
        if x < h:
            d2[idx] = (eval_clipped(np.array([x]))[0] - 2.0 * eval_clipped(np.array([x + h]))[0]
                       + eval_clipped(np.array([x + 2 * h]))[0]) / h**2
        else:
            d2[idx] = (eval_clipped(np.array([x]))[0] - 2.0 * eval_clipped(np.array([x - h]))[0]
                       + eval_clipped(np.array([x - 2 * h]))[0]) / h**2
    w = np.full(grid.size, grid[1] - grid[0])
    w[0] = w[-1] = 0.5 * (grid[1] - grid[0])
    omega_fd = (d2 * w[:, None]).T @ d2
    scale = np.max(np.abs(basis.penalty))
    assert np.max(np.abs(omega_fd - basis.penalty)) < 1e-4 * scale


def test_penalty_quadratic_form_agreement_2d():
    rect = Region.polygon(RECT)
    quad = build_quadrature(rect, 100)
    basis = build_basis(GAUSSIAN_RBF, rect, quad, centers=(5, 4), bandwidth=0.35)
    rng = np.random.default_rng(4)
    dxx, dxy, dyy = basis_hessian_components(basis, quad.nodes)
    for _ in range(20):
        c = rng.random(basis.q)
        direct = quad.integrate((dxx @ c) ** 2 + 2.0 * (dxy @ c) ** 2 + (dyy @ c) ** 2)
        quad_form = c @ basis.penalty @ c
        assert quad_form == pytest.approx(direct, rel=1e-6)


def test_penalty_psd(bspline_basis):
    eigs = np.linalg.eigvalsh(bspline_basis.penalty)
    assert eigs.min() >= -1e-9 * np.abs(eigs).max()


def test_penalty_gram_recompute_matches(bspline_basis, unit_quad):
    omega = penalty_gram(bspline_basis, unit_quad)
    assert np.allclose(omega, bspline_basis.penalty)


def test_layout_validation(unit_region, unit_quad):
    with pytest.raises(BasisError):
        build_basis(CUBIC_BSPLINE, unit_region, unit_quad, knots=1)
    with pytest.raises(BasisError):
        build_basis(CUBIC_BSPLINE, unit_region, unit_quad, knots=[0.0, 0.5, 1.5])
    rect = Region.polygon(RECT)
    quad2 = build_quadrature(rect, 40)
    with pytest.raises(BasisError):
        build_basis(GAUSSIAN_RBF, rect, quad2, centers=(1, 3), bandwidth=0.3)
    with pytest.raises(BasisError):
        build_basis(GAUSSIAN_RBF, rect, quad2, centers=(3, 3), bandwidth=-0.1)
    with pytest.raises(BasisError):
        build_basis(CUBIC_BSPLINE, rect, quad2, knots=5)


def test_explicit_breakpoints(unit_region, unit_quad):
    basis = build_basis(CUBIC_BSPLINE, unit_region, unit_quad,
                        knots=np.array([0.0, 0.2, 0.55, 1.0]))
    assert basis.q == 6
    rows = evaluate_basis(basis, np.linspace(0, 1, 50)).sum(axis=1)
    assert np.max(np.abs(rows - 1.0)) < 1e-10
