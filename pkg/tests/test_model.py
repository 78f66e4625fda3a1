import numpy as np
import pytest

from icpp.basis import evaluate_basis
from icpp.errors import EnumerationBudgetError, OutOfRegionError, PatternUnsupportedError
from icpp.model import (LogLikResult, ModelParams, PointPattern, ScoreParams, complete_loglik,
                        component_density, exact_label_posterior, intensity, marginal_loglik,
                        posterior_intensity)
from icpp.em import e_step_exact

from .conftest import random_feasible_coeffs


def make_model(basis, coeffs, alphas, beta):
    return ModelParams(coeffs=np.asarray(coeffs, dtype=float),
                       scores=ScoreParams(alphas, beta), basis=basis)


class TestParams:
    def test_score_params_validated(self):
        with pytest.raises(ValueError):
            ScoreParams([1.0, -0.5], 1.0)
        with pytest.raises(ValueError):
            ScoreParams([1.0], 0.0)

    def test_model_params_constraint_checked(self, bspline_basis):
        c = np.full((1, bspline_basis.q), 0.5)
        with pytest.raises(ValueError):
            make_model(bspline_basis, c, [1.0], 1.0)

    def test_model_params_nonnegative_checked(self, bspline_basis):
        rng = np.random.default_rng(0)
        c = random_feasible_coeffs(bspline_basis, 1, rng)
        c[0, 0] = -0.01
        c[0] /= c[0] @ bspline_basis.integrals
        with pytest.raises(ValueError):
            make_model(bspline_basis, c, [1.0], 1.0)

    def test_canonical_ordering_applied(self, bspline_basis):
        rng = np.random.default_rng(1)
        c = random_feasible_coeffs(bspline_basis, 2, rng)
        m = make_model(bspline_basis, c, [1.0, 4.0], 1.0)
        assert m.scores.alphas[0] == 4.0
        assert np.allclose(m.coeffs[0], c[1])


class TestDensities:
    def test_uniform_coefficients_give_uniform_density(self, bspline_basis, unit_quad):
        # partition of unity: equal coefficients 1/|B| yield the flat density
        c = np.full((1, bspline_basis.q), 1.0)
        m = make_model(bspline_basis, c, [1.0], 1.0)
        pts = np.linspace(0, 1, 17)
        assert component_density(m, 0, pts) == pytest.approx(np.ones(17), abs=1e-10)

    def test_component_density_integrates_to_one(self, two_component_model, unit_quad):
        for k in range(2):
            vals = component_density(two_component_model, k, unit_quad.nodes)
            assert unit_quad.integrate(vals) == pytest.approx(1.0, abs=1e-6)

    def test_component_index_checked(self, two_component_model):
        with pytest.raises(IndexError):
            component_density(two_component_model, 2, [0.5])

    def test_density_outside_region_raises(self, two_component_model):
        with pytest.raises(OutOfRegionError):
            component_density(two_component_model, 0, [-0.2])

    def test_intensity_zero_scores(self, two_component_model):
        vals = intensity(two_component_model, [0.0, 0.0], np.linspace(0, 1, 9))
        assert np.all(vals == 0.0)

    def test_intensity_one_hot(self, two_component_model):
        pts = np.linspace(0, 1, 9)
        vals = intensity(two_component_model, [1.0, 0.0], pts)
        assert vals == pytest.approx(component_density(two_component_model, 0, pts))

    def test_intensity_integral_is_score_total(self, two_component_model, unit_quad):
        vals = intensity(two_component_model, [30.0, 20.0], unit_quad.nodes)
        assert unit_quad.integrate(vals) == pytest.approx(50.0, abs=1e-4)

    def test_intensity_negative_scores_rejected(self, two_component_model):
        with pytest.raises(ValueError):
            intensity(two_component_model, [-1.0, 1.0], [0.5])


class TestCompleteLoglik:
    def test_empty_pattern_is_prior_minus_total(self, two_component_model):
        u = np.array([2.0, 1.0])
        got = complete_loglik(two_component_model, PointPattern("e", np.zeros(0)), u, [])
        from icpp.model import gamma_log_prior
        expected = -3.0 + gamma_log_prior(u, two_component_model.scores.alphas,
                                          two_component_model.scores.beta)
        assert got == pytest.approx(expected, abs=1e-12)

    def test_single_point_single_component(self, bspline_basis):
        rng = np.random.default_rng(5)
        c = random_feasible_coeffs(bspline_basis, 1, rng)
        m = make_model(bspline_basis, c, [2.0], 1.0)
        u = np.array([1.7])
        pat = PointPattern("s", np.array([0.4]))
        phi = component_density(m, 0, [0.4])[0]
        from icpp.model import gamma_log_prior
        expected = -1.7 + np.log(1.7) + np.log(phi) + gamma_log_prior(u, m.scores.alphas, 1.0)
        assert complete_loglik(m, pat, u, [0]) == pytest.approx(expected, abs=1e-12)

    def test_zero_density_flagged_minus_inf(self, bspline_basis):
        # component supported only on the left half of the interval
        c = np.zeros((2, bspline_basis.q))
        c[0, :4] = 1.0
        c[1, -4:] = 1.0
        c /= (c @ bspline_basis.integrals)[:, None]
        m = make_model(bspline_basis, c, [2.0, 1.0], 1.0)
        pat = PointPattern("z", np.array([0.95]))
        k_left = int(np.argmax([component_density(m, k, [0.1])[0] for k in range(2)]))
        assert complete_loglik(m, pat, np.array([1.0, 1.0]), [k_left]) == -np.inf

    def test_agreement_with_marginal_by_numeric_integration(self, small_basis):
        # brute force: sum over labels and integrate the complete likelihood
        # over both scores with a dense Gauss-Legendre rule
        rng = np.random.default_rng(6)
        c = random_feasible_coeffs(small_basis, 2, rng)
        m = make_model(small_basis, c, [2.2, 1.4], 0.8)
        pat = PointPattern("two", np.array([0.35, 0.7]))
        # the tilted scores concentrate below u ~ 12 (posterior scale 0.44)
        order = 140
        nodes, weights = np.polynomial.legendre.leggauss(order)
        hi = 12.0
        u_nodes = 0.5 * hi * (nodes + 1.0)
        u_w = 0.5 * hi * weights
        total = 0.0
        for y0 in range(2):
            for y1 in range(2):
                vals = np.zeros((order, order))
                for i, u0 in enumerate(u_nodes):
                    for j, u1 in enumerate(u_nodes):
                        vals[i, j] = np.exp(complete_loglik(m, pat, np.array([u0, u1]),
                                                            [y0, y1]))
                total += u_w @ vals @ u_w
        expected = np.log(total)
        got = marginal_loglik(m, pat, method="exact")
        assert got.value == pytest.approx(expected, abs=1e-8)


class TestMarginal:
    def test_empty_pattern_laplace_transform(self, two_component_model):
        res = marginal_loglik(two_component_model, PointPattern("e", np.zeros(0)))
        a = two_component_model.scores.alphas.sum()
        b = two_component_model.scores.beta
        assert res.method == "exact"
        assert res.mc_std_err == 0.0
        assert res.value == pytest.approx(-a * np.log1p(b), abs=1e-12)

    def test_single_component_closed_form(self, bspline_basis):
        from scipy.special import gammaln
        rng = np.random.default_rng(7)
        c = random_feasible_coeffs(bspline_basis, 1, rng)
        alpha, beta = 2.3, 1.7
        m = make_model(bspline_basis, c, [alpha], beta)
        pts = rng.random(6)
        pat = PointPattern("p1", pts)
        phi = component_density(m, 0, pts)
        cnt = pts.size
        expected = (gammaln(alpha + cnt) - gammaln(alpha) + alpha * np.log(1 / (1 + beta))
                    + cnt * np.log(beta / (1 + beta)) + np.log(phi).sum())
        got = marginal_loglik(m, pat)
        assert got.method == "exact"
        assert got.value == pytest.approx(expected, abs=1e-10)

    def test_mc_within_three_stderr_of_exact(self, two_component_model):
        rng = np.random.default_rng(8)
        pat = PointPattern("m3", rng.random(3))
        exact = marginal_loglik(two_component_model, pat, method="exact")
        mc = marginal_loglik(two_component_model, pat, mc_draws=4000, seed=9,
                             method="monte-carlo")
        assert mc.method == "monte-carlo"
        assert mc.mc_std_err > 0
        assert abs(mc.value - exact.value) <= 3.0 * mc.mc_std_err

    def test_exact_mc_agreement_batch(self, small_basis):
        # 50 random small instances, |MC - exact| <= 3 se in >= 95% of cases
        rng = np.random.default_rng(10)
        hits = 0
        for trial in range(50):
            p = int(rng.integers(1, 4))
            coeffs = random_feasible_coeffs(small_basis, p, rng)
            m = make_model(small_basis, coeffs, 0.5 + rng.random(p) * 3, 0.3 + rng.random())
            pat = PointPattern("t", rng.random(int(rng.integers(0, 6))))
            exact = marginal_loglik(m, pat, method="exact")
            mc = marginal_loglik(m, pat, mc_draws=4000, seed=trial, method="monte-carlo")
            se = max(mc.mc_std_err, 1e-12)
            hits += abs(mc.value - exact.value) <= 3.0 * se
        assert hits >= 48

    def test_budget_guard(self, two_component_model):
        rng = np.random.default_rng(11)
        pat = PointPattern("big", rng.random(25))
        with pytest.raises(EnumerationBudgetError):
            marginal_loglik(two_component_model, pat, method="exact")
        res = marginal_loglik(two_component_model, pat, mc_draws=500, seed=1)
        assert res.method == "monte-carlo"

    def test_unsupported_pattern_raises(self, bspline_basis):
        c = np.zeros((2, bspline_basis.q))
        c[:, :4] = 1.0
        c /= (c @ bspline_basis.integrals)[:, None]
        m = make_model(bspline_basis, c, [1.0, 1.0], 1.0)
        with pytest.raises(PatternUnsupportedError):
            marginal_loglik(m, PointPattern("u", np.array([0.99])))

    def test_support_monotonicity_sanity(self, two_component_model):
        # adding a high-density point raises the log likelihood more than
        # adding a low-density point
        rng = np.random.default_rng(12)
        base_pts = rng.random(3)
        dens = intensity(two_component_model, [1.0, 1.0], np.linspace(0.01, 0.99, 99))
        grid = np.linspace(0.01, 0.99, 99)
        t_hi = grid[np.argmax(dens)]
        t_lo = grid[np.argmin(dens)]
        base = marginal_loglik(two_component_model, PointPattern("b", base_pts)).value
        hi = marginal_loglik(two_component_model,
                             PointPattern("h", np.append(base_pts, t_hi))).value
        lo = marginal_loglik(two_component_model,
                             PointPattern("l", np.append(base_pts, t_lo))).value
        assert np.isfinite(hi) and np.isfinite(lo)
        assert hi > lo
        assert hi != base

    def test_deterministic_given_seed(self, two_component_model):
        rng = np.random.default_rng(13)
        pat = PointPattern("d", rng.random(30))
        a = marginal_loglik(two_component_model, pat, mc_draws=200, seed=5)
        b = marginal_loglik(two_component_model, pat, mc_draws=200, seed=5)
        assert a.value == b.value


class TestPosteriorIntensity:
    def test_single_component_conjugate_oracle(self, bspline_basis):
        rng = np.random.default_rng(14)
        c = random_feasible_coeffs(bspline_basis, 1, rng)
        alpha, beta = 2.0, 1.5
        m = make_model(bspline_basis, c, [alpha], beta)
        pts = rng.random(4)
        pat = PointPattern("c", pts)
        stats = e_step_exact(m, [pat])
        grid = np.linspace(0, 1, 33)
        at_pts, on_grid = posterior_intensity(m, pat, stats, grid)
        factor = (alpha + 4) * beta / (1 + beta)
        assert on_grid == pytest.approx(factor * component_density(m, 0, grid), rel=1e-10)
        assert at_pts == pytest.approx(factor * component_density(m, 0, pts), rel=1e-10)

    def test_empty_pattern_prior_mean(self, bspline_basis):
        rng = np.random.default_rng(15)
        c = random_feasible_coeffs(bspline_basis, 1, rng)
        alpha, beta = 2.0, 1.5
        m = make_model(bspline_basis, c, [alpha], beta)
        pat = PointPattern("e", np.zeros(0))
        stats = e_step_exact(m, [pat])
        grid = np.linspace(0, 1, 9)
        _, on_grid = posterior_intensity(m, pat, stats, grid)
        factor = alpha * beta / (1 + beta)
        assert on_grid == pytest.approx(factor * component_density(m, 0, grid), rel=1e-10)

    def test_grid_nonnegative(self, two_component_model):
        rng = np.random.default_rng(16)
        pat = PointPattern("g", rng.random(5))
        stats = e_step_exact(two_component_model, [pat])
        _, on_grid = posterior_intensity(two_component_model, pat, stats,
                                         np.linspace(0, 1, 101))
        assert np.min(on_grid) >= 0.0

    def test_mismatched_stats_rejected(self, two_component_model):
        rng = np.random.default_rng(17)
        pat = PointPattern("x", rng.random(3))
        stats = e_step_exact(two_component_model, [pat])
        other = PointPattern("y", rng.random(3))
        with pytest.raises(ValueError):
            posterior_intensity(two_component_model, other, stats, [0.5])


def test_loglik_result_fields():
    r = LogLikResult(value=-1.0, mc_std_err=0.1, method="monte-carlo")
    assert r.method == "monte-carlo"
