"""Closed-form Gaussian-conditional posterior and its marginals."""

import numpy as np
import pytest
from scipy import integrate, stats

import tiltcal as tc
from conftest import random_gaussian_linear_problem


class TestBuildPosterior:
    def test_two_asset_closed_forms(self, two_asset_posterior):
        post = two_asset_posterior
        assert post.cond_cov[0, 0] == pytest.approx(0.08506, abs=1e-3)
        assert post.conditional.intercept[0] == pytest.approx(0.8735, abs=1e-3)
        assert post.conditional.slope[0, 0] == pytest.approx(0.4177, abs=1e-3)
        assert post.y_mean()[0] == pytest.approx(1.5, abs=1e-12)

    def test_noop_views_reproduce_prior(self):
        prior = tc.GaussianPrior([0.4, -0.2], [[2.0, 0.5], [0.5, 1.0]])
        vmap = tc.LinearViewMap.identity(2, 1, 2)
        g = tc.GaussianDensity(0.4, np.sqrt(2.0))  # the prior X marginal
        views = tc.ViewSet(vmap, g, (tc.MomentView(target=-0.2, coord=0),))
        post = tc.build_posterior(prior, views)
        np.testing.assert_allclose(post.lam, 0.0, atol=1e-14)
        zs = np.random.default_rng(1).standard_normal((200, 2)) * 2.0
        np.testing.assert_allclose(
            tc.posterior_density_z(post, zs), prior.pdf(zs), rtol=1e-10
        )

    def test_three_factor_monte_carlo_moments_and_marginal(self):
        rng = np.random.default_rng(14)
        prior, views = random_gaussian_linear_problem(rng, 3)
        post = tc.build_posterior(prior, views)
        batch = tc.sample_posterior(post, 1_000_000, seed=2)
        y = batch.z_samples @ views.view_map.matrix.T[:, 1:]
        se = y.std(axis=0, ddof=1) / np.sqrt(batch.n)
        np.testing.assert_array_less(np.abs(y.mean(axis=0) - views.targets), 3 * se)
        x = batch.z_samples[:100_000] @ views.view_map.matrix[0]
        assert stats.kstest(x, lambda t: views.marginal.cdf(t)).pvalue > 0.01

    def test_mean_only_posterior_shifts_gaussian(self):
        """k1 = 0: moment views tilt the Gaussian, covariance unchanged."""
        prior = tc.GaussianPrior([0.0, 0.0], [[1.0, 0.5], [0.5, 2.0]])
        vmap = tc.LinearViewMap.identity(2, 0, 1)
        views = tc.ViewSet(vmap, None, (tc.MomentView(target=0.8, coord=0),))
        post = tc.build_posterior(prior, views)
        assert post.y_mean()[0] == pytest.approx(0.8)
        assert post.y_mean()[1] == pytest.approx(0.8 * 0.5)  # covariance pull
        np.testing.assert_allclose(post.cond_cov, prior.covariance)

    def test_agrees_with_newton_posterior_pointwise(self, two_asset_prior, two_asset_views):
        post = tc.build_posterior(two_asset_prior, two_asset_views)
        problem = tc.GaussianLinearProblem(two_asset_prior, two_asset_views)
        report = tc.solve_lambda_newton(two_asset_prior, two_asset_views, problem=problem)
        shifted = problem.conditional.shifted(problem.conditional_shift(report.lam))
        xs = np.random.default_rng(3).standard_normal((100, 1)) * 3.0
        np.testing.assert_allclose(shifted.mean(xs), post.conditional.mean(xs), atol=1e-8)
        np.testing.assert_allclose(shifted.cov, post.cond_cov, atol=1e-10)


class TestPosteriorDensity:
    def test_mode_value_matches_printed_constants(self, two_asset_posterior):
        # at the joint mode the two factors evaluate to
        # (3.42876 * 0.7 / sqrt(2 pi)) * (2 / (2.4120 pi sqrt(3)))
        expected = (3.42876 * 0.7 / np.sqrt(2 * np.pi)) * (
            2.0 / (2.4120 * np.pi * np.sqrt(3.0))
        )
        val = tc.posterior_density_z(two_asset_posterior, np.array([1.5, 1.5]))
        assert val == pytest.approx(expected, rel=1e-3)

    def test_identity_map_needs_no_jacobian(self):
        prior = tc.GaussianPrior([0.0, 0.0], [[1.0, 0.3], [0.3, 1.0]])
        vmap = tc.LinearViewMap.identity(2, 1, 2)
        g = tc.StudentTDensity(df=4.0, loc=0.2, scale=1.0)
        views = tc.ViewSet(vmap, g, (tc.MomentView(target=0.1, coord=0),))
        post = tc.build_posterior(prior, views)
        z = np.array([0.3, -0.4])
        cond = post.conditional
        direct = g.pdf(0.3) * stats.norm.pdf(
            -0.4, loc=cond.mean([0.3])[0], scale=np.sqrt(cond.cov[0, 0])
        )
        assert tc.posterior_density_z(post, z) == pytest.approx(direct, rel=1e-12)

    def test_normalization_on_wide_grid(self, two_asset_posterior):
        # power tails of the view need ~30 prior SDs before the truncated
        # mass drops below the 1e-4 tolerance
        xs = np.linspace(1.0 - 30 * np.sqrt(9.1), 1.0 + 30 * np.sqrt(9.1), 2001)
        ys = np.linspace(-54.0, 56.0, 2001)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        vals = tc.posterior_density_z(two_asset_posterior, pts).reshape(gx.shape)
        total = np.trapezoid(np.trapezoid(vals, ys, axis=1), xs)
        assert total == pytest.approx(1.0, abs=1e-4)


class TestPosteriorMarginals:
    def test_zero_correlation_shifts_only_the_mean(self):
        prior = tc.GaussianPrior([0.0, 2.0], np.diag([1.0, 4.0]))
        vmap = tc.LinearViewMap.identity(2, 1, 2)
        g = tc.StudentTDensity(df=3.0, loc=0.5, scale=1.0)
        views = tc.ViewSet(vmap, g, (tc.MomentView(target=3.0, coord=0),))
        post = tc.build_posterior(prior, views)
        s = np.linspace(-4, 10, 31)
        expected = stats.norm.pdf(s, loc=3.0, scale=2.0)
        got = np.array([tc.posterior_marginal_y1(post, sv) for sv in s])
        np.testing.assert_allclose(got, expected, rtol=1e-8)

    def test_two_asset_second_factor_mode_near_target(self, two_asset_posterior):
        s = np.linspace(0.5, 2.5, 81)
        dens = np.array([tc.posterior_marginal_y1(two_asset_posterior, sv) for sv in s])
        assert s[np.argmax(dens)] == pytest.approx(1.5, abs=0.05)

    def test_matches_kernel_density_of_samples(self, two_asset_posterior):
        batch = tc.sample_posterior(two_asset_posterior, 1_000_000, seed=0)
        z2 = batch.z_samples[:, 1]
        kde = stats.gaussian_kde(z2, bw_method=0.05)
        pts = np.linspace(-0.5, 3.5, 20)
        marg = np.array([tc.posterior_marginal_y1(two_asset_posterior, p) for p in pts])
        np.testing.assert_allclose(kde(pts), marg, rtol=0.02)

    def test_marginal_linear_recovers_view_density(self, two_asset_posterior):
        """The benchmark-portfolio marginal is the view density itself."""
        w = np.array([0.7, 0.3])
        s = np.linspace(-10, 12, 41)
        got = tc.posterior_marginal_linear(two_asset_posterior, w, s)
        np.testing.assert_allclose(got, two_asset_posterior.marginal.pdf(s), rtol=1e-9)

    def test_marginal_integrates_to_one(self, two_asset_posterior):
        val, _ = integrate.quad(
            lambda s: tc.posterior_marginal_y1(two_asset_posterior, s),
            -60.0, 60.0, limit=300,
        )
        assert val == pytest.approx(1.0, abs=1e-4)

    def test_x_marginal_is_exactly_the_view(self, two_asset_posterior):
        """Integrating the joint over y reproduces g at every grid x."""
        post = two_asset_posterior
        v = post.view_map.matrix
        for xv in np.linspace(-6.0, 9.0, 16):
            ys = np.linspace(-30, 30, 20001)
            # z = V^{-1} (x, y)
            u = np.column_stack([np.full_like(ys, xv), ys])
            zs = u @ np.linalg.inv(v).T
            dens = tc.posterior_density_z(post, zs)
            # integrate over y at fixed x; d z = |det V|^{-1} dx dy
            total = np.trapezoid(dens, ys) / post.view_map.jacobian
            assert total == pytest.approx(post.marginal.pdf(xv), rel=1e-8, abs=1e-12)

    def test_moment_constraint_by_quadrature(self, two_asset_posterior):
        post = two_asset_posterior

        def integrand(s):
            return s * tc.posterior_marginal_y1(post, s)

        # the mean integral converges like 1/s^2 in the power tails, so the
        # window must be wide for the 1e-6 tolerance
        val, _ = integrate.quad(
            integrand, -2500.0, 2500.0, points=[-20.0, 1.5, 20.0], limit=500
        )
        assert val == pytest.approx(1.5, abs=1e-6)

    def test_multivariate_x_rejected(self):
        prior = tc.GaussianPrior(np.zeros(3), np.eye(3))
        cond = tc.gaussian_conditional(prior, 2)
        post = tc.GaussianMarginalPosterior(
            view_map=tc.LinearViewMap.identity(3, 2, 3),
            marginal=None,
            conditional=cond,
            lam=np.zeros(0),
            moment_coords=(),
            prior_t=prior,
        )
        with pytest.raises(ValueError, match="one-dimensional"):
            tc.posterior_marginal_y1(post, 0.0)
