# this_file: tests/test_marginal_model.py
"""Tests for link families, working correlations and covariance solves."""

import numpy as np
import pytest

from spline_gee.exceptions import (
    DegenerateVarianceError,
    IllConditionedCovarianceError,
    NumericDomainError,
    ParameterDomainError,
)
from spline_gee.marginal_model import (
    ClusterCovariance,
    LinkFamily,
    WorkingCorrelation,
    build_correlation,
    correlation_inverse,
    marginal_variance,
    mu_and_delta,
    solve_working_covariance,
    working_covariance,
)


class TestLinkFamily:
    """Test mean functions and variances."""

    def test_identity_link(self):
        mu, delta = mu_and_delta(LinkFamily.gaussian(), np.array([-2.0, 0.0, 3.5]))
        np.testing.assert_array_equal(mu, [-2.0, 0.0, 3.5])
        np.testing.assert_array_equal(delta, 1.0)

    def test_logit_at_zero(self):
        mu, delta = mu_and_delta(LinkFamily.bernoulli(), np.array([0.0]))
        assert mu[0] == 0.5
        assert delta[0] == 0.25

    def test_logit_derivative_stays_positive(self):
        """Far in the tail the derivative underflows gracefully, never to zero."""
        mu, delta = mu_and_delta(LinkFamily.bernoulli(), np.array([-40.0, 40.0]))
        assert abs(mu[0] - np.exp(-40.0)) < 1e-15
        assert np.all(delta > 0.0)

    def test_non_finite_predictor(self):
        with pytest.raises(NumericDomainError):
            mu_and_delta(LinkFamily.bernoulli(), np.array([0.0, np.inf]))

    def test_bernoulli_variance(self):
        np.testing.assert_allclose(
            marginal_variance(LinkFamily.bernoulli(), np.array([0.5, 0.1])), [0.25, 0.09]
        )

    def test_bernoulli_boundary_mean(self):
        with pytest.raises(DegenerateVarianceError):
            marginal_variance(LinkFamily.bernoulli(), np.array([0.3, 1.0]))

    def test_gaussian_dispersion(self):
        np.testing.assert_array_equal(
            marginal_variance(LinkFamily.gaussian(2.5), np.zeros(3)), [2.5, 2.5, 2.5]
        )

    def test_unknown_family(self):
        with pytest.raises(ParameterDomainError):
            LinkFamily("poisson")


class TestWorkingCorrelation:
    """Test correlation matrices and their admissible parameters."""

    def test_ar1_matrix(self):
        expected = np.array([[1.0, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 1.0]])
        np.testing.assert_allclose(build_correlation(WorkingCorrelation("ar1", 0.5), 3), expected)

    def test_exchangeable_matrix(self):
        corr = build_correlation(WorkingCorrelation("ex", 0.3), 4)
        np.testing.assert_array_equal(np.diag(corr), 1.0)
        assert corr[0, 3] == 0.3

    def test_independence_ignores_alpha(self):
        np.testing.assert_array_equal(build_correlation(WorkingCorrelation("ind"), 3), np.eye(3))

    def test_exchangeable_lower_bound(self):
        """alpha must exceed -1/(m-1) for the largest cluster."""
        wc = WorkingCorrelation("ex", -0.5)
        wc.validate(2)
        with pytest.raises(ParameterDomainError):
            wc.validate(4)
        assert wc.admissible_interval(4) == (-1.0 / 3.0, 1.0)

    def test_ar1_parameter_range(self):
        with pytest.raises(ParameterDomainError):
            WorkingCorrelation("ar1", 1.0)

    def test_unknown_structure(self):
        with pytest.raises(ParameterDomainError):
            WorkingCorrelation("unstructured", 0.1)

    @pytest.mark.parametrize(
        "wc",
        [WorkingCorrelation("ind"), WorkingCorrelation("ex", 0.4), WorkingCorrelation("ar1", 0.6)],
    )
    def test_closed_form_inverse(self, wc):
        corr = build_correlation(wc, 6)
        inverse = correlation_inverse(wc, 6)
        np.testing.assert_allclose(inverse @ corr, np.eye(6), atol=1e-12)
        dense = correlation_inverse(wc, 6, closed_form=False)
        np.testing.assert_allclose(inverse, dense, atol=1e-10)

    def test_ar1_inverse_is_tridiagonal(self):
        inverse = correlation_inverse(WorkingCorrelation("ar1", 0.6), 6)
        rows, cols = np.indices(inverse.shape)
        assert np.all(inverse[np.abs(rows - cols) > 1] == 0.0)


class TestSolveWorkingCovariance:
    """Test V^{-1} x through the cached correlation inverse."""

    def test_exchangeable_solve(self):
        """With unit variances and alpha=0.5, V (1,1,1) = 2 (1,1,1)."""
        cov = working_covariance(LinkFamily.gaussian(), WorkingCorrelation("ex", 0.5), np.zeros(3))
        np.testing.assert_allclose(cov.solve(np.ones(3)), [0.5, 0.5, 0.5])

    def test_independence_returns_rhs(self):
        cov = working_covariance(LinkFamily.gaussian(), WorkingCorrelation("ind"), np.zeros(4))
        rhs = np.array([1.0, -2.0, 0.5, 3.0])
        np.testing.assert_allclose(cov.solve(rhs), rhs)

    def test_matches_dense_solve(self):
        rng = np.random.default_rng(11)
        a_diag = rng.uniform(0.2, 2.0, size=5)
        wc = WorkingCorrelation("ar1", 0.3)
        cov = ClusterCovariance(
            a_diag=a_diag, corr=build_correlation(wc, 5), corr_inverse=correlation_inverse(wc, 5)
        )
        rhs = rng.normal(size=(5, 3))
        np.testing.assert_allclose(cov.solve(rhs), np.linalg.solve(cov.matrix(), rhs), atol=1e-10)

    def test_factorized_inverse_on_construction(self):
        """Without a supplied inverse the correlation is factorized once at construction."""
        rng = np.random.default_rng(5)
        wc = WorkingCorrelation("ex", 0.2)
        cov = ClusterCovariance(a_diag=rng.uniform(0.5, 1.5, size=4), corr=build_correlation(wc, 4))
        np.testing.assert_allclose(cov.corr_inverse @ cov.corr, np.eye(4), atol=1e-12)
        rhs = rng.normal(size=4)
        np.testing.assert_allclose(cov.solve(rhs), np.linalg.solve(cov.matrix(), rhs), atol=1e-10)

    def test_working_covariance_uses_cached_inverse(self):
        wc = WorkingCorrelation("ar1", 0.4)
        cov = working_covariance(LinkFamily.bernoulli(), wc, np.full(5, 0.3), index=2)
        assert cov.corr_inverse is correlation_inverse(wc, 5)
        np.testing.assert_allclose(
            cov.solve(np.ones(5)), np.linalg.solve(cov.matrix(), np.ones(5)), atol=1e-10
        )

    def test_indefinite_correlation(self):
        corr = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(IllConditionedCovarianceError) as info:
            ClusterCovariance(np.ones(2), corr, index=7)
        assert info.value.cluster == 7

    def test_zero_variance(self):
        cov = ClusterCovariance(np.array([1.0, 0.0]), np.eye(2))
        with pytest.raises(IllConditionedCovarianceError):
            solve_working_covariance(cov, np.ones(2))

    def test_shape_mismatch(self):
        cov = working_covariance(LinkFamily.gaussian(), WorkingCorrelation("ind"), np.zeros(3))
        with pytest.raises(ParameterDomainError):
            cov.solve(np.ones(4))
