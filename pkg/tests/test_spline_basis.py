# this_file: tests/test_spline_basis.py
"""Tests for knot vectors, Cox-de Boor evaluation and centered bases."""

import numpy as np
import pytest
from scipy.interpolate import BSpline

from spline_gee.exceptions import DegenerateDesignError, DomainError, ParameterDomainError
from spline_gee.spline_basis import build_knots, eval_centered, eval_raw, fit_centering


class TestBuildKnots:
    """Test clamped, equally spaced knot sequences."""

    def test_linear_two_interior(self):
        """N=2, q=1 gives [0, 0, 1/3, 2/3, 1, 1] and four raw functions."""
        kv = build_knots(2, 1)
        np.testing.assert_allclose(kv.knots, [0, 0, 1 / 3, 2 / 3, 1, 1], atol=1e-15)
        assert kv.dimension == 4
        np.testing.assert_allclose(kv.interior, [1 / 3, 2 / 3])

    def test_cubic_one_interior(self):
        """N=1, q=3 has length N + 2(q + 1) = 9."""
        kv = build_knots(1, 3)
        np.testing.assert_allclose(kv.knots, [0, 0, 0, 0, 0.5, 1, 1, 1, 1])
        assert kv.dimension == 5

    def test_rejects_zero_interior_knots(self):
        """N=0 is outside the parameter domain."""
        with pytest.raises(ParameterDomainError):
            build_knots(0, 1)

    def test_rejects_fractional_degree(self):
        with pytest.raises(ParameterDomainError):
            build_knots(3, 1.5)

    def test_knots_are_read_only(self):
        kv = build_knots(3, 3)
        with pytest.raises(ValueError):
            kv.knots[0] = 0.5


class TestEvalRaw:
    """Test raw B-spline evaluation."""

    def test_hat_functions_at_midpoint(self):
        """Linear splines at z=0.5 with knots at 1/3 and 2/3."""
        np.testing.assert_allclose(eval_raw(build_knots(2, 1), 0.5), [0, 0.5, 0.5, 0], atol=1e-15)

    def test_right_endpoint(self):
        """z=1 belongs to the last function."""
        np.testing.assert_allclose(eval_raw(build_knots(2, 1), 1.0), [0, 0, 0, 1], atol=1e-15)

    def test_left_endpoint(self):
        np.testing.assert_allclose(eval_raw(build_knots(2, 1), 0.0), [1, 0, 0, 0], atol=1e-15)

    @pytest.mark.parametrize("n_interior", [1, 2, 5, 9])
    @pytest.mark.parametrize("degree", [1, 2, 3])
    def test_partition_of_unity(self, n_interior, degree):
        """Rows sum to one everywhere on [0, 1], boundaries included."""
        z = np.concatenate([[0.0, 1.0], np.random.default_rng(3).uniform(size=200)])
        basis = eval_raw(build_knots(n_interior, degree), z)
        assert basis.shape == (z.size, n_interior + degree + 1)
        np.testing.assert_allclose(basis.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(basis >= -1e-15)

    @pytest.mark.parametrize("n_interior", [1, 3, 8])
    @pytest.mark.parametrize("degree", [1, 2, 3])
    def test_matches_scipy_design_matrix(self, n_interior, degree):
        """Cox-de Boor values agree with scipy's B-spline design matrix on [0, 1)."""
        kv = build_knots(n_interior, degree)
        z = np.concatenate([[0.0], kv.interior, np.random.default_rng(8).uniform(size=100)])
        expected = BSpline.design_matrix(z, kv.knots, degree).toarray()
        np.testing.assert_allclose(eval_raw(kv, z), expected, atol=1e-13)

    def test_scalar_and_vector_agree(self):
        kv = build_knots(4, 3)
        z = np.array([0.1, 0.37, 0.8])
        rows = eval_raw(kv, z)
        for i, value in enumerate(z):
            np.testing.assert_array_equal(eval_raw(kv, value), rows[i])

    def test_outside_unit_interval(self):
        with pytest.raises(DomainError):
            eval_raw(build_knots(2, 1), 1.2)
        with pytest.raises(DomainError):
            eval_raw(build_knots(2, 1), [0.5, np.nan])


class TestCenteredBasis:
    """Test empirical centering."""

    def setup_method(self):
        self.grid = np.linspace(0.0, 1.0, 1000)

    @pytest.mark.parametrize("n_interior,degree", [(1, 1), (2, 1), (4, 3), (8, 2)])
    def test_zero_empirical_mean(self, n_interior, degree):
        """Each centered function averages to zero over its training sample."""
        basis = fit_centering(build_knots(n_interior, degree), self.grid)
        values = eval_centered(basis, self.grid)
        assert values.shape == (self.grid.size, n_interior + degree)
        np.testing.assert_allclose(values.mean(axis=0), 0.0, atol=1e-10)

    def test_dimension_drops_one(self):
        basis = fit_centering(build_knots(2, 1), self.grid)
        assert basis.dimension == 3
        assert basis.degree == 1
        assert basis.interior_count == 2

    def test_reduces_where_first_function_vanishes(self):
        """Where b_1(z)=0 the centered value is sqrt(N) b_{s+1}(z)."""
        kv = build_knots(2, 1)
        basis = fit_centering(kv, self.grid)
        expected = np.sqrt(2) * eval_raw(kv, 0.9)[1:]
        np.testing.assert_allclose(basis.evaluate(0.9), expected, atol=1e-15)

    def test_zero_coefficients_give_zero_curve(self):
        basis = fit_centering(build_knots(5, 3), self.grid)
        np.testing.assert_array_equal(basis.evaluate(self.grid) @ np.zeros(basis.dimension), 0.0)

    def test_deterministic(self):
        basis = fit_centering(build_knots(5, 3), self.grid)
        np.testing.assert_array_equal(basis.evaluate(self.grid), basis.evaluate(self.grid))

    def test_sample_away_from_left_boundary(self):
        """A sample with no mass under b_1 cannot be centered."""
        with pytest.raises(DegenerateDesignError):
            fit_centering(build_knots(2, 1), np.linspace(0.5, 1.0, 50))

    def test_empty_sample(self):
        with pytest.raises(DegenerateDesignError):
            fit_centering(build_knots(2, 1), np.array([]))
