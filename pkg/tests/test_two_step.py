# this_file: tests/test_two_step.py
"""Tests for the pilot fit, Step-II refits and the oracle estimator."""

import numpy as np
import pytest

from spline_gee.dataset import ClusteredDataset
from spline_gee.exceptions import DomainError, ParameterDomainError, RankDeficientDesignError
from spline_gee.marginal_model import WorkingCorrelation
from spline_gee.simgen import Example1Config
from spline_gee.two_step import (
    ORACLE,
    TWO_STEP,
    GeeModelSpec,
    TruthSpec,
    evaluate_component,
    fit_component,
    fit_oracle,
    fit_pilot,
    project_pilot,
)


def identity(z):
    return z


def _linear_dataset(n=40, m=5, seed=7, additive=True):
    """Noise-free gaussian data whose additive part is z - mean(z)."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, m, 2))
    z = rng.uniform(size=(n, m, 1)) if additive else np.zeros((n, m, 0))
    beta = np.array([0.7, -1.2])
    y = x @ beta
    if additive:
        y = y + z[..., 0] - z.mean()
    return ClusteredDataset.from_arrays(list(y), list(x), list(z)), beta


@pytest.fixture(scope="module")
def example1():
    return Example1Config(n=40, m=5, seed=3).generate()


@pytest.fixture(scope="module")
def pilot(example1):
    data, _ = example1
    return fit_pilot(data, GeeModelSpec(), 4)


class TestGeeModelSpec:
    """Test the smoothness order and alpha handling."""

    def test_default_smoothness(self):
        assert GeeModelSpec().p == 4
        assert GeeModelSpec(degree=1).p == 2
        assert GeeModelSpec(smoothness=2).p == 2

    def test_with_alpha(self):
        spec = GeeModelSpec(working_corr=WorkingCorrelation("ex")).with_alpha(0.3)
        assert spec.working_corr == WorkingCorrelation("ex", 0.3)

    def test_invalid_degree(self):
        with pytest.raises(ParameterDomainError):
            GeeModelSpec(degree=0)


class TestPilotFit:
    """Test Step I."""

    def test_no_additive_part_is_ols(self):
        data, _ = _linear_dataset(additive=False)
        rng = np.random.default_rng(1)
        noisy = ClusteredDataset.from_arrays(
            [c.y + rng.normal(size=c.size) for c in data.clusters],
            [c.x for c in data.clusters],
            [c.z for c in data.clusters],
        )
        fit = fit_pilot(noisy, GeeModelSpec(), 3)
        x = np.vstack([c.x for c in noisy.clusters])
        y = np.concatenate([c.y for c in noisy.clusters])
        np.testing.assert_allclose(fit.beta, np.linalg.lstsq(x, y, rcond=None)[0], atol=1e-8)
        assert fit.gamma.size == 0

    def test_components_are_centered(self, example1, pilot):
        data, _ = example1
        for l in range(data.additive_dim):
            assert abs(np.mean(pilot.theta(l, data.stacked_z(l)))) < 1e-10

    def test_coefficient_layout(self, example1, pilot):
        data, _ = example1
        assert pilot.beta.size == 3
        assert pilot.gamma.size == 3 * (4 + 3)
        assert pilot.converged
        np.testing.assert_array_equal(pilot.component_gamma(1), pilot.gamma[7:14])

    def test_cluster_order_invariance(self, example1, pilot):
        data, _ = example1
        reversed_data = ClusteredDataset(
            clusters=tuple(reversed(data.clusters)),
            linear_names=data.linear_names,
            additive_names=data.additive_names,
        )
        refit = fit_pilot(reversed_data, GeeModelSpec(), 4)
        np.testing.assert_allclose(refit.beta, pilot.beta, atol=1e-8)

    def test_too_many_knots(self):
        data = ClusteredDataset.from_arrays(
            [np.zeros(3), np.ones(3)],
            [np.eye(3)[:, :2], np.eye(3)[:, 1:]],
            [[0.1, 0.2, 0.3], [0.4, 0.6, 0.8]],
        )
        with pytest.raises(RankDeficientDesignError):
            fit_pilot(data, GeeModelSpec(), 3)


class TestStepTwo:
    """Test Step-II and oracle refits."""

    def test_oracle_recovers_representable_truth(self):
        data, beta = _linear_dataset()
        truth = TruthSpec(beta=beta, functions=(identity,)).centered(data)
        sigma = [np.eye(c.size) for c in data.clusters]
        fit = fit_oracle(data, GeeModelSpec(), truth, 0, 3, sigma=sigma)
        grid = np.linspace(0.0, 1.0, 51)
        np.testing.assert_allclose(
            evaluate_component(fit, grid).values, truth.theta(0, grid), atol=1e-8
        )
        assert fit.source == ORACLE

    def test_two_step_equals_oracle_at_pilot_beta(self):
        """With one component and beta_hat as the truth, both refits share their offsets."""
        data, _ = _linear_dataset(seed=2)
        rng = np.random.default_rng(9)
        noisy = ClusteredDataset.from_arrays(
            [c.y + 0.3 * rng.normal(size=c.size) for c in data.clusters],
            [c.x for c in data.clusters],
            [c.z for c in data.clusters],
        )
        spec = GeeModelSpec()
        pilot_fit = fit_pilot(noisy, spec, 3)
        sigma = [np.eye(c.size) for c in noisy.clusters]
        truth = TruthSpec(beta=pilot_fit.beta, functions=(identity,))
        two_step = fit_component(noisy, spec, pilot_fit, 0, 4, sigma=sigma)
        oracle = fit_oracle(noisy, spec, truth, 0, 4, sigma=sigma)
        np.testing.assert_allclose(two_step.gamma, oracle.gamma, atol=1e-10)
        assert two_step.source == TWO_STEP
        assert two_step.n_knots == 4

    def test_sandwich_is_attached(self, example1, pilot):
        data, _ = example1
        fit = fit_component(data, GeeModelSpec(), pilot, 0, 3)
        assert fit.covariance.shape == (6, 6)
        np.testing.assert_allclose(fit.covariance, fit.covariance.T)

    def test_projection_onto_pilot_basis(self, pilot):
        np.testing.assert_allclose(
            project_pilot(pilot, 2, pilot.bases[2]), pilot.component_gamma(2), atol=1e-8
        )

    def test_grid_subset_consistency(self, example1, pilot):
        data, _ = example1
        fit = fit_component(data, GeeModelSpec(), pilot, 1, 3)
        grid = np.linspace(0.0, 1.0, 11)
        full = evaluate_component(fit, grid).values
        np.testing.assert_allclose(evaluate_component(fit, grid[::2]).values, full[::2], atol=1e-14)

    def test_evaluation_outside_unit_interval(self, example1, pilot):
        data, _ = example1
        fit = fit_component(data, GeeModelSpec(), pilot, 0, 3)
        with pytest.raises(DomainError):
            evaluate_component(fit, [0.5, 1.5])

    def test_component_out_of_range(self, example1, pilot):
        data, _ = example1
        with pytest.raises(ParameterDomainError):
            fit_component(data, GeeModelSpec(), pilot, 3, 3)


class TestTruthSpec:
    """Test centering of generating functions."""

    def test_centered_truth(self, example1):
        data, truth = example1
        for l in range(3):
            assert abs(np.mean(truth.theta(l, data.stacked_z(l)))) < 1e-12

    def test_uncentered_truth(self):
        truth = TruthSpec(beta=np.zeros(1), functions=(identity,))
        np.testing.assert_array_equal(truth.theta(0, [0.25, 0.75]), [0.25, 0.75])
