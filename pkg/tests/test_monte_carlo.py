# this_file: tests/test_monte_carlo.py
"""
Monte Carlo acceptance runs for both simulation designs.

These take tens of minutes on a multi-core machine and are deselected by
default; run them with ``pytest -m slow``.
"""

import os

import numpy as np
import pytest

from spline_gee.simgen import EstimatorConfig, Example1Config, Example2Config, run_monte_carlo

pytestmark = pytest.mark.slow

NSIM = 200
THREADS = os.cpu_count() or 1


def _run(example, structure):
    estimator = EstimatorConfig(structure=structure)
    return run_monte_carlo(example, estimator, NSIM, threads=THREADS).validate()


@pytest.fixture(scope="module")
def example1_reports():
    example = Example1Config(n=250, m=20, seed=2024)
    return {structure: _run(example, structure) for structure in ("ind", "ex", "ar1")}


@pytest.fixture(scope="module")
def example2_report():
    example = Example2Config(n=100, m=20, seed=2025)
    return _run(example, "ex")


class TestGaussianDesign:
    """Coverage, RMSE and MISE patterns for the gaussian design."""

    def test_coverage(self, example1_reports):
        coverage = example1_reports["ex"].coverage
        assert np.all((coverage >= 0.91) & (coverage <= 0.98))

    def test_rmse(self, example1_reports):
        expected = np.array([0.0196, 0.0098, 0.0108])
        np.testing.assert_allclose(example1_reports["ex"].rmse, expected, rtol=0.3)

    def test_true_structure_has_smallest_rmse(self, example1_reports):
        assert np.all(example1_reports["ex"].rmse <= example1_reports["ind"].rmse)

    def test_mise_ordering(self, example1_reports):
        report = example1_reports["ex"]
        assert np.all(report.mise_pilot > report.mise_two_step)
        ratio = report.mise_two_step / report.mise_oracle
        assert np.all((ratio >= 0.9) & (ratio <= 1.4))
        assert np.all(report.mise_two_step < example1_reports["ind"].mise_two_step)

    @pytest.mark.parametrize("structure", ["ind", "ex", "ar1"])
    def test_efficiency_close_to_one(self, example1_reports, structure):
        median = np.median(example1_reports[structure].efficiency[:, 0])
        assert 0.9 <= median <= 1.2


class TestBinaryDesign:
    """Coverage and MISE for the logit design."""

    def test_coverage(self, example2_report):
        coverage = example2_report.coverage
        assert np.all((coverage >= 0.90) & (coverage <= 0.98))

    def test_mise(self, example2_report):
        mise = example2_report.mise_two_step[0]
        assert mise == pytest.approx(0.0148, rel=0.4)
        assert mise <= 1.15 * example2_report.mise_oracle[0]

    def test_pointwise_interval_coverage(self, example2_report):
        covers = np.mean([record.covers_two_step[0] for record in example2_report.records])
        assert 0.92 <= covers <= 0.98


class TestOracleNormality:
    """The oracle estimate at z = 0.5 is approximately normal across replications."""

    def test_anderson_darling_screen(self):
        example = Example2Config(n=200, seed=7)
        report = _run(example, "ex")
        statistic, critical = report.oracle_normality[0]
        assert statistic < critical
        covers = np.mean([record.covers_oracle[0] for record in report.records])
        assert 0.90 <= covers <= 0.99


class TestOracleProperty:
    """The two-step estimate approaches the oracle and the intervals shrink as n grows."""

    @pytest.fixture(scope="class")
    def reports(self):
        return [_run(Example2Config(n=n, seed=2026), "ex") for n in (100, 200, 400)]

    def test_gap_to_oracle_shrinks(self, reports):
        gaps = [np.mean([r.max_gap[0] for r in report.records]) for report in reports]
        assert gaps[0] > gaps[1] > gaps[2]

    def test_half_width_shrinks(self, reports):
        widths = [np.mean([r.half_width[0] for r in report.records]) for report in reports]
        assert widths[0] > widths[1] > widths[2]
