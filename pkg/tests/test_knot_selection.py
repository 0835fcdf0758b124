# this_file: tests/test_knot_selection.py
"""Tests for the knot-count rules and BIC selection."""

import math
from unittest.mock import patch

import numpy as np
import pytest

from spline_gee.exceptions import (
    ParameterDomainError,
    SelectionFailedError,
    SingularInformationError,
)
from spline_gee.knot_selection import (
    bic,
    bic_argmin,
    nearest_integer,
    select_ns,
    step1_knots,
    step2_candidates,
)
from spline_gee.simgen import Example1Config, make_rng
from spline_gee.two_step import (
    GeeModelSpec,
    evaluate_component,
    fit_component_unattached,
    fit_pilot,
)


@pytest.fixture(scope="module")
def setting():
    data, _ = Example1Config(n=40, m=5, seed=12).generate()
    spec = GeeModelSpec()
    return data, spec, fit_pilot(data, spec, 4)


class TestKnotRules:
    """Test the Step-I and Step-II knot counts."""

    def test_nearest_integer(self):
        assert nearest_integer(2.5) == 3
        assert nearest_integer(-2.5) == -3
        assert nearest_integer(3.49) == 3
        assert nearest_integer(0.0) == 0

    def test_step1(self):
        assert step1_knots(5000, 4) == 6
        assert step1_knots(2, 1) == 3

    def test_step1_non_decreasing(self):
        counts = [step1_knots(n, 4) for n in range(2, 5000, 37)]
        assert counts == sorted(counts)

    def test_step2(self):
        assert step2_candidates(5000, 4) == range(3, 17)
        assert step2_candidates(100, 4) == range(2, 11)

    def test_step2_linear_splines(self):
        """q=1 uses p=2 and a wider candidate range."""
        candidates = step2_candidates(5000, 2)
        assert candidates.start >= 1
        assert len(candidates) > len(step2_candidates(5000, 4))

    def test_invalid_arguments(self):
        with pytest.raises(ParameterDomainError):
            step1_knots(1, 4)
        with pytest.raises(ParameterDomainError):
            step2_candidates(100, 0)


class TestBic:
    """Test the criterion itself."""

    def test_value(self):
        expected = math.log(2.0 * 12.0 / 50) + 7 * math.log(50) / 50
        assert bic(12.0, 7, 50) == pytest.approx(expected)

    def test_penalty_grows_with_dimension(self):
        assert bic(12.0, 8, 50) > bic(12.0, 7, 50)

    def test_perfect_fit(self):
        assert bic(0.0, 5, 50) == -math.inf

    def test_argmin_skips_failures_and_prefers_fewer_knots(self):
        trace = [(2, 1.5), (3, math.nan), (4, 0.25), (5, 0.25), (6, 0.9)]
        assert bic_argmin(trace) == 4

    def test_argmin_without_successes(self):
        with pytest.raises(SelectionFailedError):
            bic_argmin([(2, math.nan)])


class TestSelectNs:
    """Test the BIC scan over candidate knot counts."""

    def test_selects_trace_minimizer(self, setting):
        data, spec, pilot = setting
        plan = select_ns(data, spec, pilot, 0, range(2, 7))
        assert plan.candidates == (2, 3, 4, 5, 6)
        assert [ns for ns, _ in plan.bic_trace] == [2, 3, 4, 5, 6]
        assert plan.selected == bic_argmin(plan.bic_trace)
        assert plan.best_fit.n_knots == plan.selected
        assert plan.p == 4
        assert plan.n_step1 == 4

    def test_candidate_order_does_not_matter(self, setting):
        data, spec, pilot = setting
        forward = select_ns(data, spec, pilot, 1, [2, 3, 4, 5])
        backward = select_ns(data, spec, pilot, 1, [5, 4, 3, 2, 3])
        assert forward.selected == backward.selected
        assert forward.bic_trace == backward.bic_trace

    def test_threaded_scan_matches_serial(self, setting):
        data, spec, pilot = setting
        serial = select_ns(data, spec, pilot, 2, range(2, 6))
        threaded = select_ns(data, spec, pilot, 2, range(2, 6), threads=3)
        assert serial.selected == threaded.selected
        np.testing.assert_allclose(
            [v for _, v in serial.bic_trace], [v for _, v in threaded.bic_trace], rtol=1e-12
        )

    def test_single_candidate(self, setting):
        data, spec, pilot = setting
        plan = select_ns(data, spec, pilot, 0, [3])
        assert plan.selected == 3
        assert len(plan.bic_trace) == 1

    def test_all_candidates_fail(self, setting):
        data, spec, pilot = setting
        with patch(
            "spline_gee.knot_selection.fit_component_unattached",
            side_effect=SingularInformationError("singular"),
        ):
            with pytest.raises(SelectionFailedError) as info:
                select_ns(data, spec, pilot, 0, [2, 3])
        assert set(info.value.context["failures"]) == {"2", "3"}

    def test_plan_serializes(self, setting):
        data, spec, pilot = setting
        payload = select_ns(data, spec, pilot, 0, [2, 3]).to_dict()
        assert payload["candidates"] == [2, 3]
        assert payload["failures"] == {}
        assert "best_fit" not in payload

    def test_empty_candidates(self, setting):
        data, spec, pilot = setting
        with pytest.raises(ParameterDomainError):
            select_ns(data, spec, pilot, 0, [])


@pytest.mark.slow
class TestSelectionAccuracy:
    """The BIC choice integrates almost as well as the best candidate in hindsight."""

    def test_bic_mise_near_best_candidate(self):
        example = Example1Config(n=250, m=20, seed=31)
        spec = GeeModelSpec()
        selected_ise, candidate_ise = [], {}
        for replication in range(10):
            data, truth = example.generate(make_rng(example.seed, replication))
            pilot = fit_pilot(data, spec, step1_knots(data.n_total, spec.p))
            z = data.stacked_z(0)
            target = truth.theta(0, z)
            plan = select_ns(data, spec, pilot, 0, step2_candidates(data.n_total, spec.p))
            assert not plan.failures
            ise = {}
            for ns in plan.candidates:
                fit = fit_component_unattached(data, spec, pilot, 0, ns)
                ise[ns] = float(np.mean((evaluate_component(fit, z).values - target) ** 2))
                candidate_ise.setdefault(ns, []).append(ise[ns])
            selected_ise.append(ise[plan.selected])

        mise_bic = float(np.mean(selected_ise))
        mise_best = min(float(np.mean(values)) for values in candidate_ise.values())
        assert mise_bic <= 1.5 * mise_best
