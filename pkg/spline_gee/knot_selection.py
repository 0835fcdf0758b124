# this_file: spline_gee/knot_selection.py
"""
Knot-count rules.

Step I undersmooths with N = [2 n_T^{1/(2p)}]. Step II scans
N^S in [[a_n], [5 a_n]], a_n = (n_T log n_T)^{1/(2p+1)}, and keeps the BIC
minimizer. [a] is the nearest integer, halves rounded away from zero.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
from loguru import logger

from .dataset import ClusteredDataset
from .exceptions import ParameterDomainError, SelectionFailedError, SplineGeeError
from .gee_solver import SolverControl, weighted_residual_form
from .two_step import ComponentFit, GeeModelSpec, PilotFit, fit_component_unattached


@dataclass(frozen=True, eq=False)
class KnotPlan:
    p: int
    n_step1: int
    candidates: Tuple[int, ...]
    selected: int
    bic_trace: Tuple[Tuple[int, float], ...]
    failures: Dict[int, str] = field(default_factory=dict)
    best_fit: Optional[ComponentFit] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "n_step1": self.n_step1,
            "candidates": list(self.candidates),
            "selected": self.selected,
            "bic_trace": [[ns, _json_number(v)] for ns, v in self.bic_trace],
            "failures": {str(k): v for k, v in self.failures.items()},
        }


def _json_number(value: float):
    if math.isnan(value):
        return None
    if math.isinf(value):
        return "-inf" if value < 0 else "inf"
    return value


def nearest_integer(value: float) -> int:
    """Round half away from zero."""
    return int(math.copysign(math.floor(abs(value) + 0.5), value))


def step1_knots(n_total: int, p: int) -> int:
    if n_total < 2 or p < 1:
        raise ParameterDomainError(
            "step1_knots needs n_total >= 2 and p >= 1", n_total=n_total, p=p
        )
    return max(1, nearest_integer(2.0 * n_total ** (1.0 / (2.0 * p))))


def step2_candidates(n_total: int, p: int) -> range:
    if n_total < 2 or p < 1:
        raise ParameterDomainError(
            "step2_candidates needs n_total >= 2 and p >= 1", n_total=n_total, p=p
        )
    a_n = (n_total * math.log(n_total)) ** (1.0 / (2.0 * p + 1.0))
    lower = max(1, nearest_integer(a_n))
    upper = max(lower, nearest_integer(5.0 * a_n))
    return range(lower, upper + 1)


def bic(q_star: float, dimension: int, n_clusters: int) -> float:
    """log(2 Q* / n) + J^S log(n) / n; -inf when the fit is perfect."""
    if q_star <= 0.0:
        return -math.inf
    return math.log(2.0 * q_star / n_clusters) + dimension * math.log(n_clusters) / n_clusters


def component_bic(fit: ComponentFit, n_clusters: int) -> float:
    return bic(weighted_residual_form(fit.problem, fit.gamma), fit.basis.dimension, n_clusters)


def select_ns(
    data: ClusteredDataset,
    spec: GeeModelSpec,
    pilot: PilotFit,
    component: int,
    candidates: Iterable[int],
    ctrl: SolverControl = SolverControl(),
    threads: int = 1,
) -> KnotPlan:
    """Fit every candidate N^S and keep the BIC minimizer; ties go to the smaller N^S."""
    ordered = tuple(sorted(set(int(c) for c in candidates)))
    if not ordered:
        raise ParameterDomainError("No knot candidates to select from", component=component)

    def attempt(ns: int):
        try:
            fit = fit_component_unattached(data, spec, pilot, component, ns, ctrl)
        except SplineGeeError as exc:
            return ns, None, f"{exc.code}: {exc}"
        if not fit.converged:
            return ns, None, "solver did not converge"
        return ns, fit, None

    if threads > 1 and len(ordered) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(attempt, ordered))
    else:
        outcomes = [attempt(ns) for ns in ordered]

    trace = []
    failures = {}
    best: Optional[Tuple[float, int, ComponentFit]] = None
    for ns, fit, error in outcomes:
        if fit is None:
            failures[ns] = error
            trace.append((ns, math.nan))
            continue
        value = component_bic(fit, data.n_clusters)
        trace.append((ns, value))
        if best is None or value < best[0]:
            best = (value, ns, fit)

    if best is None:
        raise SelectionFailedError(
            f"All {len(ordered)} knot candidates failed for component {component}",
            component=component,
            failures={str(k): v for k, v in failures.items()},
        )
    logger.info("Component {}: selected N^S={} (BIC {:.4f})", component, best[1], best[0])
    return KnotPlan(
        p=spec.p,
        n_step1=pilot.n_knots,
        candidates=ordered,
        selected=best[1],
        bic_trace=tuple(trace),
        failures=failures,
        best_fit=best[2],
    )


def fixed_plan(spec: GeeModelSpec, pilot: PilotFit, fit: ComponentFit) -> KnotPlan:
    """KnotPlan for a user-supplied N^S (no scan)."""
    value = component_bic(fit, len(fit.problem.clusters))
    return KnotPlan(
        p=spec.p,
        n_step1=pilot.n_knots,
        candidates=(fit.n_knots,),
        selected=fit.n_knots,
        bic_trace=((fit.n_knots, value),),
        best_fit=fit,
    )


def bic_argmin(trace: Iterable[Tuple[int, float]]) -> int:
    """Re-scan a BIC trace: failed candidates skipped, ties to the smaller N^S."""
    finite = [(v, ns) for ns, v in trace if not np.isnan(v)]
    if not finite:
        raise SelectionFailedError("BIC trace has no successful candidates")
    return min(finite)[1]
