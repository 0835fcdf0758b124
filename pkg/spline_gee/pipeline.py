# this_file: spline_gee/pipeline.py
"""
End-to-end two-step fit shared by ``sgee fit`` and the Monte Carlo driver.

Step-I knots -> pilot under independence -> alpha_hat -> pilot refit ->
Sigma_hat -> Xi_hat for beta -> per component: BIC choice of N^S, Step-II fit
with Xi*_hat, optional linear-spline band fit, optional oracle fit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from .dataset import ClusteredDataset
from .exceptions import ParameterDomainError
from .gee_solver import SolverControl
from .inference import (
    BandSpec,
    ConfidenceCurve,
    SandwichBeta,
    estimate_sigma,
    estimate_working_alpha,
    pointwise_ci,
    sandwich_beta,
    simultaneous_band,
)
from .knot_selection import KnotPlan, fixed_plan, select_ns, step1_knots, step2_candidates
from .two_step import (
    ComponentFit,
    GeeModelSpec,
    PilotFit,
    TruthSpec,
    attach_covariance,
    fit_component,
    fit_oracle,
    fit_pilot,
)


@dataclass(frozen=True, eq=False)
class ComponentResult:
    component: int
    fit: ComponentFit
    plan: KnotPlan
    band_fit: Optional[ComponentFit] = None
    band_plan: Optional[KnotPlan] = None
    oracle: Optional[ComponentFit] = None

    def curves(
        self, z_grid: np.ndarray, band: BandSpec
    ) -> Tuple[ConfidenceCurve, Optional[ConfidenceCurve]]:
        """Pointwise interval from the main fit and, when fitted, the simultaneous band."""
        pointwise = pointwise_ci(self.fit, self.fit.sandwich, z_grid, band.level)
        if self.band_fit is None:
            return pointwise, None
        band_curve = simultaneous_band(self.band_fit, self.band_fit.sandwich, z_grid, band.level)
        return pointwise, band_curve


@dataclass(frozen=True, eq=False)
class TwoStepResult:
    spec: GeeModelSpec
    alpha: float
    alpha_estimated: bool
    pilot: PilotFit
    sandwich: SandwichBeta
    sigma: Tuple[np.ndarray, ...]
    components: Tuple[ComponentResult, ...]

    @property
    def beta(self) -> np.ndarray:
        return self.pilot.beta

    @property
    def standard_errors(self) -> np.ndarray:
        return self.sandwich.standard_errors


def resolve_alpha(
    data: ClusteredDataset, spec: GeeModelSpec, n_knots: int, ctrl: SolverControl
) -> Tuple[GeeModelSpec, bool]:
    """GeeModelSpec with the final working alpha, and whether alpha was estimated."""
    structure = spec.working_corr.structure
    if structure == "ind":
        return spec.with_alpha(0.0), False
    if spec.fix_alpha:
        logger.info("Using fixed working alpha {:.4f} for {}", spec.working_corr.alpha, structure)
        return spec, False
    independence = fit_pilot(data, spec.with_alpha(0.0), n_knots, ctrl)
    return spec.with_alpha(estimate_working_alpha(independence, structure)), True


def fit_two_step(
    data: ClusteredDataset,
    spec: GeeModelSpec,
    ctrl: SolverControl = SolverControl(),
    n_knots: Optional[int] = None,
    ns_knots: Optional[Sequence[Optional[int]]] = None,
    truth: Optional[TruthSpec] = None,
    band: Optional[BandSpec] = None,
    threads: int = 1,
) -> TwoStepResult:
    """
    Run the full two-step procedure.

    ``ns_knots`` pins N^S per component (``None`` entries are selected by
    BIC). A simultaneous ``band`` triggers an additional linear-spline Step-II
    fit per component, since the band is only defined for q = 1.
    """
    n_knots = step1_knots(data.n_total, spec.p) if n_knots is None else int(n_knots)
    spec, estimated = resolve_alpha(data, spec, n_knots, ctrl)
    pilot = fit_pilot(data, spec, n_knots, ctrl)
    sigma = tuple(estimate_sigma(pilot))
    sw_beta = sandwich_beta(pilot, sigma)

    pins: List[Optional[int]] = [None] * data.additive_dim
    if ns_knots is not None:
        pins = list(ns_knots)
    if len(pins) != data.additive_dim:
        raise ParameterDomainError(
            f"Got {len(pins)} Step-II knot counts for {data.additive_dim} components", ns_knots=pins
        )
    if truth is not None and not truth.shifts:
        truth = truth.centered(data)

    components = []
    for l in range(data.additive_dim):
        fit, plan = _fit_selected(data, spec, pilot, l, pins[l], sigma, ctrl, threads)
        band_fit = band_plan = None
        if band is not None and band.kind == "simultaneous":
            linear = replace(spec, degree=band.degree, smoothness=None)
            if linear.degree == spec.degree:
                band_fit, band_plan = fit, plan
            else:
                band_fit, band_plan = _fit_selected(
                    data, linear, pilot, l, None, sigma, ctrl, threads
                )
        oracle = None
        if truth is not None:
            oracle = fit_oracle(data, spec, truth, l, plan.selected, ctrl)
        components.append(
            ComponentResult(
                component=l,
                fit=fit,
                plan=plan,
                band_fit=band_fit,
                band_plan=band_plan,
                oracle=oracle,
            )
        )

    logger.info(
        "Two-step fit finished: N={}, alpha={:.4f}, {} components",
        n_knots,
        spec.working_corr.alpha,
        len(components),
    )
    return TwoStepResult(
        spec=spec,
        alpha=spec.working_corr.alpha,
        alpha_estimated=estimated,
        pilot=pilot,
        sandwich=sw_beta,
        sigma=sigma,
        components=tuple(components),
    )


def _fit_selected(
    data: ClusteredDataset,
    spec: GeeModelSpec,
    pilot: PilotFit,
    component: int,
    pinned: Optional[int],
    sigma: Sequence[np.ndarray],
    ctrl: SolverControl,
    threads: int,
) -> Tuple[ComponentFit, KnotPlan]:
    if pinned is not None:
        fit = fit_component(data, spec, pilot, component, int(pinned), ctrl, sigma=sigma)
        return fit, fixed_plan(spec, pilot, fit)
    candidates = step2_candidates(data.n_total, spec.p)
    plan = select_ns(data, spec, pilot, component, candidates, ctrl, threads)
    return attach_covariance(plan.best_fit, sigma), plan
