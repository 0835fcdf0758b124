# this_file: spline_gee/two_step.py
"""
Two-step spline GEE estimation of a generalized additive partially linear model.

Step I fits beta and every additive component jointly on an undersmoothed
centered spline basis (the pilot fit). Step II refits one component at a time
on its own basis, holding X^T beta_hat and the other pilot components fixed in
the offset. The oracle fit is Step II with the true beta and true other
components in the offset and serves as the benchmark in simulations.

Components are indexed from 0 in the Python API.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Callable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from .dataset import ClusteredDataset
from .exceptions import ParameterDomainError, RankDeficientDesignError, SingularInformationError
from .gee_solver import GeeProblem, GeeSolution, SolverControl, solve
from .marginal_model import LinkFamily, WorkingCorrelation
from .spline_basis import CenteredSplineBasis, build_knots, fit_centering

if TYPE_CHECKING:
    from .inference import SandwichTheta

TWO_STEP = "two-step"
ORACLE = "oracle"


@dataclass(frozen=True)
class GeeModelSpec:
    """Link family, working correlation and spline layout of a fit."""

    link: LinkFamily = LinkFamily()
    working_corr: WorkingCorrelation = WorkingCorrelation()
    degree: int = 3
    smoothness: Optional[int] = None
    fix_alpha: bool = False
    weighted_projection: bool = True

    def __post_init__(self):
        if self.degree < 1:
            raise ParameterDomainError(
                f"Spline degree must be >= 1, got {self.degree}", degree=self.degree
            )
        if self.smoothness is not None and self.smoothness < 1:
            raise ParameterDomainError(
                "Smoothness order p must be >= 1", smoothness=self.smoothness
            )

    @property
    def p(self) -> int:
        return self.smoothness if self.smoothness is not None else self.degree + 1

    def with_alpha(self, alpha: float) -> "GeeModelSpec":
        return replace(self, working_corr=replace(self.working_corr, alpha=float(alpha)))


@dataclass(frozen=True, eq=False)
class PilotFit:
    beta: np.ndarray
    gamma: np.ndarray
    bases: Tuple[CenteredSplineBasis, ...]
    n_knots: int
    solution: GeeSolution
    problem: GeeProblem
    spec: GeeModelSpec

    @property
    def converged(self) -> bool:
        return self.solution.converged

    @property
    def model_hessian(self) -> np.ndarray:
        return self.solution.model_hessian

    @property
    def coefficients(self) -> np.ndarray:
        return self.solution.coefficients

    def component_gamma(self, component: int) -> np.ndarray:
        width = self.bases[component].dimension
        return self.gamma[component * width : (component + 1) * width]

    def theta(self, component: int, z: np.ndarray) -> np.ndarray:
        """Pilot estimate of additive component ``component`` at z."""
        return self.bases[component].evaluate(z) @ self.component_gamma(component)


@dataclass(frozen=True, eq=False)
class ComponentFit:
    component: int
    gamma: np.ndarray
    basis: CenteredSplineBasis
    source: str
    solution: GeeSolution
    problem: GeeProblem
    sandwich: Optional["SandwichTheta"] = None

    @property
    def covariance(self) -> Optional[np.ndarray]:
        return None if self.sandwich is None else self.sandwich.xi_star

    @property
    def n_knots(self) -> int:
        return self.basis.interior_count

    @property
    def converged(self) -> bool:
        return self.solution.converged

    @property
    def coefficients(self) -> np.ndarray:
        return self.gamma


@dataclass(frozen=True, eq=False)
class TruthSpec:
    """
    Generating beta and additive functions of a simulated dataset.

    ``shifts`` are subtracted from each function so that the functions used in
    comparisons have zero empirical mean over the generated covariates.
    """

    beta: np.ndarray
    functions: Tuple[Callable[[np.ndarray], np.ndarray], ...]
    shifts: Tuple[float, ...] = ()

    def centered(self, data: ClusteredDataset) -> "TruthSpec":
        shifts = tuple(float(np.mean(f(data.stacked_z(l)))) for l, f in enumerate(self.functions))
        return replace(self, shifts=shifts)

    def theta(self, component: int, z: np.ndarray) -> np.ndarray:
        shift = self.shifts[component] if self.shifts else 0.0
        return self.functions[component](np.asarray(z, dtype=float)) - shift


@dataclass(frozen=True, eq=False)
class ComponentCurve:
    z: np.ndarray
    values: np.ndarray
    basis_rows: np.ndarray


def _additive_design(bases: Sequence[CenteredSplineBasis], z: np.ndarray) -> np.ndarray:
    if not bases:
        return np.zeros((z.shape[0], 0))
    return np.hstack([basis.evaluate(z[:, l]) for l, basis in enumerate(bases)])


def fit_pilot(
    data: ClusteredDataset,
    spec: GeeModelSpec,
    n_knots: int,
    ctrl: SolverControl = SolverControl(),
) -> PilotFit:
    """Step I: joint spline GEE fit of beta and all additive components."""
    knots = build_knots(n_knots, spec.degree)
    bases = tuple(fit_centering(knots, data.stacked_z(l)) for l in range(data.additive_dim))
    designs = [np.hstack([c.x, _additive_design(bases, c.z)]) for c in data.clusters]
    n_coef = designs[0].shape[1]
    if n_coef > data.n_total:
        raise RankDeficientDesignError(
            f"{n_coef} coefficients for {data.n_total} observations; use fewer interior knots",
            n_knots=n_knots,
            n_coefficients=n_coef,
        )
    independence = GeeProblem.from_arrays(
        designs,
        [np.zeros(c.size) for c in data.clusters],
        [c.y for c in data.clusters],
        spec.link,
        WorkingCorrelation("ind"),
    )
    problem = GeeProblem(independence.clusters, spec.link, spec.working_corr)
    try:
        solution = solve(independence, np.zeros(n_coef), ctrl)
        if spec.working_corr.structure != "ind" and spec.working_corr.alpha != 0.0:
            solution = solve(problem, solution.coefficients, ctrl)
    except SingularInformationError as exc:
        raise RankDeficientDesignError(
            f"Pilot design with N={n_knots} interior knots is rank deficient; "
            "use fewer interior knots",
            n_knots=n_knots,
            n_coefficients=n_coef,
        ) from exc

    coef = solution.coefficients
    d1 = data.linear_dim
    logger.info(
        "Pilot fit: N={}, {} coefficients, {} iterations, converged={}",
        n_knots,
        n_coef,
        solution.iterations,
        solution.converged,
    )
    return PilotFit(
        beta=coef[:d1].copy(),
        gamma=coef[d1:].copy(),
        bases=bases,
        n_knots=int(n_knots),
        solution=solution,
        problem=problem,
        spec=spec,
    )


def _check_component(data: ClusteredDataset, component: int) -> None:
    if not 0 <= component < data.additive_dim:
        raise ParameterDomainError(
            f"Component index {component} outside 0..{data.additive_dim - 1}", component=component
        )


def _step2_fit(
    data: ClusteredDataset,
    spec: GeeModelSpec,
    component: int,
    ns_knots: int,
    offsets: List[np.ndarray],
    source: str,
    ctrl: SolverControl,
    initial: Optional[Callable[[CenteredSplineBasis], np.ndarray]] = None,
) -> ComponentFit:
    basis = fit_centering(build_knots(ns_knots, spec.degree), data.stacked_z(component))
    problem = GeeProblem.from_arrays(
        [basis.evaluate(c.z[:, component]) for c in data.clusters],
        offsets,
        [c.y for c in data.clusters],
        spec.link,
        spec.working_corr,
    )
    init = initial(basis) if initial is not None else np.zeros(basis.dimension)
    solution = solve(problem, init, ctrl)
    logger.debug(
        "{} fit of component {} with N^S={}: {} iterations, converged={}",
        source,
        component,
        ns_knots,
        solution.iterations,
        solution.converged,
    )
    return ComponentFit(
        component=component,
        gamma=solution.coefficients.copy(),
        basis=basis,
        source=source,
        solution=solution,
        problem=problem,
    )


def pilot_offsets(data: ClusteredDataset, pilot: PilotFit, component: int) -> List[np.ndarray]:
    """X beta_hat plus the pilot estimates of every other component, per cluster."""
    offsets = []
    for cluster in data.clusters:
        offset = cluster.x @ pilot.beta
        for other in range(data.additive_dim):
            if other != component:
                offset = offset + pilot.theta(other, cluster.z[:, other])
        offsets.append(offset)
    return offsets


def oracle_offsets(data: ClusteredDataset, truth: TruthSpec, component: int) -> List[np.ndarray]:
    offsets = []
    for cluster in data.clusters:
        offset = cluster.x @ np.asarray(truth.beta, dtype=float)
        for other in range(data.additive_dim):
            if other != component:
                offset = offset + truth.theta(other, cluster.z[:, other])
        offsets.append(offset)
    return offsets


def project_pilot(
    pilot: PilotFit, component: int, basis: CenteredSplineBasis, grid_size: int = 201
) -> np.ndarray:
    """Least-squares coefficients of the pilot component on a Step-II basis over a dense grid."""
    grid = np.linspace(0.0, 1.0, grid_size)
    coef, *_ = np.linalg.lstsq(basis.evaluate(grid), pilot.theta(component, grid), rcond=None)
    return coef


def fit_component_unattached(
    data: ClusteredDataset,
    spec: GeeModelSpec,
    pilot: PilotFit,
    component: int,
    ns_knots: int,
    ctrl: SolverControl = SolverControl(),
) -> ComponentFit:
    """Step II fit without the sandwich covariance, used when scanning knot counts."""
    _check_component(data, component)
    if not pilot.converged:
        raise ParameterDomainError("Step II requires a converged pilot fit", component=component)
    return _step2_fit(
        data,
        spec,
        component,
        ns_knots,
        pilot_offsets(data, pilot, component),
        TWO_STEP,
        ctrl,
        initial=lambda basis: project_pilot(pilot, component, basis),
    )


def attach_covariance(fit: ComponentFit, sigma: Sequence[np.ndarray]) -> ComponentFit:
    from .inference import sandwich_theta

    return replace(fit, sandwich=sandwich_theta(fit, sigma))


def fit_component(
    data: ClusteredDataset,
    spec: GeeModelSpec,
    pilot: PilotFit,
    component: int,
    ns_knots: int,
    ctrl: SolverControl = SolverControl(),
    sigma: Optional[Sequence[np.ndarray]] = None,
) -> ComponentFit:
    """Step II two-step estimator of one component, with its sandwich covariance attached."""
    from .inference import estimate_sigma

    fit = fit_component_unattached(data, spec, pilot, component, ns_knots, ctrl)
    return attach_covariance(fit, sigma if sigma is not None else estimate_sigma(pilot))


def fit_oracle(
    data: ClusteredDataset,
    spec: GeeModelSpec,
    truth: TruthSpec,
    component: int,
    ns_knots: int,
    ctrl: SolverControl = SolverControl(),
    sigma: Optional[Sequence[np.ndarray]] = None,
) -> ComponentFit:
    """Step II fit with the true beta and true other components in the offset."""
    from .inference import estimate_sigma

    _check_component(data, component)
    fit = _step2_fit(
        data, spec, component, ns_knots, oracle_offsets(data, truth, component), ORACLE, ctrl
    )
    return attach_covariance(fit, sigma if sigma is not None else estimate_sigma(fit))


def evaluate_component(fit: ComponentFit, z_grid: np.ndarray) -> ComponentCurve:
    z = np.atleast_1d(np.asarray(z_grid, dtype=float))
    rows = fit.basis.evaluate(z)
    return ComponentCurve(z=z, values=rows @ fit.gamma, basis_rows=rows)
