# this_file: spline_gee/inference.py
"""
Robust inference for two-step spline GEE fits.

Sandwich covariances Psi^{-1} Phi Psi^{-1} for beta_hat (with the linear design
projected off the centered spline space) and for Step-II spline coefficients,
moment estimators of the working correlation parameter and of the true
within-cluster correlation, pointwise intervals and simultaneous bands.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
from loguru import logger
from scipy.stats import norm

from .dataset import ClusteredDataset
from .exceptions import (
    BandDegreeError,
    DegenerateVarianceError,
    NotIdentifiableError,
    ParameterDomainError,
    SingularInformationError,
)
from .gee_solver import GeeCluster, GeeProblem, SolverControl, cluster_terms, solve
from .marginal_model import WorkingCorrelation
from .two_step import ComponentFit, PilotFit, evaluate_component

Fit = Union[PilotFit, ComponentFit]

_ALPHA_MARGIN = 1e-6


@dataclass(frozen=True, eq=False)
class SandwichBeta:
    xi_hat: np.ndarray
    bread: np.ndarray
    meat: np.ndarray
    projected_x: Tuple[np.ndarray, ...]

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.xi_hat), 0.0, None))

    @property
    def naive(self) -> np.ndarray:
        """Model-based covariance Psi^{-1}, valid when the working covariance is true."""
        return _symmetric_inverse(self.bread)


@dataclass(frozen=True, eq=False)
class SandwichTheta:
    component: int
    xi_star: np.ndarray
    bread: np.ndarray
    meat: np.ndarray

    @property
    def naive(self) -> np.ndarray:
        return _symmetric_inverse(self.bread)


@dataclass(frozen=True)
class BandSpec:
    level: float = 0.95
    kind: str = "pointwise"
    degree: int = 1

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise ParameterDomainError(f"Confidence level must lie in (0, 1), got {self.level}")
        if self.kind not in ("pointwise", "simultaneous"):
            raise ParameterDomainError(f"Unknown band kind '{self.kind}'", kind=self.kind)


@dataclass(frozen=True, eq=False)
class ConfidenceCurve:
    kind: str
    level: float
    multiplier: float
    z: np.ndarray
    estimate: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


@dataclass(frozen=True, eq=False)
class LinearityTest:
    component: int
    slope: float
    center: float
    line: np.ndarray
    escapes: bool
    max_excess: float


def _symmetric_inverse(matrix: np.ndarray) -> np.ndarray:
    try:
        factor = scipy.linalg.cho_factor(matrix, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularInformationError(
            "Sandwich bread matrix is singular", dimension=int(matrix.shape[0])
        ) from exc
    inverse = scipy.linalg.cho_solve(factor, np.eye(matrix.shape[0]))
    return 0.5 * (inverse + inverse.T)


def pearson_residuals(fit: Fit) -> List[np.ndarray]:
    """(Y_i - mu_i) / sqrt(diag A_i) per cluster at the fitted coefficients."""
    terms = cluster_terms(fit.problem, fit.coefficients)
    return [resid / np.sqrt(cov.a_diag) for _, resid, _, cov in terms]


def estimate_alpha(
    residuals: Sequence[np.ndarray],
    structure: str,
    dispersion: Optional[float] = None,
) -> float:
    """
    Moment estimator of the working correlation parameter.

    EX averages all within-cluster cross products, AR(1) the lag-one products;
    both are divided by the Pearson dispersion and clipped into the open
    interval where R(alpha) stays positive definite.
    """
    if structure == "ind":
        return 0.0
    res = [np.asarray(r, dtype=float).ravel() for r in residuals]
    sizes = np.array([r.size for r in res])
    if sizes.size == 0 or sizes.max() < 2:
        raise NotIdentifiableError(
            "Every cluster has a single observation; the correlation parameter is not identifiable",
            structure=structure,
        )
    phi = dispersion if dispersion is not None else sum(float(r @ r) for r in res) / sizes.sum()
    if not phi > 0.0:
        raise DegenerateVarianceError("Residual dispersion is zero", structure=structure)
    if structure == "ex":
        numerator = sum(0.5 * (r.sum() ** 2 - r @ r) for r in res)
        pairs = float(np.sum(sizes * (sizes - 1) / 2.0))
    else:
        numerator = sum(float(r[:-1] @ r[1:]) for r in res)
        pairs = float(np.sum(sizes - 1))
    alpha = float(numerator / (phi * pairs))

    low, high = WorkingCorrelation(structure).admissible_interval(int(sizes.max()))
    clipped = float(np.clip(alpha, low + _ALPHA_MARGIN, high - _ALPHA_MARGIN))
    if clipped != alpha:
        logger.warning("Estimated {} alpha {:.4f} clipped to {:.4f}", structure, alpha, clipped)
    return clipped


def estimate_working_alpha(fit: Fit, structure: str) -> float:
    alpha = estimate_alpha(pearson_residuals(fit), structure)
    logger.info("Estimated working correlation alpha for {}: {:.4f}", structure, alpha)
    return alpha


def estimate_correlation(fit: Fit) -> Tuple[np.ndarray, float]:
    """
    Averaged outer product of standardized residuals for equal cluster sizes.

    Returns R_hat rescaled to unit diagonal and the Pearson scale (mean of the
    raw diagonal).
    """
    residuals = pearson_residuals(fit)
    sizes = {r.size for r in residuals}
    if len(sizes) != 1:
        raise NotIdentifiableError("R_hat needs equal cluster sizes", sizes=sorted(sizes))
    stacked = np.stack(residuals)
    raw = stacked.T @ stacked / stacked.shape[0]
    diag = np.diag(raw).copy()
    if not np.all(diag > 0.0):
        raise DegenerateVarianceError(
            "Residuals are identically zero at some position; R_hat is undefined"
        )
    root = np.sqrt(diag)
    corr = raw / np.outer(root, root)
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    return corr, float(diag.mean())


def estimate_sigma(fit: Fit) -> List[np.ndarray]:
    """Per-cluster estimates of the true response covariance."""
    terms = list(cluster_terms(fit.problem, fit.coefficients))
    if len({cov.size for _, _, _, cov in terms}) == 1:
        corr, scale = estimate_correlation(fit)
        sigma = []
        for _, _, _, cov in terms:
            root = np.sqrt(cov.a_diag)
            sigma.append(scale * root[:, None] * corr * root[None, :])
        return sigma
    logger.warning("Unequal cluster sizes: using per-cluster residual outer products for Sigma_hat")
    sigma = [np.outer(resid, resid) for _, resid, _, _ in terms]
    if not any(np.any(s) for s in sigma):
        raise DegenerateVarianceError("Residuals are identically zero; Sigma_hat is undefined")
    return sigma


def project_out(
    xs: Sequence[np.ndarray],
    bs: Sequence[np.ndarray],
    weights: Optional[Sequence[np.ndarray]] = None,
) -> List[np.ndarray]:
    """X_i - B_i Pi, with Pi the (weighted) least-squares projection of X onto span(B)."""
    if bs[0].shape[1] == 0:
        return [np.array(x, dtype=float) for x in xs]
    if weights is None:
        weights = [None] * len(xs)
    gram = 0.0
    cross = 0.0
    for x, b, w in zip(xs, bs, weights):
        wb = b if w is None else w @ b
        gram = gram + b.T @ wb
        cross = cross + wb.T @ x
    gram = 0.5 * (gram + gram.T)
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularInformationError("Spline Gram matrix is singular in the projection") from exc
    coef = scipy.linalg.cho_solve(factor, cross)
    return [x - b @ coef for x, b in zip(xs, bs)]


def _bread_and_meat(
    designs: Sequence[np.ndarray], terms: Sequence, sigma: Sequence[np.ndarray]
) -> Tuple[np.ndarray, np.ndarray]:
    if len(sigma) != len(designs):
        raise ParameterDomainError(
            f"Got {len(sigma)} covariance estimates for {len(designs)} clusters"
        )
    p = designs[0].shape[1]
    bread = np.zeros((p, p))
    meat = np.zeros((p, p))
    for design, (_, _, delta, cov), sig in zip(designs, terms, sigma):
        dd = delta[:, None] * design
        vinv_dd = cov.solve(dd)
        bread += dd.T @ vinv_dd
        meat += vinv_dd.T @ sig @ vinv_dd
    return 0.5 * (bread + bread.T), 0.5 * (meat + meat.T)


def _sandwich(bread: np.ndarray, meat: np.ndarray) -> np.ndarray:
    inverse = _symmetric_inverse(bread)
    xi = inverse @ meat @ inverse
    return 0.5 * (xi + xi.T)


def sandwich_beta(
    pilot: PilotFit, sigma: Sequence[np.ndarray], weighted: Optional[bool] = None
) -> SandwichBeta:
    """Xi_hat = Psi_hat^{-1} Phi_hat Psi_hat^{-1} for the pilot beta_hat."""
    if weighted is None:
        weighted = pilot.spec.weighted_projection
    d1 = pilot.beta.size
    problem = pilot.problem
    terms = list(cluster_terms(problem, pilot.coefficients))
    xs = [c.design[:, :d1] for c in problem.clusters]
    bs = [c.design[:, d1:] for c in problem.clusters]
    weights = None
    if weighted:
        weights = [delta[:, None] * cov.solve(np.diag(delta)) for _, _, delta, cov in terms]
    projected = project_out(xs, bs, weights)
    bread, meat = _bread_and_meat(projected, terms, sigma)
    return SandwichBeta(
        xi_hat=_sandwich(bread, meat),
        bread=bread,
        meat=meat,
        projected_x=tuple(projected),
    )


def sandwich_theta(fit: ComponentFit, sigma: Sequence[np.ndarray]) -> SandwichTheta:
    """Xi*_hat for the Step-II spline coefficients of one component."""
    problem = fit.problem
    terms = list(cluster_terms(problem, fit.gamma))
    bread, meat = _bread_and_meat([c.design for c in problem.clusters], terms, sigma)
    return SandwichTheta(
        component=fit.component, xi_star=_sandwich(bread, meat), bread=bread, meat=meat
    )


def working_covariances(fit: Fit) -> List[np.ndarray]:
    """Dense V_i at the fitted coefficients, in cluster order."""
    return [cov.matrix() for _, _, _, cov in cluster_terms(fit.problem, fit.coefficients)]


def _tail_probability(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ParameterDomainError(f"Confidence level must lie in (0, 1), got {level}", level=level)
    alpha = 1.0 - level
    if alpha < 1e-12:
        raise ParameterDomainError(
            "Confidence level too close to 1; the interval is unbounded", level=level
        )
    return alpha


def normal_multiplier(level: float) -> float:
    """z_{alpha/2} for a two-sided interval at ``level``."""
    return float(norm.ppf(1.0 - _tail_probability(level) / 2.0))


def band_multiplier(ns_knots: int, alpha: float) -> float:
    """{2 log(N^S + 1) - 2 log alpha}^{1/2}."""
    if not 0.0 < alpha < 1.0:
        raise ParameterDomainError(f"Band alpha must lie in (0, 1), got {alpha}", alpha=alpha)
    return float(np.sqrt(2.0 * np.log(ns_knots + 1.0) - 2.0 * np.log(alpha)))


def _curve(
    kind: str, level: float, multiplier: float, fit: ComponentFit, sw: SandwichTheta, z_grid
) -> ConfidenceCurve:
    curve = evaluate_component(fit, z_grid)
    rows = curve.basis_rows
    variance = np.einsum("ij,jk,ik->i", rows, sw.xi_star, rows)
    sd = np.sqrt(np.clip(variance, 0.0, None))
    return ConfidenceCurve(
        kind=kind,
        level=level,
        multiplier=multiplier,
        z=curve.z,
        estimate=curve.values,
        sd=sd,
        lower=curve.values - multiplier * sd,
        upper=curve.values + multiplier * sd,
    )


def pointwise_ci(
    fit: ComponentFit, sw: SandwichTheta, z_grid: np.ndarray, level: float = 0.95
) -> ConfidenceCurve:
    return _curve("pointwise", level, normal_multiplier(level), fit, sw, z_grid)


def simultaneous_band(
    fit: ComponentFit,
    sw: SandwichTheta,
    z_grid: np.ndarray,
    level: float = 0.95,
    ns_knots: Optional[int] = None,
) -> ConfidenceCurve:
    """Conservative simultaneous band; defined for linear (q=1) Step-II splines only."""
    if fit.basis.degree != 1:
        raise BandDegreeError(
            f"Simultaneous bands require linear splines (q=1), fit has q={fit.basis.degree}",
            degree=fit.basis.degree,
        )
    alpha = _tail_probability(level)
    ns = fit.n_knots if ns_knots is None else int(ns_knots)
    return _curve("simultaneous", level, band_multiplier(ns, alpha), fit, sw, z_grid)


def confidence_curve(
    fit: ComponentFit, sw: SandwichTheta, z_grid: np.ndarray, band: BandSpec
) -> ConfidenceCurve:
    if band.kind == "simultaneous":
        return simultaneous_band(fit, sw, z_grid, band.level)
    return pointwise_ci(fit, sw, z_grid, band.level)


def linearity_test(
    data: ClusteredDataset,
    fit: ComponentFit,
    band: ConfidenceCurve,
    ctrl: SolverControl = SolverControl(),
) -> LinearityTest:
    """
    Fit theta(z) = c (z - mean z) by GEE with the Step-II offsets and check
    whether the fitted line leaves the band anywhere on its grid.
    """
    l = fit.component
    center = float(np.mean(data.stacked_z(l)))
    problem = GeeProblem(
        tuple(
            GeeCluster(design=cl.z[:, [l]] - center, offset=c.offset, response=c.response)
            for c, cl in zip(fit.problem.clusters, data.clusters)
        ),
        fit.problem.link,
        fit.problem.working_corr,
    )
    solution = solve(problem, np.zeros(1), ctrl)
    slope = float(solution.coefficients[0])
    line = slope * (band.z - center)
    excess = np.maximum(np.maximum(band.lower - line, line - band.upper), 0.0)
    return LinearityTest(
        component=l,
        slope=slope,
        center=center,
        line=line,
        escapes=bool(np.any(excess > 0.0)),
        max_excess=float(excess.max()) if excess.size else 0.0,
    )
