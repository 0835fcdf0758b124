# this_file: spline_gee/gee_solver.py
"""
Fisher scoring for generalized estimating equations.

    g(c)   = sum_i (Delta_i D_i)^T V_i^{-1} (Y_i - mu_i)
    Psi(c) = sum_i (Delta_i D_i)^T V_i^{-1} (Delta_i D_i)

Delta_i and V_i are re-evaluated at every iterate. Clusters of equal size are
stacked and processed together since R(alpha)^{-1} only depends on the size.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Iterator, List, Sequence, Tuple

import numpy as np
import scipy.linalg
from loguru import logger

from .exceptions import (
    DegenerateVarianceError,
    ParameterDomainError,
    SaturationError,
    SingularInformationError,
)
from .marginal_model import (
    ClusterCovariance,
    LinkFamily,
    WorkingCorrelation,
    correlation_inverse,
    marginal_variance,
    mu_and_delta,
    working_covariance,
)


@dataclass(frozen=True, eq=False)
class GeeCluster:
    design: np.ndarray
    offset: np.ndarray
    response: np.ndarray


@dataclass(frozen=True)
class SolverControl:
    max_iter: int = 100
    tol_score: float = 1e-8
    tol_step: float = 1e-10
    step_halvings: int = 10

    def __post_init__(self):
        if self.max_iter < 1:
            raise ParameterDomainError("max_iter must be >= 1", max_iter=self.max_iter)
        if not (self.tol_score > 0 and self.tol_step > 0):
            raise ParameterDomainError("Solver tolerances must be positive")
        if self.step_halvings < 0:
            raise ParameterDomainError("step_halvings must be >= 0")


@dataclass(frozen=True, eq=False)
class _SizeGroup:
    indices: np.ndarray
    design: np.ndarray  # (g, m, p)
    offset: np.ndarray  # (g, m)
    response: np.ndarray  # (g, m)


@dataclass(frozen=True, eq=False)
class GeeProblem:
    clusters: Tuple[GeeCluster, ...]
    link: LinkFamily
    working_corr: WorkingCorrelation

    def __post_init__(self):
        if not self.clusters:
            raise ParameterDomainError("A GEE problem needs at least one cluster")
        p = self.clusters[0].design.shape[1]
        for index, cluster in enumerate(self.clusters):
            m = cluster.response.size
            if cluster.design.shape != (m, p) or cluster.offset.shape != (m,):
                raise ParameterDomainError(
                    f"Cluster {index} has mismatched design/offset/response shapes",
                    cluster=index,
                )
        self.working_corr.validate(max(c.response.size for c in self.clusters))

    @classmethod
    def from_arrays(
        cls,
        designs: Sequence[np.ndarray],
        offsets: Sequence[np.ndarray],
        responses: Sequence[np.ndarray],
        link: LinkFamily,
        working_corr: WorkingCorrelation,
    ) -> "GeeProblem":
        clusters = []
        for d, o, y in zip(designs, offsets, responses):
            y = np.asarray(y, dtype=float).ravel()
            clusters.append(
                GeeCluster(
                    design=np.asarray(d, dtype=float).reshape(y.size, -1),
                    offset=np.asarray(o, dtype=float).ravel(),
                    response=y,
                )
            )
        return cls(tuple(clusters), link, working_corr)

    @property
    def n_coefficients(self) -> int:
        return self.clusters[0].design.shape[1]

    @property
    def n_total(self) -> int:
        return int(sum(c.response.size for c in self.clusters))

    @functools.cached_property
    def groups(self) -> Tuple[_SizeGroup, ...]:
        sizes = np.array([c.response.size for c in self.clusters])
        groups = []
        for m in np.unique(sizes):
            idx = np.flatnonzero(sizes == m)
            groups.append(
                _SizeGroup(
                    indices=idx,
                    design=np.stack([self.clusters[i].design for i in idx]),
                    offset=np.stack([self.clusters[i].offset for i in idx]),
                    response=np.stack([self.clusters[i].response for i in idx]),
                )
            )
        return tuple(groups)


@dataclass(frozen=True, eq=False)
class GeeSolution:
    coefficients: np.ndarray
    converged: bool
    iterations: int
    score_norm: float
    model_hessian: np.ndarray

    def diagnostics(self) -> dict:
        return {
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "score_norm": float(self.score_norm),
        }


def _group_variance(problem: GeeProblem, group: _SizeGroup, mu: np.ndarray) -> np.ndarray:
    try:
        return marginal_variance(problem.link, mu)
    except DegenerateVarianceError:
        row_in_group, row = (int(v) for v in np.argwhere(~((mu > 0.0) & (mu < 1.0)))[0])
        raise SaturationError(
            "Fitted probability reached 0 or 1", cluster=int(group.indices[row_in_group]), row=row
        ) from None


def _assemble(problem: GeeProblem, coef: np.ndarray, with_info: bool = True):
    p = problem.n_coefficients
    score = np.zeros(p)
    info = np.zeros((p, p))
    for group in problem.groups:
        eta = group.offset + group.design @ coef
        mu, delta = mu_and_delta(problem.link, eta)
        var = _group_variance(problem, group, mu)
        weight = 1.0 / np.sqrt(var)
        rinv = correlation_inverse(problem.working_corr, eta.shape[1])
        # A^{-1/2} Delta D and A^{-1/2} (Y - mu)
        left = (weight * delta)[..., None] * group.design
        resid = weight * (group.response - mu)
        rleft = np.einsum("jk,gkp->gjp", rinv, left)
        score += np.einsum("gjp,gj->p", rleft, resid)
        if with_info:
            info += np.einsum("gjp,gjq->pq", left, rleft)
    if with_info:
        info = 0.5 * (info + info.T)
    return score, info


def score(problem: GeeProblem, coef: np.ndarray) -> np.ndarray:
    """Summed weighted score g(coef)."""
    coef = np.asarray(coef, dtype=float)
    _check_dimension(problem, coef)
    return _assemble(problem, coef, with_info=False)[0]


def fisher_info(problem: GeeProblem, coef: np.ndarray) -> np.ndarray:
    """Model Hessian Psi(coef) = sum D^T Delta V^{-1} Delta D."""
    coef = np.asarray(coef, dtype=float)
    _check_dimension(problem, coef)
    return _assemble(problem, coef)[1]


def _check_dimension(problem: GeeProblem, coef: np.ndarray) -> None:
    if coef.shape != (problem.n_coefficients,):
        raise ParameterDomainError(
            f"Coefficient vector has shape {coef.shape}, design expects ({problem.n_coefficients},)"
        )


def _newton_step(info: np.ndarray, g: np.ndarray) -> np.ndarray:
    try:
        factor = scipy.linalg.cho_factor(info, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularInformationError(
            "Fisher information is singular; the design may be rank deficient",
            dimension=int(info.shape[0]),
        ) from exc
    return scipy.linalg.cho_solve(factor, g)


def solve(
    problem: GeeProblem, init: np.ndarray, ctrl: SolverControl = SolverControl()
) -> GeeSolution:
    """
    Fisher scoring with step halving.

    Converges only when ||g||_inf <= tol_score * n_T. A step with ||step||_inf <= tol_step
    while the score is still above that threshold stops the iteration as stalled.
    Non-convergence returns ``converged=False`` and leaves the decision to the caller.
    """
    coef = np.asarray(init, dtype=float).copy()
    _check_dimension(problem, coef)
    if not np.all(np.isfinite(coef)):
        raise ParameterDomainError("Initial coefficients must be finite")
    threshold = ctrl.tol_score * problem.n_total

    g, info = _assemble(problem, coef)
    norm = float(np.max(np.abs(g))) if g.size else 0.0
    converged = norm <= threshold
    iterations = 0
    while not converged and iterations < ctrl.max_iter:
        iterations += 1
        step = _newton_step(info, g)
        halvings = 0
        while True:
            candidate = coef + step
            try:
                g_new, info_new = _assemble(problem, candidate)
                norm_new = float(np.max(np.abs(g_new)))
                accepted = norm_new < norm or halvings >= ctrl.step_halvings
            except SaturationError:
                if halvings >= ctrl.step_halvings:
                    raise
                accepted = False
            if accepted:
                break
            step = 0.5 * step
            halvings += 1
        if norm_new >= norm:
            logger.warning(
                "GEE iteration {}: step halving exhausted, accepting |score| {:.3e} -> {:.3e}",
                iterations,
                norm,
                norm_new,
            )
        coef, g, info, norm = candidate, g_new, info_new, norm_new
        step_norm = float(np.max(np.abs(step)))
        logger.debug(
            "GEE iteration {}: |score|={:.3e}, |step|={:.3e}, halvings={}",
            iterations,
            norm,
            step_norm,
            halvings,
        )
        converged = norm <= threshold
        if not converged and step_norm <= ctrl.tol_step:
            logger.warning(
                "GEE solver stalled at iteration {}: |step|={:.3e} but |score|={:.3e} > {:.3e}",
                iterations,
                step_norm,
                norm,
                threshold,
            )
            break

    if not converged:
        logger.warning(
            "GEE solver did not converge after {} iterations (|score|={:.3e})", iterations, norm
        )
    return GeeSolution(
        coefficients=coef,
        converged=bool(converged),
        iterations=iterations,
        score_norm=norm,
        model_hessian=info,
    )


def linear_predictors(problem: GeeProblem, coef: np.ndarray) -> List[np.ndarray]:
    return [c.offset + c.design @ coef for c in problem.clusters]


def fitted_means(problem: GeeProblem, coef: np.ndarray) -> List[np.ndarray]:
    return [mu_and_delta(problem.link, eta)[0] for eta in linear_predictors(problem, coef)]


def cluster_terms(
    problem: GeeProblem, coef: np.ndarray
) -> Iterator[Tuple[int, np.ndarray, np.ndarray, ClusterCovariance]]:
    """Yield (index, residual, delta, working covariance) per cluster in input order."""
    for index, (cluster, eta) in enumerate(zip(problem.clusters, linear_predictors(problem, coef))):
        mu, delta = mu_and_delta(problem.link, eta)
        try:
            cov = working_covariance(problem.link, problem.working_corr, mu, index=index)
        except DegenerateVarianceError:
            row = int(np.flatnonzero(~((mu > 0.0) & (mu < 1.0)))[0])
            raise SaturationError(
                "Fitted probability reached 0 or 1", cluster=index, row=row
            ) from None
        yield index, cluster.response - mu, delta, cov


def weighted_residual_form(problem: GeeProblem, coef: np.ndarray) -> float:
    """Q(coef) = 1/2 sum_i r_i^T V_i^{-1} r_i with V evaluated at coef."""
    total = 0.0
    for _, resid, _, cov in cluster_terms(problem, coef):
        total += float(resid @ cov.solve(resid))
    return 0.5 * total
