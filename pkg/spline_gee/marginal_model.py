# this_file: spline_gee/marginal_model.py
"""
Marginal mean/variance families and working correlation structures.

The working covariance of cluster i is V_i = A_i^{1/2} R_i(alpha) A_i^{1/2}.
R depends only on the structure, alpha and the cluster size, so its inverse or
Cholesky factor is computed once per size and reused across clusters.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
from scipy.special import expit

from .exceptions import (
    DegenerateVarianceError,
    IllConditionedCovarianceError,
    NumericDomainError,
    ParameterDomainError,
)

LINK_KINDS = ("gaussian", "bernoulli")
STRUCTURES = ("ind", "ex", "ar1")
STRUCTURE_LABELS = {"ind": "IND", "ex": "EX", "ar1": "AR(1)"}


@dataclass(frozen=True)
class LinkFamily:
    """Identity-gaussian or logit-bernoulli marginal model."""

    kind: str = "gaussian"
    dispersion: float = 1.0

    def __post_init__(self):
        if self.kind not in LINK_KINDS:
            raise ParameterDomainError(
                f"Unknown link family '{self.kind}', expected one of {LINK_KINDS}", kind=self.kind
            )
        if not (np.isfinite(self.dispersion) and self.dispersion > 0):
            raise ParameterDomainError(
                f"Dispersion must be positive, got {self.dispersion}", dispersion=self.dispersion
            )

    @classmethod
    def gaussian(cls, dispersion: float = 1.0) -> "LinkFamily":
        return cls("gaussian", dispersion)

    @classmethod
    def bernoulli(cls) -> "LinkFamily":
        return cls("bernoulli", 1.0)


@dataclass(frozen=True)
class WorkingCorrelation:
    """Working correlation R(alpha): independence, exchangeable or AR(1)."""

    structure: str = "ind"
    alpha: float = 0.0

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise ParameterDomainError(
                f"Unknown working correlation '{self.structure}', expected one of {STRUCTURES}",
                structure=self.structure,
            )
        if not np.isfinite(self.alpha):
            raise ParameterDomainError("Correlation parameter must be finite", alpha=self.alpha)
        if self.structure == "ar1" and not -1.0 < self.alpha < 1.0:
            raise ParameterDomainError(
                f"AR(1) parameter must lie in (-1, 1), got {self.alpha}", alpha=self.alpha
            )
        if self.structure == "ex" and not self.alpha < 1.0:
            raise ParameterDomainError(
                f"Exchangeable parameter must be < 1, got {self.alpha}", alpha=self.alpha
            )

    @property
    def label(self) -> str:
        return STRUCTURE_LABELS[self.structure]

    def validate(self, max_cluster_size: int) -> None:
        """Check positive definiteness for clusters up to ``max_cluster_size``."""
        if self.structure == "ex" and max_cluster_size > 1:
            lower = -1.0 / (max_cluster_size - 1)
            if not self.alpha > lower:
                raise ParameterDomainError(
                    f"Exchangeable parameter {self.alpha} is not positive definite for clusters of "
                    f"size {max_cluster_size}; it must exceed {lower:.6g}",
                    alpha=self.alpha,
                    cluster_size=max_cluster_size,
                )

    def admissible_interval(self, max_cluster_size: int) -> Tuple[float, float]:
        if self.structure == "ex":
            lower = -1.0 / (max_cluster_size - 1) if max_cluster_size > 1 else -1.0
            return lower, 1.0
        return -1.0, 1.0


@dataclass(frozen=True, eq=False)
class ClusterCovariance:
    """Working covariance of one cluster with a solve handle for V^{-1} x."""

    a_diag: np.ndarray
    corr: np.ndarray
    index: int = 0
    corr_inverse: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.corr_inverse is None:
            object.__setattr__(self, "corr_inverse", _factorized_inverse(self.corr, self.index))

    @property
    def size(self) -> int:
        return self.a_diag.size

    def matrix(self) -> np.ndarray:
        root = np.sqrt(self.a_diag)
        return root[:, None] * self.corr * root[None, :]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return solve_working_covariance(self, rhs)


def _factorized_inverse(corr: np.ndarray, index: int) -> np.ndarray:
    """Cholesky inverse of an arbitrary correlation matrix of cluster ``index``."""
    corr = np.asarray(corr, dtype=float)
    try:
        factor = scipy.linalg.cho_factor(corr, lower=True)
    except np.linalg.LinAlgError as exc:
        raise IllConditionedCovarianceError(
            "Working correlation is not positive definite", cluster=index
        ) from exc
    inverse = scipy.linalg.cho_solve(factor, np.eye(corr.shape[0]))
    return 0.5 * (inverse + inverse.T)


def mu_and_delta(link: LinkFamily, eta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Return mu(eta) and its derivative d mu / d eta."""
    eta = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise NumericDomainError("Linear predictor contains non-finite values")
    if link.kind == "gaussian":
        return eta.copy(), np.ones_like(eta)
    mu = expit(eta)
    # expit(eta) * expit(-eta) stays positive after 1 - mu has rounded to zero
    return mu, mu * expit(-eta)


def marginal_variance(link: LinkFamily, mu: np.ndarray) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    if link.kind == "gaussian":
        return np.full_like(mu, link.dispersion)
    bad = ~((mu > 0.0) & (mu < 1.0))
    if bad.any():
        first = int(np.flatnonzero(bad.ravel())[0])
        raise DegenerateVarianceError(
            f"Bernoulli mean {mu.ravel()[first]!r} has zero variance", index=first
        )
    return mu * (1.0 - mu)


def build_correlation(wc: WorkingCorrelation, m: int) -> np.ndarray:
    if m < 1:
        raise ParameterDomainError(f"Cluster size must be >= 1, got {m}", cluster_size=m)
    wc.validate(m)
    if wc.structure == "ind":
        return np.eye(m)
    if wc.structure == "ex":
        corr = np.full((m, m), wc.alpha)
        np.fill_diagonal(corr, 1.0)
        return corr
    lags = np.arange(m)
    return wc.alpha ** np.abs(lags[:, None] - lags[None, :])


@functools.lru_cache(maxsize=256)
def _cached_inverse(wc: WorkingCorrelation, m: int, closed_form: bool) -> np.ndarray:
    if m == 1:
        inverse = np.ones((1, 1))
    elif closed_form and wc.structure == "ind":
        inverse = np.eye(m)
    elif closed_form and wc.structure == "ex":
        a = wc.alpha
        inverse = (np.eye(m) - a / (1.0 + (m - 1) * a)) / (1.0 - a)
    elif closed_form and wc.structure == "ar1":
        a = wc.alpha
        denom = 1.0 - a * a
        inverse = np.zeros((m, m))
        inverse[np.diag_indices(m)] = (1.0 + a * a) / denom
        inverse[0, 0] = inverse[-1, -1] = 1.0 / denom
        off = np.arange(m - 1)
        inverse[off, off + 1] = inverse[off + 1, off] = -a / denom
    else:
        corr = build_correlation(wc, m)
        try:
            factor = scipy.linalg.cho_factor(corr, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ParameterDomainError(
                f"{wc.label} correlation with alpha={wc.alpha} is not positive definite for m={m}",
                alpha=wc.alpha,
                cluster_size=m,
            ) from exc
        inverse = scipy.linalg.cho_solve(factor, np.eye(m))
        inverse = 0.5 * (inverse + inverse.T)
    inverse.setflags(write=False)
    return inverse


def correlation_inverse(wc: WorkingCorrelation, m: int, closed_form: bool = True) -> np.ndarray:
    """R(alpha)^{-1} for size m; closed forms for all three structures, Cholesky otherwise."""
    wc.validate(m)
    return _cached_inverse(wc, int(m), closed_form)


def working_covariance(
    link: LinkFamily, wc: WorkingCorrelation, mu: np.ndarray, index: int = 0
) -> ClusterCovariance:
    mu = np.asarray(mu, dtype=float)
    m = mu.size
    return ClusterCovariance(
        a_diag=marginal_variance(link, mu),
        corr=build_correlation(wc, m),
        index=index,
        corr_inverse=correlation_inverse(wc, m),
    )


def solve_working_covariance(cov: ClusterCovariance, rhs: np.ndarray) -> np.ndarray:
    """Return V^{-1} rhs for a vector or a matrix of right-hand sides."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != cov.size:
        raise ParameterDomainError(
            f"Right-hand side has {rhs.shape[0]} rows, covariance has {cov.size}",
            cluster=cov.index,
        )
    if not np.all(np.isfinite(cov.a_diag)) or np.any(cov.a_diag <= 0.0):
        raise IllConditionedCovarianceError(
            "Marginal variances must be positive", cluster=cov.index
        )
    weight = 1.0 / np.sqrt(cov.a_diag)
    if rhs.ndim == 2:
        weight = weight[:, None]
    return weight * (cov.corr_inverse @ (weight * rhs))
