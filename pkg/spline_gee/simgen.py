# this_file: spline_gee/simgen.py
"""
Simulation designs, correlated-sample primitives and the Monte Carlo driver.

Example 1 is a gaussian partially linear model with three sine components and
exchangeable errors; Example 2 a marginal logit model with two components and
exchangeable correlated binary responses. Replication r of a run draws from
its own PCG64 stream derived from (seed, r), so serial and parallel runs give
identical reports.
"""

from __future__ import annotations

import contextlib
import functools
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, ClassVar, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
from loguru import logger
from rich import box
from rich.console import Console
from rich.table import Table
from scipy.special import expit, roots_legendre
from scipy.stats import anderson, norm

from .dataset import ClusteredDataset
from .exceptions import (
    DegenerateVarianceError,
    FeasibilityError,
    ParameterDomainError,
    ReplicationFailureError,
    SplineGeeError,
)
from .gee_solver import SolverControl
from .inference import normal_multiplier, pointwise_ci
from .marginal_model import STRUCTURE_LABELS, LinkFamily, WorkingCorrelation, build_correlation
from .pipeline import fit_two_step
from .two_step import GeeModelSpec, TruthSpec, evaluate_component

MAX_FAILURE_RATE = 0.02

_GL_NODES, _GL_WEIGHTS = roots_legendre(64)
_BISECTION_STEPS = 45
_PAIR_CHUNK = 16384


def make_rng(seed: int, replication: int = 0) -> np.random.Generator:
    """PCG64 stream for replication ``replication`` of ``seed``."""
    if seed < 0 or replication < 0:
        raise ParameterDomainError("Seeds must be non-negative", seed=seed, replication=replication)
    sequence = np.random.SeedSequence(int(seed), spawn_key=(int(replication),))
    return np.random.Generator(np.random.PCG64(sequence))


def sample_mvn(
    mean: np.ndarray,
    covariance: np.ndarray,
    rng: np.random.Generator,
    size: Union[None, int, Tuple[int, ...]] = None,
) -> np.ndarray:
    """Cholesky transform of standard normals; trailing axis is the vector dimension."""
    cov = np.asarray(covariance, dtype=float)
    dim = cov.shape[0]
    mean = np.broadcast_to(np.asarray(mean, dtype=float), (dim,))
    try:
        lower = scipy.linalg.cholesky(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ParameterDomainError(
            "Covariance matrix is not positive definite", dimension=dim
        ) from exc
    shape = (dim,) if size is None else (*np.atleast_1d(size).astype(int).tolist(), dim)
    return mean + rng.standard_normal(shape) @ lower.T


def sine_component(z: np.ndarray) -> np.ndarray:
    return np.sin(2.0 * np.pi * z)


def variance_modulation(z: np.ndarray) -> np.ndarray:
    """a(z) = (5 - 0.5 sin 2 pi z) / (5 + 0.5 sin 2 pi z)."""
    s = 0.5 * np.sin(2.0 * np.pi * z)
    return (5.0 - s) / (5.0 + s)


def half_sine_component(z: np.ndarray) -> np.ndarray:
    return 0.5 * np.sin(2.0 * np.pi * z)


def tilted_sine_component(z: np.ndarray) -> np.ndarray:
    return -0.5 * (z - 0.5 + np.sin(2.0 * np.pi * z))


@dataclass(frozen=True)
class Example1Config:
    """Gaussian design with three sine components and exchangeable errors."""

    name: ClassVar[str] = "example1"

    n: int = 250
    m: int = 20
    error_rho: float = 0.5
    latent_rho: float = 0.5
    beta: Tuple[float, ...] = (1.0, -1.0, 0.5)
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ParameterDomainError(f"Number of clusters must be >= 1, got {self.n}", n=self.n)
        if self.m < 2:
            raise ParameterDomainError(f"Cluster size must be >= 2, got {self.m}", m=self.m)
        if len(self.beta) != 3:
            raise ParameterDomainError(
                "Example 1 has three linear coefficients", beta=list(self.beta)
            )
        WorkingCorrelation("ex", self.error_rho).validate(self.m)
        WorkingCorrelation("ar1", self.latent_rho)

    @property
    def link(self) -> LinkFamily:
        return LinkFamily.gaussian()

    @property
    def cluster_size(self) -> int:
        return self.m

    def generate(
        self, rng: Optional[np.random.Generator] = None
    ) -> Tuple[ClusteredDataset, TruthSpec]:
        return gen_example1(self, rng)


@dataclass(frozen=True)
class Example2Config:
    """Marginal logit design with two components and exchangeable binary correlation."""

    name: ClassVar[str] = "example2"

    n: int = 100
    m: Optional[int] = None
    rho: float = 0.1
    beta: Tuple[float, ...] = (0.5, -0.3, 0.3)
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ParameterDomainError(f"Number of clusters must be >= 1, got {self.n}", n=self.n)
        if self.m is not None and self.m < 1:
            raise ParameterDomainError(f"Cluster size must be >= 1, got {self.m}", m=self.m)
        if len(self.beta) != 3:
            raise ParameterDomainError(
                "Example 2 has an intercept and two slopes", beta=list(self.beta)
            )

    @property
    def link(self) -> LinkFamily:
        return LinkFamily.bernoulli()

    @property
    def cluster_size(self) -> int:
        """Explicit m, or floor(2 sqrt(n))."""
        return self.m if self.m is not None else math.isqrt(4 * self.n)

    def generate(
        self, rng: Optional[np.random.Generator] = None
    ) -> Tuple[ClusteredDataset, TruthSpec]:
        return gen_example2(self, rng)


ExampleConfig = Union[Example1Config, Example2Config]


def gen_example1(
    cfg: Example1Config, rng: Optional[np.random.Generator] = None
) -> Tuple[ClusteredDataset, TruthSpec]:
    rng = make_rng(cfg.seed) if rng is None else rng
    n, m = cfg.n, cfg.m
    latent = build_correlation(WorkingCorrelation("ar1", cfg.latent_rho), 3)
    z = norm.cdf(sample_mvn(np.zeros(3), latent, rng, size=(n, m)))
    x = np.stack(
        [
            rng.choice([-0.5, 0.5], size=(n, m)),
            np.sqrt(variance_modulation(z[..., 0])) * rng.standard_normal((n, m)),
            np.sqrt(variance_modulation(z[..., 1])) * rng.standard_normal((n, m)),
        ],
        axis=-1,
    )
    error_corr = build_correlation(WorkingCorrelation("ex", cfg.error_rho), m)
    errors = sample_mvn(np.zeros(m), error_corr, rng, size=n)
    beta = np.asarray(cfg.beta, dtype=float)
    y = x @ beta + sine_component(z).sum(axis=-1) + errors
    data = ClusteredDataset.from_arrays(list(y), list(x), list(z), linear_names=("x1", "x2", "x3"))
    truth = TruthSpec(beta=beta, functions=(sine_component,) * 3).centered(data)
    return data, truth


def gen_example2(
    cfg: Example2Config, rng: Optional[np.random.Generator] = None
) -> Tuple[ClusteredDataset, TruthSpec]:
    rng = make_rng(cfg.seed) if rng is None else rng
    n, m = cfg.n, cfg.cluster_size
    x = np.concatenate([np.ones((n, m, 1)), rng.standard_normal((n, m, 2))], axis=-1)
    z = rng.uniform(size=(n, m, 2))
    beta = np.asarray(cfg.beta, dtype=float)
    eta = x @ beta + half_sine_component(z[..., 0]) + tilted_sine_component(z[..., 1])
    y = correlated_binary_clusters(expit(eta), cfg.rho, rng)
    data = ClusteredDataset.from_arrays(
        list(y), list(x), list(z), linear_names=("intercept", "x1", "x2")
    )
    functions = (half_sine_component, tilted_sine_component)
    truth = TruthSpec(beta=beta, functions=functions).centered(data)
    return data, truth


def binary_correlation_bounds(p_j: np.ndarray, p_k: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Fréchet range of corr(Y_j, Y_k) for Bernoulli(p_j), Bernoulli(p_k)."""
    p_j = np.asarray(p_j, dtype=float)
    p_k = np.asarray(p_k, dtype=float)
    scale = np.sqrt(p_j * (1.0 - p_j) * p_k * (1.0 - p_k))
    both = p_j * p_k
    lower = (np.maximum(0.0, p_j + p_k - 1.0) - both) / scale
    upper = (np.minimum(p_j, p_k) - both) / scale
    return lower, upper


def bivariate_normal_cdf(h: np.ndarray, k: np.ndarray, r: np.ndarray) -> np.ndarray:
    """
    P(U <= h, V <= k) for standard normals with correlation r.

    Uses Phi(h) Phi(k) + int_0^r phi_2(h, k; s) ds with 64-point Gauss-Legendre.
    """
    h, k, r = np.broadcast_arrays(
        np.asarray(h, dtype=float), np.asarray(k, dtype=float), np.asarray(r, dtype=float)
    )
    s = 0.5 * r[..., None] * (_GL_NODES + 1.0)
    one_minus = 1.0 - s * s
    hh, kk = h[..., None], k[..., None]
    density = np.exp(-(hh * hh - 2.0 * s * hh * kk + kk * kk) / (2.0 * one_minus)) / (
        2.0 * np.pi * np.sqrt(one_minus)
    )
    return norm.cdf(h) * norm.cdf(k) + 0.5 * r * (density @ _GL_WEIGHTS)


def tetrachoric_correlation(p_j: np.ndarray, p_k: np.ndarray, rho: float) -> np.ndarray:
    """Latent normal correlation whose dichotomization has correlation ``rho``."""
    p_j = np.asarray(p_j, dtype=float)
    p_k = np.asarray(p_k, dtype=float)
    target = p_j * p_k + rho * np.sqrt(p_j * (1.0 - p_j) * p_k * (1.0 - p_k))
    h, k = norm.ppf(p_j), norm.ppf(p_k)
    low = np.full(np.broadcast(p_j, p_k).shape, -1.0 + 1e-12)
    high = np.full_like(low, 1.0 - 1e-12)
    for _ in range(_BISECTION_STEPS):
        mid = 0.5 * (low + high)
        above = bivariate_normal_cdf(h, k, mid) > target
        high = np.where(above, mid, high)
        low = np.where(above, low, mid)
    return 0.5 * (low + high)


def correlated_binary_clusters(
    probabilities: np.ndarray, rho: float, rng: np.random.Generator
) -> np.ndarray:
    """
    Exchangeable correlated binary responses by dichotomizing latent normals.

    ``probabilities`` is (n, m); every within-cluster pair gets its own
    tetrachoric correlation. Returns an (n, m) array of 0.0/1.0.
    """
    prob = np.atleast_2d(np.asarray(probabilities, dtype=float))
    if np.any((prob <= 0.0) | (prob >= 1.0)) or not np.all(np.isfinite(prob)):
        raise ParameterDomainError("Binary marginal probabilities must lie in (0, 1)")
    n, m = prob.shape
    j, k = np.triu_indices(m, 1)
    p_j, p_k = prob[:, j], prob[:, k]
    lower, upper = binary_correlation_bounds(p_j, p_k)
    infeasible = (rho < lower) | (rho > upper)
    if infeasible.any():
        c, pair = (int(v) for v in np.argwhere(infeasible)[0])
        raise FeasibilityError(
            f"Correlation {rho} outside the Fréchet range "
            f"[{lower[c, pair]:.6f}, {upper[c, pair]:.6f}] "
            f"for marginals ({p_j[c, pair]:.6f}, {p_k[c, pair]:.6f})",
            cluster=c,
            rho=float(rho),
            lower=float(lower[c, pair]),
            upper=float(upper[c, pair]),
        )

    flat_j, flat_k = p_j.ravel(), p_k.ravel()
    latent = np.empty_like(flat_j)
    for start in range(0, flat_j.size, _PAIR_CHUNK):
        stop = start + _PAIR_CHUNK
        latent[start:stop] = tetrachoric_correlation(flat_j[start:stop], flat_k[start:stop], rho)
    latent = latent.reshape(p_j.shape)

    thresholds = norm.ppf(prob)
    out = np.empty((n, m))
    for i in range(n):
        corr = np.eye(m)
        corr[j, k] = corr[k, j] = latent[i]
        try:
            root = scipy.linalg.cholesky(corr, lower=True)
        except np.linalg.LinAlgError as exc:
            raise FeasibilityError(
                "Latent normal correlation matrix is not positive definite",
                cluster=i,
                rho=float(rho),
            ) from exc
        out[i] = (root @ rng.standard_normal(m) <= thresholds[i]).astype(float)
    return out


def gen_correlated_binary(
    probabilities: Sequence[float], rho: float, rng: np.random.Generator
) -> np.ndarray:
    """One cluster of exchangeable correlated 0/1 responses with the given marginals."""
    return correlated_binary_clusters(np.asarray(probabilities, dtype=float)[None, :], rho, rng)[0]


@dataclass(frozen=True)
class EstimatorConfig:
    """How each replication is fitted."""

    structure: str = "ex"
    degree: int = 3
    smoothness: Optional[int] = None
    alpha: Optional[float] = None
    level: float = 0.95
    weighted_projection: bool = True
    grid_size: int = 201
    ctrl: SolverControl = field(default_factory=SolverControl)

    def __post_init__(self):
        WorkingCorrelation(self.structure)
        if not 0.0 < self.level < 1.0:
            raise ParameterDomainError(f"Confidence level must lie in (0, 1), got {self.level}")
        if self.grid_size < 2:
            raise ParameterDomainError(
                "Evaluation grid needs at least two points", grid_size=self.grid_size
            )

    def model_spec(self, link: LinkFamily) -> GeeModelSpec:
        return GeeModelSpec(
            link=link,
            working_corr=WorkingCorrelation(
                self.structure, self.alpha if self.alpha is not None else 0.0
            ),
            degree=self.degree,
            smoothness=self.smoothness,
            fix_alpha=self.alpha is not None,
            weighted_projection=self.weighted_projection,
        )


@dataclass(frozen=True, eq=False)
class ReplicationRecord:
    """Per-replication estimates; component arrays are indexed by component."""

    replication: int
    beta: np.ndarray
    se: np.ndarray
    alpha: float
    ise_pilot: np.ndarray
    ise_two_step: np.ndarray
    ise_oracle: np.ndarray
    oracle_at_half: np.ndarray
    covers_two_step: np.ndarray
    covers_oracle: np.ndarray
    max_gap: np.ndarray
    half_width: np.ndarray
    ns_selected: np.ndarray

    @property
    def efficiency(self) -> np.ndarray:
        return np.sqrt(self.ise_two_step / self.ise_oracle)


@dataclass(frozen=True)
class ReplicationFailure:
    replication: int
    code: str
    message: str


def _require_oracle_error(ise_oracle: np.ndarray, replication: int) -> None:
    """The efficiency ratio needs a positive, finite oracle ISE for every component."""
    bad = ~(np.isfinite(ise_oracle) & (ise_oracle > 0.0))
    if bad.any():
        component = int(np.flatnonzero(bad)[0]) + 1
        raise DegenerateVarianceError(
            f"Oracle ISE of component {component} is {ise_oracle[component - 1]!r}; "
            "relative efficiency is undefined",
            component=component,
            replication=replication,
        )


def run_replication(
    example: ExampleConfig, estimator: EstimatorConfig, seed: int, replication: int
) -> ReplicationRecord:
    """Generate, fit (two-step and oracle) and score one replication."""
    data, truth = example.generate(make_rng(seed, replication))
    result = fit_two_step(data, estimator.model_spec(example.link), estimator.ctrl, truth=truth)
    grid = np.linspace(0.0, 1.0, estimator.grid_size)
    half = np.array([0.5])

    per_component: Dict[str, List[float]] = {
        key: []
        for key in (
            "ise_pilot",
            "ise_two_step",
            "ise_oracle",
            "oracle_at_half",
            "covers_two_step",
            "covers_oracle",
            "max_gap",
            "half_width",
            "ns_selected",
        )
    }
    for comp in result.components:
        l = comp.component
        z_obs = data.stacked_z(l)
        target = truth.theta(l, z_obs)
        two_step = evaluate_component(comp.fit, z_obs).values
        oracle = evaluate_component(comp.oracle, z_obs).values
        target_half = float(truth.theta(l, half)[0])
        ci_two_step = pointwise_ci(comp.fit, comp.fit.sandwich, half, estimator.level)
        ci_oracle = pointwise_ci(comp.oracle, comp.oracle.sandwich, half, estimator.level)

        pilot_curve = result.pilot.theta(l, z_obs)
        per_component["ise_pilot"].append(float(np.mean((pilot_curve - target) ** 2)))
        per_component["ise_two_step"].append(float(np.mean((two_step - target) ** 2)))
        per_component["ise_oracle"].append(float(np.mean((oracle - target) ** 2)))
        per_component["oracle_at_half"].append(float(ci_oracle.estimate[0]))
        per_component["covers_two_step"].append(
            float(ci_two_step.lower[0] <= target_half <= ci_two_step.upper[0])
        )
        per_component["covers_oracle"].append(
            float(ci_oracle.lower[0] <= target_half <= ci_oracle.upper[0])
        )
        gap = (
            evaluate_component(comp.fit, grid).values
            - evaluate_component(comp.oracle, grid).values
        )
        per_component["max_gap"].append(float(np.max(np.abs(gap))))
        per_component["half_width"].append(float(ci_two_step.multiplier * ci_two_step.sd[0]))
        per_component["ns_selected"].append(float(comp.plan.selected))

    arrays = {key: np.asarray(values, dtype=float) for key, values in per_component.items()}
    _require_oracle_error(arrays["ise_oracle"], replication)
    return ReplicationRecord(
        replication=replication,
        beta=result.beta.copy(),
        se=result.standard_errors.copy(),
        alpha=float(result.alpha),
        covers_two_step=arrays.pop("covers_two_step").astype(bool),
        covers_oracle=arrays.pop("covers_oracle").astype(bool),
        ns_selected=arrays.pop("ns_selected").astype(int),
        **arrays,
    )


def _replicate_safely(
    example: ExampleConfig, estimator: EstimatorConfig, seed: int, replication: int
) -> Union[ReplicationRecord, ReplicationFailure]:
    try:
        return run_replication(example, estimator, seed, replication)
    except SplineGeeError as exc:
        return ReplicationFailure(replication=replication, code=exc.code, message=str(exc))


def _anderson_normal(samples: np.ndarray) -> Tuple[Optional[float], Optional[float]]:
    """Anderson-Darling statistic against the normal family and its 1% critical value."""
    if samples.size < 8 or not np.std(samples) > 0.0:
        return None, None
    result = anderson(samples, dist="norm")
    levels = list(np.asarray(result.significance_level, dtype=float))
    return float(result.statistic), float(result.critical_values[levels.index(1.0)])


@dataclass(frozen=True, eq=False)
class McReport:
    """Aggregated Monte Carlo metrics for one design and working correlation."""

    example: str
    structure: str
    n: int
    m: int
    nsim: int
    seed: int
    level: float
    beta_true: np.ndarray
    records: Tuple[ReplicationRecord, ...]
    failures: Tuple[ReplicationFailure, ...] = ()
    wall_time: float = 0.0

    def _stack(self, attr: str) -> np.ndarray:
        return np.stack([getattr(r, attr) for r in self.records])

    @property
    def n_used(self) -> int:
        return len(self.records)

    @property
    def excluded(self) -> int:
        return len(self.failures)

    @property
    def failure_rate(self) -> float:
        return self.excluded / self.nsim

    @property
    def coverage(self) -> np.ndarray:
        z = normal_multiplier(self.level)
        errors = np.abs(self._stack("beta") - self.beta_true)
        return np.mean(errors <= z * self._stack("se"), axis=0)

    @property
    def rmse(self) -> np.ndarray:
        return np.sqrt(np.mean((self._stack("beta") - self.beta_true) ** 2, axis=0))

    @property
    def bias(self) -> np.ndarray:
        return np.abs(np.mean(self._stack("beta"), axis=0) - self.beta_true)

    @property
    def mise_pilot(self) -> np.ndarray:
        return np.mean(self._stack("ise_pilot"), axis=0)

    @property
    def mise_two_step(self) -> np.ndarray:
        return np.mean(self._stack("ise_two_step"), axis=0)

    @property
    def mise_oracle(self) -> np.ndarray:
        return np.mean(self._stack("ise_oracle"), axis=0)

    @property
    def efficiency(self) -> np.ndarray:
        """(replications, components) samples of sqrt(ISE_two-step / ISE_oracle)."""
        return self._stack("efficiency")

    @property
    def oracle_normality(self) -> List[Tuple[Optional[float], Optional[float]]]:
        samples = self._stack("oracle_at_half")
        return [_anderson_normal(samples[:, l]) for l in range(samples.shape[1])]

    def validate(self, max_failure_rate: float = MAX_FAILURE_RATE) -> "McReport":
        if self.failure_rate > max_failure_rate:
            raise ReplicationFailureError(
                f"{self.excluded} of {self.nsim} replications failed "
                f"({self.failure_rate:.1%} > {max_failure_rate:.1%})",
                excluded=self.excluded,
                nsim=self.nsim,
                failures=[f"{f.replication}: {f.code}" for f in self.failures],
            )
        return self

    def to_dict(self) -> dict:
        normality = self.oracle_normality
        return {
            "example": self.example,
            "structure": self.structure,
            "n": self.n,
            "m": self.m,
            "nsim": self.nsim,
            "seed": self.seed,
            "level": self.level,
            "replications_used": self.n_used,
            "replications_excluded": self.excluded,
            "failures": [
                {"replication": f.replication, "code": f.code, "message": f.message}
                for f in self.failures
            ],
            "beta_true": self.beta_true.tolist(),
            "coverage": self.coverage.tolist(),
            "rmse": self.rmse.tolist(),
            "bias": self.bias.tolist(),
            "alpha_mean": float(np.mean([r.alpha for r in self.records])),
            "components": [
                {
                    "component": l + 1,
                    "mise_pilot": float(self.mise_pilot[l]),
                    "mise_two_step": float(self.mise_two_step[l]),
                    "mise_oracle": float(self.mise_oracle[l]),
                    "efficiency": self.efficiency[:, l].tolist(),
                    "efficiency_median": float(np.median(self.efficiency[:, l])),
                    "oracle_at_half": self._stack("oracle_at_half")[:, l].tolist(),
                    "anderson_statistic": normality[l][0],
                    "anderson_critical_1pct": normality[l][1],
                    "ci_coverage_two_step": float(np.mean(self._stack("covers_two_step")[:, l])),
                    "ci_coverage_oracle": float(np.mean(self._stack("covers_oracle")[:, l])),
                    "max_gap": self._stack("max_gap")[:, l].tolist(),
                    "mean_max_gap": float(np.mean(self._stack("max_gap")[:, l])),
                    "mean_half_width": float(np.mean(self._stack("half_width")[:, l])),
                    "ns_selected": self._stack("ns_selected")[:, l].tolist(),
                }
                for l in range(self.mise_two_step.size)
            ],
        }


def run_monte_carlo(
    example: ExampleConfig,
    estimator: EstimatorConfig,
    nsim: int,
    seed: Optional[int] = None,
    threads: int = 1,
    on_replication: Optional[Callable[[Union[ReplicationRecord, ReplicationFailure]], None]] = None,
) -> McReport:
    """
    Run ``nsim`` replications and aggregate them.

    Failed replications are excluded and counted; call ``McReport.validate``
    to enforce the failure-rate ceiling.
    """
    if nsim < 1:
        raise ParameterDomainError(f"nsim must be >= 1, got {nsim}", nsim=nsim)
    seed = example.seed if seed is None else int(seed)
    task = functools.partial(_replicate_safely, example, estimator, seed)
    started = time.perf_counter()
    outcomes = []
    with contextlib.ExitStack() as stack:
        if threads > 1:
            pool = stack.enter_context(ProcessPoolExecutor(max_workers=threads))
            iterator = pool.map(task, range(nsim))
        else:
            iterator = map(task, range(nsim))
        for outcome in iterator:
            if isinstance(outcome, ReplicationFailure):
                logger.warning(
                    "Replication {} failed: {} ({})",
                    outcome.replication,
                    outcome.code,
                    outcome.message,
                )
            if on_replication is not None:
                on_replication(outcome)
            outcomes.append(outcome)

    records = tuple(o for o in outcomes if isinstance(o, ReplicationRecord))
    failures = tuple(o for o in outcomes if isinstance(o, ReplicationFailure))
    if not records:
        raise ReplicationFailureError(
            f"All {nsim} replications failed",
            excluded=nsim,
            nsim=nsim,
            failures=[f"{f.replication}: {f.code}" for f in failures],
        )
    wall = time.perf_counter() - started
    logger.info(
        "{} {}: {} replications in {:.1f}s ({} excluded)",
        example.name,
        estimator.structure,
        nsim,
        wall,
        len(failures),
    )
    return McReport(
        example=example.name,
        structure=estimator.structure,
        n=example.n,
        m=example.cluster_size,
        nsim=nsim,
        seed=seed,
        level=estimator.level,
        beta_true=np.asarray(example.beta, dtype=float),
        records=records,
        failures=failures,
        wall_time=wall,
    )


def _fmt(value: float) -> str:
    return f"{value:.4f}"


def render_tables(reports: Sequence[McReport], width: int = 160) -> str:
    """
    Plain-text tables: coverage/RMSE/|Bias| per coefficient, then MISE of the
    two-step, pilot and oracle estimators per component. One row per report.
    """
    if not reports:
        return ""
    d1 = reports[0].beta_true.size
    coef = Table(title="Coverage frequency, RMSE and |Bias| of beta_hat", box=box.SIMPLE)
    for header in ("n", "m", "corr"):
        coef.add_column(header)
    for metric in ("Cov", "RMSE", "Bias"):
        for k in range(d1):
            coef.add_column(f"{metric} b{k}", justify="right")
    for report in reports:
        values = [*report.coverage, *report.rmse, *report.bias]
        label = STRUCTURE_LABELS[report.structure]
        coef.add_row(str(report.n), str(report.m), label, *(_fmt(v) for v in values))

    d2 = reports[0].mise_two_step.size
    mise = Table(
        title="MISE (x1e-3) of two-step (SS), pilot and oracle (OR) estimators", box=box.SIMPLE
    )
    for header in ("n", "m", "corr"):
        mise.add_column(header)
    for l in range(d2):
        for label in ("SS", "pilot", "OR", "eff"):
            mise.add_column(f"{label} {l + 1}", justify="right")
    for report in reports:
        cells = []
        for l in range(d2):
            cells += [
                _fmt(1e3 * report.mise_two_step[l]),
                _fmt(1e3 * report.mise_pilot[l]),
                _fmt(1e3 * report.mise_oracle[l]),
                _fmt(float(np.median(report.efficiency[:, l]))),
            ]
        mise.add_row(str(report.n), str(report.m), STRUCTURE_LABELS[report.structure], *cells)

    console = Console(record=True, width=width, file=io.StringIO(), color_system=None)
    console.print(coef)
    if d2:
        console.print(mise)
    return console.export_text(styles=False)
