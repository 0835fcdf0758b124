# this_file: spline_gee/__init__.py
"""
spline_gee - Two-step spline GEE estimation for generalized additive partially linear models

Marginal models for clustered/longitudinal data: a parametric part X'beta plus
additive smooth components theta_l(Z_l), estimated by a joint pilot spline GEE
fit followed by per-component Step-II refits with BIC-chosen knots, sandwich
covariances, pointwise intervals and simultaneous bands.
"""

from __future__ import annotations

from loguru import logger

from .dataset import Cluster, ClusteredDataset
from .exceptions import (
    BandDegreeError,
    ConfigError,
    CovariateRangeError,
    DataFormatError,
    DegenerateDesignError,
    DegenerateVarianceError,
    DomainError,
    EmptyClusterError,
    FeasibilityError,
    IllConditionedCovarianceError,
    MissingColumnError,
    NonNumericCellError,
    NotIdentifiableError,
    NumericDomainError,
    ParameterDomainError,
    RankDeficientDesignError,
    ReplicationFailureError,
    SaturationError,
    SelectionFailedError,
    SingularInformationError,
    SplineGeeError,
)
from .gee_solver import GeeProblem, GeeSolution, SolverControl, solve
from .inference import (
    BandSpec,
    ConfidenceCurve,
    estimate_alpha,
    estimate_sigma,
    linearity_test,
    pointwise_ci,
    sandwich_beta,
    sandwich_theta,
    simultaneous_band,
)
from .knot_selection import KnotPlan, bic, select_ns, step1_knots, step2_candidates
from .marginal_model import LinkFamily, WorkingCorrelation
from .pipeline import TwoStepResult, fit_two_step
from .spline_basis import CenteredSplineBasis, build_knots, eval_centered, eval_raw, fit_centering
from .two_step import (
    ComponentFit,
    GeeModelSpec,
    PilotFit,
    TruthSpec,
    evaluate_component,
    fit_component,
    fit_oracle,
    fit_pilot,
)

logger.disable("spline_gee")

__version__ = "0.1.0"
__all__ = [
    "BandDegreeError",
    "BandSpec",
    "CenteredSplineBasis",
    "Cluster",
    "ClusteredDataset",
    "ComponentFit",
    "ConfidenceCurve",
    "ConfigError",
    "CovariateRangeError",
    "DataFormatError",
    "DegenerateDesignError",
    "DegenerateVarianceError",
    "DomainError",
    "EmptyClusterError",
    "FeasibilityError",
    "GeeModelSpec",
    "GeeProblem",
    "GeeSolution",
    "IllConditionedCovarianceError",
    "KnotPlan",
    "LinkFamily",
    "MissingColumnError",
    "NonNumericCellError",
    "NotIdentifiableError",
    "NumericDomainError",
    "ParameterDomainError",
    "PilotFit",
    "RankDeficientDesignError",
    "ReplicationFailureError",
    "SaturationError",
    "SelectionFailedError",
    "SingularInformationError",
    "SolverControl",
    "SplineGeeError",
    "TruthSpec",
    "TwoStepResult",
    "WorkingCorrelation",
    "bic",
    "build_knots",
    "estimate_alpha",
    "estimate_sigma",
    "eval_centered",
    "eval_raw",
    "evaluate_component",
    "fit_centering",
    "fit_component",
    "fit_oracle",
    "fit_pilot",
    "fit_two_step",
    "linearity_test",
    "pointwise_ci",
    "sandwich_beta",
    "sandwich_theta",
    "select_ns",
    "simultaneous_band",
    "solve",
    "step1_knots",
    "step2_candidates",
]
