# this_file: spline_gee/exceptions.py
"""Exception hierarchy for spline_gee.

Every error carries a stable ``code`` and a ``context`` dict so the CLI can
emit ``{code, message, context}`` without guessing from message text.
"""

from __future__ import annotations

from typing import Any, Dict


class SplineGeeError(Exception):
    """Base exception for all spline_gee errors."""

    code = "spline_gee_error"

    def __init__(self, message: str, **context: Any):
        self.context: Dict[str, Any] = context
        super().__init__(message)

    def to_dict(self) -> Dict[str, Any]:
        return {"code": self.code, "message": str(self), "context": self.context}


class ParameterDomainError(SplineGeeError, ValueError):
    """Raised when a tuning parameter is outside its admissible range."""

    code = "parameter_domain"


class DomainError(SplineGeeError, ValueError):
    """Raised when a covariate value falls outside [0, 1]."""

    code = "domain"


class NumericDomainError(SplineGeeError, ArithmeticError):
    """Raised for non-finite linear predictors."""

    code = "numeric_domain"


class DegenerateDesignError(SplineGeeError, ValueError):
    """Raised when the training data cannot support a centered basis."""

    code = "degenerate_design"


class DegenerateVarianceError(SplineGeeError, ArithmeticError):
    """Raised when a marginal variance or residual covariance collapses to zero."""

    code = "degenerate_variance"


class SaturationError(DegenerateVarianceError):
    """Raised when a fitted Bernoulli mean reaches 0 or 1 numerically."""

    code = "saturation"

    def __init__(self, message: str, cluster: int, row: int, **context: Any):
        self.cluster = cluster
        self.row = row
        super().__init__(
            f"{message} (cluster {cluster}, row {row})", cluster=cluster, row=row, **context
        )


class IllConditionedCovarianceError(SplineGeeError, ArithmeticError):
    """Raised when a working covariance cannot be factorized."""

    code = "ill_conditioned_covariance"

    def __init__(self, message: str, cluster: int, **context: Any):
        self.cluster = cluster
        super().__init__(f"{message} (cluster {cluster})", cluster=cluster, **context)


class SingularInformationError(SplineGeeError, ArithmeticError):
    """Raised when an information or bread matrix is singular."""

    code = "singular_information"


class RankDeficientDesignError(SingularInformationError):
    """Raised when the joint spline design is rank deficient."""

    code = "rank_deficient_design"


class NotIdentifiableError(SplineGeeError, ValueError):
    """Raised when the correlation parameter cannot be estimated."""

    code = "not_identifiable"


class BandDegreeError(SplineGeeError, ValueError):
    """Raised when a simultaneous band is requested for non-linear splines."""

    code = "band_requires_linear_splines"


class SelectionFailedError(SplineGeeError, RuntimeError):
    """Raised when every knot-count candidate failed to fit."""

    code = "selection_failed"


class FeasibilityError(SplineGeeError, ValueError):
    """Raised for binary marginals and correlations outside the Fréchet bounds."""

    code = "infeasible_correlation"


class DataFormatError(SplineGeeError, IOError):
    """Base class for CSV ingestion errors."""

    code = "data_format"


class MissingColumnError(DataFormatError):
    code = "missing_column"


class NonNumericCellError(DataFormatError):
    code = "non_numeric_cell"


class EmptyClusterError(DataFormatError):
    code = "empty_cluster"


class CovariateRangeError(DataFormatError):
    code = "covariate_out_of_range"


class ConfigError(SplineGeeError, ValueError):
    """Raised for inconsistent run configurations."""

    code = "invalid_config"


class ReplicationFailureError(SplineGeeError, RuntimeError):
    """Raised when too many Monte Carlo replications were excluded."""

    code = "replication_failures"
