# this_file: spline_gee/spline_basis.py
"""
Equally spaced B-spline bases and their empirically centered versions.

The raw basis of degree q with N interior knots has N + q + 1 functions
b_1..b_{N+q+1}. The centered basis drops one degree of freedom by centering
b_2..b_{N+q+1} against b_1, so each centered function has zero empirical mean
over the covariate sample it was fitted on:

    B_s(z) = sqrt(N) * [b_{s+1}(z) - r_s * b_1(z)],   r_s = mean(b_{s+1}) / mean(b_1)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .exceptions import DegenerateDesignError, DomainError, ParameterDomainError

ArrayLike = Union[float, np.ndarray, list]


@dataclass(frozen=True, eq=False)
class KnotVector:
    """Clamped knot sequence on [0, 1] with equally spaced interior knots."""

    degree: int
    interior_count: int
    knots: np.ndarray

    @property
    def dimension(self) -> int:
        """Number of raw B-spline functions, N + q + 1."""
        return self.interior_count + self.degree + 1

    @property
    def interior(self) -> np.ndarray:
        q = self.degree
        return self.knots[q + 1 : q + 1 + self.interior_count]


@dataclass(frozen=True, eq=False)
class CenteredSplineBasis:
    """Centered B-spline basis fitted to one additive covariate."""

    knot_vector: KnotVector
    centering_ratios: np.ndarray
    scale: float

    @property
    def dimension(self) -> int:
        return self.knot_vector.dimension - 1

    @property
    def degree(self) -> int:
        return self.knot_vector.degree

    @property
    def interior_count(self) -> int:
        return self.knot_vector.interior_count

    def evaluate(self, z: ArrayLike) -> np.ndarray:
        return eval_centered(self, z)


def build_knots(n_interior: int, degree: int) -> KnotVector:
    """Build t_{-q}=...=t_0=0 < t_1 < ... < t_N < 1=t_{N+1}=...=t_{N+q+1}."""
    if int(n_interior) != n_interior or n_interior < 1:
        raise ParameterDomainError(
            f"Number of interior knots must be an integer >= 1, got {n_interior}",
            n_interior=n_interior,
        )
    if int(degree) != degree or degree < 1:
        raise ParameterDomainError(
            f"Spline degree must be an integer >= 1, got {degree}", degree=degree
        )
    n_interior = int(n_interior)
    degree = int(degree)
    interior = np.arange(1, n_interior + 1, dtype=float) / (n_interior + 1)
    knots = np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])
    knots.setflags(write=False)
    return KnotVector(degree=degree, interior_count=n_interior, knots=knots)


def _as_unit_interval(z: ArrayLike) -> np.ndarray:
    values = np.atleast_1d(np.asarray(z, dtype=float))
    if values.ndim != 1:
        values = values.ravel()
    bad = ~np.isfinite(values) | (values < 0.0) | (values > 1.0)
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        raise DomainError(
            f"Covariate value {values[first]!r} is outside [0, 1]",
            index=first,
            value=float(values[first]),
        )
    return values


def eval_raw(knots: KnotVector, z: ArrayLike) -> np.ndarray:
    """
    Evaluate all raw B-splines at z by the Cox-de Boor recursion.

    Returns a vector of length N + q + 1 for scalar z, otherwise a
    (len(z), N + q + 1) matrix. The final interval [t_N, 1] is right-closed
    and 0/0 is taken as 0 at repeated knots.
    """
    scalar = np.ndim(z) == 0
    values = _as_unit_interval(z)
    t = knots.knots
    q = knots.degree
    zc = values[:, None]

    basis = ((t[:-1] <= zc) & (zc < t[1:])).astype(float)
    basis[values == 1.0, q + knots.interior_count] = 1.0

    for k in range(1, q + 1):
        left_den = t[k:-1] - t[: -k - 1]
        right_den = t[k + 1 :] - t[1:-k]
        left = np.divide(
            zc - t[: -k - 1],
            left_den,
            out=np.zeros((values.size, left_den.size)),
            where=left_den > 0,
        )
        right = np.divide(
            t[k + 1 :] - zc,
            right_den,
            out=np.zeros((values.size, right_den.size)),
            where=right_den > 0,
        )
        basis = left * basis[:, :-1] + right * basis[:, 1:]

    return basis[0] if scalar else basis


def fit_centering(knots: KnotVector, training_z: ArrayLike) -> CenteredSplineBasis:
    """Estimate the centering ratios from the observed covariate sample."""
    values = _as_unit_interval(training_z)
    if values.size == 0:
        raise DegenerateDesignError("Cannot center a spline basis on an empty sample")
    means = eval_raw(knots, values).mean(axis=0)
    if not means[0] > 0.0:
        raise DegenerateDesignError(
            "No covariate values near the left boundary: "
            "the first B-spline has zero empirical mean",
            first_knot=float(knots.knots[knots.degree + 1]),
        )
    ratios = means[1:] / means[0]
    ratios.setflags(write=False)
    return CenteredSplineBasis(
        knot_vector=knots,
        centering_ratios=ratios,
        scale=float(np.sqrt(knots.interior_count)),
    )


def eval_centered(basis: CenteredSplineBasis, z: ArrayLike) -> np.ndarray:
    raw = eval_raw(basis.knot_vector, z)
    return basis.scale * (raw[..., 1:] - raw[..., :1] * basis.centering_ratios)
