# this_file: spline_gee/dataset.py
"""Clustered longitudinal data: responses Y_i, linear covariates X_i, additive covariates Z_i."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .exceptions import CovariateRangeError, EmptyClusterError, ParameterDomainError


@dataclass(frozen=True, eq=False)
class Cluster:
    cluster_id: str
    y: np.ndarray
    x: np.ndarray
    z: np.ndarray

    @property
    def size(self) -> int:
        return self.y.size


@dataclass(frozen=True, eq=False)
class ClusteredDataset:
    """
    Observations {(Y_ij, X_ij, Z_ij)} grouped by cluster.

    ``z_ranges`` holds the (low, high) affine map per additive column when the
    covariates were rescaled to [0, 1] on ingestion; ``None`` means the stored
    values are already on their original scale.
    """

    clusters: Tuple[Cluster, ...]
    linear_names: Tuple[str, ...] = ()
    additive_names: Tuple[str, ...] = ()
    z_ranges: Optional[Tuple[Tuple[float, float], ...]] = field(default=None)

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_arrays(
        cls,
        y: Sequence[np.ndarray],
        x: Sequence[np.ndarray],
        z: Sequence[np.ndarray],
        ids: Optional[Sequence[str]] = None,
        linear_names: Optional[Sequence[str]] = None,
        additive_names: Optional[Sequence[str]] = None,
    ) -> "ClusteredDataset":
        if ids is None:
            ids = [str(i) for i in range(len(y))]
        clusters = []
        for cid, yi, xi, zi in zip(ids, y, x, z):
            yi = np.asarray(yi, dtype=float).ravel()
            m = yi.size
            xi = np.asarray(xi, dtype=float)
            xi = xi.reshape(m, -1) if xi.size else np.zeros((m, 0))
            zi = np.asarray(zi, dtype=float)
            zi = zi.reshape(m, -1) if zi.size else np.zeros((m, 0))
            clusters.append(Cluster(str(cid), yi, xi, zi))
        d1 = clusters[0].x.shape[1] if clusters else 0
        d2 = clusters[0].z.shape[1] if clusters else 0
        if linear_names is None:
            linear_names = [f"x{k + 1}" for k in range(d1)]
        if additive_names is None:
            additive_names = [f"z{k + 1}" for k in range(d2)]
        return cls(
            clusters=tuple(clusters),
            linear_names=tuple(linear_names),
            additive_names=tuple(additive_names),
        )

    def validate(self) -> None:
        if not self.clusters:
            raise EmptyClusterError("Dataset contains no clusters")
        d1 = self.clusters[0].x.shape[1]
        d2 = self.clusters[0].z.shape[1]
        for cluster in self.clusters:
            if cluster.size < 1:
                raise EmptyClusterError(
                    f"Cluster '{cluster.cluster_id}' is empty", cluster=cluster.cluster_id
                )
            if cluster.x.shape != (cluster.size, d1) or cluster.z.shape != (cluster.size, d2):
                raise ParameterDomainError(
                    f"Cluster '{cluster.cluster_id}' has inconsistent column counts",
                    cluster=cluster.cluster_id,
                )
            outside = (cluster.z < 0.0) | (cluster.z > 1.0) | ~np.isfinite(cluster.z)
            if outside.any():
                row, col = (int(v) for v in np.argwhere(outside)[0])
                raise CovariateRangeError(
                    f"Additive covariate {cluster.z[row, col]!r} outside [0, 1]",
                    cluster=cluster.cluster_id,
                    row=row,
                    column=col,
                )

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def n_total(self) -> int:
        return int(sum(c.size for c in self.clusters))

    @property
    def linear_dim(self) -> int:
        return self.clusters[0].x.shape[1]

    @property
    def additive_dim(self) -> int:
        return self.clusters[0].z.shape[1]

    @property
    def cluster_sizes(self) -> np.ndarray:
        return np.array([c.size for c in self.clusters])

    @property
    def max_cluster_size(self) -> int:
        return int(self.cluster_sizes.max())

    def stacked_z(self, component: int) -> np.ndarray:
        """All observed values of additive covariate ``component`` (0-based)."""
        return np.concatenate([c.z[:, component] for c in self.clusters])

    def to_original_scale(self, component: int, z: np.ndarray) -> np.ndarray:
        if self.z_ranges is None:
            return np.asarray(z, dtype=float)
        low, high = self.z_ranges[component]
        return low + (high - low) * np.asarray(z, dtype=float)
