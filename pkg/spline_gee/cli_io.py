# this_file: spline_gee/cli_io.py
"""
CSV ingestion, run configuration and report emission.

Input CSVs are comma-separated with a header; rows are grouped by the cluster
column (ids sorted as strings, row order kept within a cluster). Outputs are
``report.json`` and ``curves_<l>.csv`` for fits, ``mc_report.json`` and
``mc_table.txt`` for simulations.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from .dataset import Cluster, ClusteredDataset
from .exceptions import (
    ConfigError,
    CovariateRangeError,
    DataFormatError,
    MissingColumnError,
    NonNumericCellError,
    SplineGeeError,
)
from .gee_solver import SolverControl
from .inference import BandSpec, linearity_test, normal_multiplier
from .marginal_model import LINK_KINDS, STRUCTURES, LinkFamily, WorkingCorrelation
from .pipeline import TwoStepResult, fit_two_step
from .simgen import McReport, render_tables
from .two_step import GeeModelSpec

PathLike = Union[str, os.PathLike]

REPORT_FILE = "report.json"
MC_REPORT_FILE = "mc_report.json"
MC_TABLE_FILE = "mc_table.txt"
CURVE_COLUMNS = ("z", "theta", "pointwise_lower", "pointwise_upper", "band_lower", "band_upper")


@dataclass(frozen=True)
class RunConfig:
    """Everything ``sgee fit`` needs; JSON keys match the field names."""

    data: Optional[str] = None
    cluster_column: str = "cluster"
    response: str = "y"
    linear: Tuple[str, ...] = ()
    additive: Tuple[str, ...] = ()
    link: str = "gaussian"
    correlation: str = "ind"
    alpha: Optional[float] = None
    degree: int = 3
    smoothness: Optional[int] = None
    n_knots: Optional[int] = None
    ns_knots: Optional[Tuple[Optional[int], ...]] = None
    level: float = 0.95
    band: str = "pointwise"
    rescale: bool = False
    grid_size: int = 201
    weighted_projection: bool = True
    max_iter: int = 100
    tol: float = 1e-8
    out: str = "sgee-out"
    threads: Optional[int] = None

    @classmethod
    def from_json(cls, path: Optional[PathLike] = None, **overrides: Any) -> "RunConfig":
        """Load a JSON config; non-None ``overrides`` win over file values."""
        values: Dict[str, Any] = {}
        if path is not None:
            try:
                values = json.loads(Path(path).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"Cannot read config {path}: {exc}", path=str(path)) from exc
            if not isinstance(values, dict):
                raise ConfigError("Config JSON must be an object", path=str(path))
        values.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(unknown)}", keys=unknown)
        for key in ("linear", "additive"):
            if key in values:
                values[key] = _as_names(values[key])
        if values.get("ns_knots") is not None:
            raw = values["ns_knots"]
            raw = [raw] if isinstance(raw, (int, float, str)) else raw
            values["ns_knots"] = tuple(None if v in (None, "auto") else int(v) for v in raw)
        return cls(**values).validate()

    def validate(self) -> "RunConfig":
        overlap = set(self.linear) & set(self.additive)
        if overlap:
            raise ConfigError(
                f"Columns used both linearly and additively: {sorted(overlap)}",
                columns=sorted(overlap),
            )
        reserved = {self.cluster_column, self.response} & (set(self.linear) | set(self.additive))
        if reserved:
            raise ConfigError(f"Cluster/response columns cannot be covariates: {sorted(reserved)}")
        if self.link not in LINK_KINDS:
            raise ConfigError(
                f"Unknown link '{self.link}', expected one of {LINK_KINDS}", link=self.link
            )
        if self.correlation not in STRUCTURES:
            raise ConfigError(
                f"Unknown correlation '{self.correlation}', expected one of {STRUCTURES}",
                correlation=self.correlation,
            )
        if not 0.0 < self.level < 1.0:
            raise ConfigError(
                f"Confidence level must lie in (0, 1), got {self.level}", level=self.level
            )
        if self.band not in ("pointwise", "simultaneous"):
            raise ConfigError(f"Unknown band kind '{self.band}'", band=self.band)
        if self.ns_knots is not None and len(self.ns_knots) != len(self.additive):
            raise ConfigError(
                "ns_knots needs one entry per additive column", ns_knots=list(self.ns_knots)
            )
        if self.grid_size < 2:
            raise ConfigError("grid_size must be >= 2", grid_size=self.grid_size)
        return self

    def model_spec(self) -> GeeModelSpec:
        link = LinkFamily.gaussian() if self.link == "gaussian" else LinkFamily.bernoulli()
        alpha = 0.0 if self.alpha is None else float(self.alpha)
        return GeeModelSpec(
            link=link,
            working_corr=WorkingCorrelation(self.correlation, alpha),
            degree=self.degree,
            smoothness=self.smoothness,
            fix_alpha=self.alpha is not None,
            weighted_projection=self.weighted_projection,
        )

    def solver_control(self) -> SolverControl:
        return SolverControl(max_iter=self.max_iter, tol_score=self.tol)

    def band_spec(self) -> BandSpec:
        return BandSpec(level=self.level, kind=self.band)

    def to_dict(self) -> Dict[str, Any]:
        values = dataclasses.asdict(self)
        for key in ("linear", "additive", "ns_knots"):
            if values[key] is not None:
                values[key] = list(values[key])
        return values


def _as_names(value: Any) -> Tuple[str, ...]:
    if value is None:
        return ()
    if isinstance(value, str):
        return tuple(part.strip() for part in value.split(",") if part.strip())
    return tuple(str(v) for v in value)


def _numeric_column(frame: pd.DataFrame, column: str) -> np.ndarray:
    """Parse a text column with float() so that %.17g output round-trips exactly."""
    cells = frame[column].tolist()
    values = np.empty(len(cells))
    for row, cell in enumerate(cells):
        try:
            values[row] = float(cell)
        except ValueError:
            values[row] = np.nan
        if not np.isfinite(values[row]):
            raise NonNumericCellError(
                f"Non-numeric value {cell!r} in column '{column}' at data row {row + 1}",
                row=row + 1,
                column=column,
            )
    return values


def _numeric_block(frame: pd.DataFrame, columns: Sequence[str]) -> np.ndarray:
    if not columns:
        return np.zeros((len(frame), 0))
    return np.column_stack([_numeric_column(frame, c) for c in columns])


def load_csv(path: PathLike, config: RunConfig) -> ClusteredDataset:
    """Read a clustered CSV into a ClusteredDataset, optionally min-max rescaling Z."""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataFormatError(f"Cannot parse {path}: {exc}", path=str(path)) from exc
    except OSError as exc:
        raise ConfigError(f"Cannot read data file {path}: {exc}", path=str(path)) from exc
    needed = [config.cluster_column, config.response, *config.linear, *config.additive]
    missing = [c for c in needed if c not in frame.columns]
    if missing:
        raise MissingColumnError(
            f"Missing column(s): {', '.join(missing)}", columns=missing, path=str(path)
        )

    y = _numeric_column(frame, config.response)
    x = _numeric_block(frame, config.linear)
    z = _numeric_block(frame, config.additive)

    z_ranges = None
    if config.rescale and z.shape[1]:
        low, high = z.min(axis=0), z.max(axis=0)
        flat = np.flatnonzero(high <= low)
        if flat.size:
            column = config.additive[int(flat[0])]
            raise CovariateRangeError(
                f"Column '{column}' is constant and cannot be rescaled", column=column
            )
        z = (z - low) / (high - low)
        z_ranges = tuple((float(lo), float(hi)) for lo, hi in zip(low, high))
    else:
        outside = (z < 0.0) | (z > 1.0)
        if outside.any():
            row, col = (int(v) for v in np.argwhere(outside)[0])
            raise CovariateRangeError(
                f"Value {z[row, col]!r} in column '{config.additive[col]}' at data row {row + 1} "
                "is outside [0, 1]; enable rescale",
                row=row + 1,
                column=config.additive[col],
            )

    ids = frame[config.cluster_column].to_numpy()
    clusters = []
    for cluster_id, rows in pd.Series(np.arange(len(frame))).groupby(ids, sort=True):
        index = rows.to_numpy()
        clusters.append(Cluster(str(cluster_id), y[index], x[index], z[index]))
    data = ClusteredDataset(
        clusters=tuple(clusters),
        linear_names=tuple(config.linear),
        additive_names=tuple(config.additive),
        z_ranges=z_ranges,
    )
    logger.info("Loaded {}: {} clusters, {} observations", path, data.n_clusters, data.n_total)
    return data


def save_csv(data: ClusteredDataset, path: PathLike, config: RunConfig) -> Path:
    """Write the stored (ingested-scale) values so that load_csv reproduces ``data`` exactly."""
    columns: Dict[str, Any] = {
        config.cluster_column: np.concatenate([[c.cluster_id] * c.size for c in data.clusters]),
        config.response: np.concatenate([c.y for c in data.clusters]),
    }
    for k, name in enumerate(config.linear):
        columns[name] = np.concatenate([c.x[:, k] for c in data.clusters])
    for k, name in enumerate(config.additive):
        columns[name] = np.concatenate([c.z[:, k] for c in data.clusters])
    path = Path(path)
    pd.DataFrame(columns).to_csv(path, index=False, float_format="%.17g")
    return path


def _dump_json(payload: Dict[str, Any]) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _float_list(values: np.ndarray) -> List[float]:
    return [float(v) for v in np.asarray(values).ravel()]


def build_report(
    result: TwoStepResult, data: ClusteredDataset, config: RunConfig
) -> Dict[str, Any]:
    """JSON-ready fit report with config echo, estimates and per-solve diagnostics."""
    multiplier = normal_multiplier(config.level)
    naive = np.sqrt(np.clip(np.diag(result.sandwich.naive), 0.0, None))
    beta = [
        {
            "name": name,
            "estimate": float(est),
            "se": float(se),
            "naive_se": float(nse),
            "lower": float(est - multiplier * se),
            "upper": float(est + multiplier * se),
        }
        for name, est, se, nse in zip(data.linear_names, result.beta, result.standard_errors, naive)
    ]
    report: Dict[str, Any] = {
        "config": config.to_dict(),
        "n_clusters": data.n_clusters,
        "n_total": data.n_total,
        "link": result.spec.link.kind,
        "working_correlation": result.spec.working_corr.structure,
        "alpha": float(result.alpha),
        "alpha_estimated": bool(result.alpha_estimated),
        "n_knots": result.pilot.n_knots,
        "beta": beta,
        "beta_covariance": result.sandwich.xi_hat.tolist(),
        "pilot": result.pilot.solution.diagnostics(),
    }
    if result.components:
        report["components"] = []
    for comp in result.components:
        entry: Dict[str, Any] = {
            "component": comp.component + 1,
            "name": data.additive_names[comp.component],
            "knot_plan": comp.plan.to_dict(),
            "solver": comp.fit.solution.diagnostics(),
            "curve_file": f"curves_{comp.component + 1}.csv",
        }
        if comp.band_plan is not None and comp.band_fit is not comp.fit:
            entry["band_knot_plan"] = comp.band_plan.to_dict()
            entry["band_solver"] = comp.band_fit.solution.diagnostics()
        report["components"].append(entry)
    return report


def curve_frame(
    result: TwoStepResult, data: ClusteredDataset, component: int, config: RunConfig
) -> pd.DataFrame:
    comp = result.components[component]
    grid = np.linspace(0.0, 1.0, config.grid_size)
    pointwise, band = comp.curves(grid, config.band_spec())
    columns = {
        "z": data.to_original_scale(component, grid),
        "theta": pointwise.estimate,
        "pointwise_lower": pointwise.lower,
        "pointwise_upper": pointwise.upper,
    }
    if band is not None:
        columns["band_lower"] = band.lower
        columns["band_upper"] = band.upper
    return pd.DataFrame(columns)


def write_fit_outputs(
    result: TwoStepResult,
    data: ClusteredDataset,
    config: RunConfig,
    out_dir: Optional[PathLike] = None,
) -> Dict[str, Path]:
    out = Path(out_dir if out_dir is not None else config.out)
    out.mkdir(parents=True, exist_ok=True)
    report = build_report(result, data, config)
    written: Dict[str, Path] = {}
    grid = np.linspace(0.0, 1.0, config.grid_size)
    for comp in result.components:
        name = f"curves_{comp.component + 1}.csv"
        frame = curve_frame(result, data, comp.component, config)
        frame.to_csv(out / name, index=False, float_format="%.17g")
        written[name] = out / name
        if comp.band_fit is not None:
            _, band = comp.curves(grid, config.band_spec())
            test = linearity_test(data, comp.band_fit, band, config.solver_control())
            report["components"][comp.component]["linearity_test"] = {
                "slope": test.slope,
                "center": test.center,
                "escapes_band": test.escapes,
                "max_excess": test.max_excess,
            }
    (out / REPORT_FILE).write_text(_dump_json(report), encoding="utf-8")
    written[REPORT_FILE] = out / REPORT_FILE
    return written


def resolve_threads(threads: Optional[int]) -> int:
    """None means machine parallelism."""
    if threads is None:
        return os.cpu_count() or 1
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}", threads=threads)
    return int(threads)


def run_fit(config: RunConfig) -> Tuple[TwoStepResult, Dict[str, Path]]:
    """load -> fit_two_step -> report.json + curve CSVs."""
    if config.data is None:
        raise ConfigError("No data file given")
    data = load_csv(config.data, config)
    result = fit_two_step(
        data,
        config.model_spec(),
        config.solver_control(),
        n_knots=config.n_knots,
        ns_knots=config.ns_knots,
        band=config.band_spec(),
        threads=resolve_threads(config.threads),
    )
    return result, write_fit_outputs(result, data, config)


def write_mc_outputs(reports: Sequence[McReport], out_dir: PathLike) -> Dict[str, Path]:
    """mc_report.json (one entry per working correlation) and the aligned text tables."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"reports": [report.to_dict() for report in reports]}
    (out / MC_REPORT_FILE).write_text(_dump_json(payload), encoding="utf-8")
    (out / MC_TABLE_FILE).write_text(render_tables(reports), encoding="utf-8")
    return {MC_REPORT_FILE: out / MC_REPORT_FILE, MC_TABLE_FILE: out / MC_TABLE_FILE}


def error_payload(exc: SplineGeeError) -> str:
    return json.dumps(exc.to_dict(), sort_keys=True, default=str)
