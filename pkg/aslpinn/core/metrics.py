"""
Evaluation Metrics Module
Relative error, convergence accounting, Laplacian variance, signal MSE and
assembly of per-method reports
"""
import logging
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.ndimage import laplace

from aslpinn.config import METHODS
from aslpinn.core.asl_model import evaluate_signal
from aslpinn.exceptions import DatasetError, UndefinedMetricError, UsageError
from aslpinn.models.grid import VoxelGrid
from aslpinn.models.results import MetricsReport, RoiFit, Stat, VoxelDetail

logger = logging.getLogger(__name__)

CONVERGENCE_FACTOR = 10.0
PARAMETERS = ("cbf", "at", "t1b")
MAPPED_PARAMETERS = ("cbf", "at")


def relative_error(predicted: float, target: float) -> float:
    """(predicted - target) / target * 100"""
    if target == 0:
        raise UndefinedMetricError("Relative error is undefined for a zero target")
    return (predicted - target) / target * 100.0


def convergence_flag(cbf_est: float, cbf_truth: float) -> bool:
    """True unless the estimate is off by more than one order of magnitude"""
    if cbf_truth == 0:
        raise UndefinedMetricError("Convergence is undefined for a zero cbf truth")
    ratio = cbf_est / cbf_truth
    return bool(np.isfinite(ratio) and 1.0 / CONVERGENCE_FACTOR <= ratio <= CONVERGENCE_FACTOR)


def convergence_rate(flags: Iterable[bool]) -> float:
    """|total - failed| / total * 100"""
    flags = list(flags)
    if not flags:
        raise UndefinedMetricError("Convergence rate of an empty set")
    failed = sum(1 for flag in flags if not flag)
    return abs(len(flags) - failed) / len(flags) * 100.0


def laplacian_variance(values: np.ndarray, mask: np.ndarray) -> float:
    """
    Population variance of the 5-point Laplacian over voxels whose whole
    4-neighbourhood lies in the mask.
    """
    values = np.asarray(values, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if values.shape != mask.shape:
        raise UsageError(f"Map shape {values.shape} != mask shape {mask.shape}")
    if not np.all(np.isfinite(values[mask])):
        raise UsageError("Map must be finite on every masked voxel")
    interior = np.zeros_like(mask)
    interior[1:-1, 1:-1] = (
        mask[1:-1, 1:-1] & mask[:-2, 1:-1] & mask[2:, 1:-1] & mask[1:-1, :-2] & mask[1:-1, 2:]
    )
    if not interior.any():
        raise UndefinedMetricError("No voxel has a complete in-mask neighbourhood")
    filtered = laplace(np.where(mask, values, 0.0), mode="constant")
    return float(np.var(filtered[interior]))


def signal_mse(predicted: Sequence[float], reference: Sequence[float]) -> float:
    predicted = np.asarray(predicted, dtype=float).reshape(-1)
    reference = np.asarray(reference, dtype=float).reshape(-1)
    if predicted.shape != reference.shape:
        raise UsageError(f"Series lengths differ: {predicted.size} vs {reference.size}")
    return float(np.mean((predicted - reference) ** 2))


def _stat(values: Sequence[float]) -> Stat:
    values = [v for v in values if v is not None]
    if not values:
        return Stat()
    return Stat(mean=float(np.mean(values)), std=float(np.std(values)))


def _aggregate(method: str, noise_std: Optional[float], details: List[VoxelDetail],
               laplacians: Dict[str, List[float]], t1b_values: List[float],
               n_datasets: int) -> MetricsReport:
    """Statistics over voxel details; failed and undefined voxels are left out"""
    defined = [d for d in details if d.converged is not None]
    included = [d for d in defined if d.converged]
    n_failed = len(defined) - len(included)
    return MetricsReport(
        method=method,
        noise_std=noise_std,
        n_datasets=n_datasets,
        n_voxels=len(details),
        n_failed=n_failed,
        n_fit_errors=sum(1 for d in details if d.fit_error),
        n_undefined=len(details) - len(defined),
        convergence_rate=convergence_rate([d.converged for d in defined]) if defined else 100.0,
        relative_error={
            name: _stat([getattr(d, f"{name}_re") for d in included]) for name in PARAMETERS
        },
        laplacian_variance={name: _stat(laplacians.get(name, [])) for name in MAPPED_PARAMETERS},
        signal_mse=_stat([d.signal_mse for d in included]),
        subject_t1b=float(np.mean(t1b_values)) if t1b_values else None,
        details=details,
    )


def build_report(roi: RoiFit, grid: VoxelGrid, noise_std: Optional[float] = None) -> MetricsReport:
    """
    Score one region-wide fit against the grid's ground truth. Signal MSE is
    taken against the noiseless closed-form series of the true parameters.
    """
    truth = grid.ground_truth
    if truth is None:
        raise DatasetError("Dataset has no ground truth to evaluate against")
    times = grid.spec.times_array
    details: List[VoxelDetail] = []
    for index in grid.masked_indices():
        row, col = index
        result = roi.results.get(index)
        if result is None:
            details.append(VoxelDetail(row=row, col=col, converged=False, fit_error=True))
            continue
        true_params = truth.params_at(index, tau=result.params.tau)
        try:
            converged = convergence_flag(result.params.cbf, true_params.cbf)
        except UndefinedMetricError:
            details.append(VoxelDetail(row=row, col=col, converged=None))
            continue
        details.append(VoxelDetail(
            row=row,
            col=col,
            converged=converged,
            cbf_re=relative_error(result.params.cbf, true_params.cbf),
            at_re=relative_error(result.params.at, true_params.at),
            t1b_re=relative_error(result.params.t1b, true_params.t1b),
            signal_mse=signal_mse(result.predicted_signal, evaluate_signal(true_params, times)),
        ))

    # failed voxels are dropped from the maps before filtering
    keep = np.zeros(grid.mask.shape, dtype=bool)
    for d in details:
        keep[d.row, d.col] = bool(d.converged)
    laplacians: Dict[str, List[float]] = {}
    for name, values in (("cbf", roi.cbf_map), ("at", roi.at_map)):
        try:
            laplacians[name] = [laplacian_variance(values, keep)]
        except UndefinedMetricError as e:
            logger.warning(f"[{roi.method}] Laplacian variance of {name} map undefined: {e}")
            laplacians[name] = []

    report = _aggregate(roi.method, noise_std, details, laplacians,
                        [roi.t1b] if roi.t1b is not None else [], n_datasets=1)
    logger.info(
        f"[{roi.method}] convergence {report.convergence_rate:.1f}%, "
        f"cbf RE {report.relative_error['cbf'].mean}, failed {report.n_failed}/{report.n_voxels}"
    )
    return report


def combine_reports(reports: Sequence[MetricsReport]) -> List[MetricsReport]:
    """
    Group per-dataset reports by (method, noise_std). Voxel statistics are
    pooled over all voxels of the group; Laplacian variance is summarized
    across datasets.
    """
    groups: Dict[Tuple[str, Optional[float]], List[MetricsReport]] = {}
    for report in reports:
        groups.setdefault((report.method, report.noise_std), []).append(report)

    def order(key):
        method, noise = key
        rank = METHODS.index(method) if method in METHODS else len(METHODS)
        return (noise is not None, noise or 0.0, rank, method)

    combined = []
    for key in sorted(groups, key=order):
        members = groups[key]
        laplacians = {
            name: [r.laplacian_variance[name].mean for r in members
                   if name in r.laplacian_variance and r.laplacian_variance[name].mean is not None]
            for name in MAPPED_PARAMETERS
        }
        combined.append(_aggregate(
            method=key[0],
            noise_std=key[1],
            details=[d for r in members for d in r.details],
            laplacians=laplacians,
            t1b_values=[r.subject_t1b for r in members if r.subject_t1b is not None],
            n_datasets=len(members),
        ))
    return combined


def _fmt(stat: Stat, digits: int = 3) -> str:
    if stat.mean is None:
        return "n/a"
    return f"{stat.mean:.{digits}g} ± {stat.std:.{digits}g}"


def report_table(reports: Sequence[MetricsReport],
                 timings: Optional[Dict[str, float]] = None) -> pd.DataFrame:
    """One row per report; timings maps method to mean seconds per voxel"""
    rows = []
    for r in reports:
        row = {
            "method": r.method,
            "noise_std": "-" if r.noise_std is None else f"{r.noise_std:g}",
            "datasets": r.n_datasets,
            "voxels": r.n_voxels,
            "converged_%": f"{r.convergence_rate:.1f}",
            "RE_cbf_%": _fmt(r.relative_error["cbf"]),
            "RE_at_%": _fmt(r.relative_error["at"]),
            "RE_t1b_%": _fmt(r.relative_error["t1b"]),
            "LapVar_cbf": _fmt(r.laplacian_variance["cbf"]),
            "LapVar_at": _fmt(r.laplacian_variance["at"]),
            "signal_MSE": _fmt(r.signal_mse),
            "t1b_ms": "n/a" if r.subject_t1b is None else f"{r.subject_t1b:.1f}",
        }
        if timings:
            seconds = timings.get(r.method)
            row["s/voxel"] = "n/a" if seconds is None else f"{seconds:.2f}"
        rows.append(row)
    return pd.DataFrame(rows)


def render_report_text(reports: Sequence[MetricsReport],
                       timings: Optional[Dict[str, float]] = None) -> str:
    if not reports:
        return "No results\n"
    return report_table(reports, timings).to_string(index=False) + "\n"
