"""
ROI Pipeline Module
Fits every masked voxel of a grid with one of the four methods, one task per
voxel, optionally across a process pool
"""
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from aslpinn.config import METHODS, LsfConfig, TrainConfig, settings
from aslpinn.core.lsf_fit import fit_lsf_multi, fit_voxel_lsf
from aslpinn.core.pinn_fit import fit_voxel_pinn
from aslpinn.core.supinn import branch_seed, fit_supinn, select_branch_voxels
from aslpinn.exceptions import AslPinnError, UsageError
from aslpinn.models.grid import VoxelGrid, VoxelIndex
from aslpinn.models.results import FitResult, RoiFit

logger = logging.getLogger(__name__)


@dataclass
class VoxelOutcome:
    index: VoxelIndex
    result: Optional[FitResult] = None
    error: Optional[str] = None
    shared_t1b: Optional[float] = None


def fit_one_voxel(grid: VoxelGrid, method: str, index: VoxelIndex, train: TrainConfig,
                  lsf: LsfConfig, seed: int) -> VoxelOutcome:
    """Fit a single target voxel; library errors become a recorded failure"""
    voxel_seed = branch_seed(seed, grid.flat_index(index))
    try:
        if method == "lsf":
            result = fit_voxel_lsf(grid.series(index), grid.spec,
                                   lsf.model_copy(update={"mode": "free-t1b"}))
            return VoxelOutcome(index, result=result)
        if method == "lsf-multi":
            selection = select_branch_voxels(grid, index, voxel_seed, n_branches=train.n_branches)
            return VoxelOutcome(index, result=fit_lsf_multi(grid, selection, lsf))
        voxel_train = train.model_copy(update={"seed": voxel_seed})
        if method == "pinn":
            return VoxelOutcome(index, result=fit_voxel_pinn(grid.series(index), grid.spec, voxel_train))
        selection = select_branch_voxels(grid, index, voxel_seed, n_branches=train.n_branches)
        fit = fit_supinn(grid, selection, voxel_train)
        return VoxelOutcome(index, result=fit.target, shared_t1b=fit.t1b)
    except AslPinnError as e:
        logger.warning(f"[{method}] voxel {index} failed: {e}")
        return VoxelOutcome(index, error=f"{type(e).__name__}: {e}")


def fit_roi(grid: VoxelGrid, method: str, train: Optional[TrainConfig] = None,
            lsf: Optional[LsfConfig] = None, seed: int = 0,
            jobs: Optional[int] = None) -> RoiFit:
    """
    Fit every masked voxel with the given method.

    Results are independent of jobs and of completion order: each voxel's
    seed is derived from (seed, flat voxel index) and outcomes are gathered
    in row-major order. For supinn and lsf-multi every voxel is the target
    of its own run; the subject t1b is the mean t1b over successful voxels.
    """
    if method not in METHODS:
        raise UsageError(f"Unknown method '{method}' (expected one of {', '.join(METHODS)})")
    train = train or TrainConfig()
    lsf = lsf or LsfConfig()
    roi = RoiFit(method=method, shape=grid.mask.shape)
    indices = grid.masked_indices()
    if not indices:
        logger.info(f"[{method}] empty mask, nothing to fit")
        return roi

    workers = min(settings.resolved_jobs(jobs), len(indices))
    logger.info(f"[{method}] fitting {len(indices)} voxels with {workers} worker(s)")
    started = time.perf_counter()
    if workers == 1:
        outcomes = [fit_one_voxel(grid, method, index, train, lsf, seed) for index in indices]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(fit_one_voxel, grid, method, index, train, lsf, seed)
                       for index in indices]
            outcomes = [future.result() for future in futures]

    shared: List[float] = []
    for outcome in outcomes:
        if outcome.result is None:
            roi.failures[outcome.index] = outcome.error or "unknown error"
            continue
        roi.results[outcome.index] = outcome.result
        shared.append(outcome.shared_t1b if outcome.shared_t1b is not None
                      else outcome.result.params.t1b)
    roi.t1b = float(np.mean(shared)) if shared else None
    logger.info(
        f"[{method}] done in {time.perf_counter() - started:.1f}s: "
        f"{len(roi.results)} fitted, {len(roi.failures)} failed"
    )
    return roi
