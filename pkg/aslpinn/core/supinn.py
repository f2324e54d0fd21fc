"""
SUPINN Module
Spatial-uncertainty data weights, random branch-voxel selection and the
multi-branch fit in which every branch has its own cbf/at but t1b is shared
"""
import logging
import time
from typing import Optional

import numpy as np

from aslpinn.config import TrainConfig
from aslpinn.core.network import Parameter
from aslpinn.core.pinn_fit import branch_result, make_branch, train_branches
from aslpinn.exceptions import DatasetError
from aslpinn.models.grid import VoxelGrid, VoxelIndex
from aslpinn.models.results import BranchSelection, SupinnResult

logger = logging.getLogger(__name__)

MIN_WEIGHT = 0.1
STD_FLOOR = 1e-9

NEIGHBOUR_OFFSETS = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]


def neighbourhood_std(grid: VoxelGrid, voxel: VoxelIndex) -> Optional[np.ndarray]:
    """
    Per-timepoint population std of the in-mask 8-connected neighbours
    (centre excluded); None when the voxel has no such neighbour.
    """
    row, col = voxel
    samples = [
        grid.signal[row + dr, col + dc]
        for dr, dc in NEIGHBOUR_OFFSETS
        if grid.contains((row + dr, col + dc))
    ]
    if not samples:
        return None
    return np.std(np.vstack(samples), axis=0)


def scale_weights(raw: np.ndarray) -> np.ndarray:
    """Map raw inverse-std weights linearly so max -> 1 and min -> 0.1"""
    lo, hi = float(raw.min()), float(raw.max())
    if hi == lo:
        return np.ones_like(raw)
    return MIN_WEIGHT + (1.0 - MIN_WEIGHT) * (raw - lo) / (hi - lo)


def compute_spatial_weights(grid: VoxelGrid, voxel: VoxelIndex) -> np.ndarray:
    """Per-timepoint data weights of a voxel from its neighbourhood uncertainty"""
    if not grid.contains(voxel):
        raise DatasetError(f"Voxel {voxel} is outside the mask")
    std = neighbourhood_std(grid, voxel)
    if std is None:
        logger.debug(f"Voxel {voxel} has no in-mask neighbours; using unit weights")
        return np.ones(grid.spec.n_points)
    raw = 1.0 / np.maximum(std, STD_FLOOR)
    return scale_weights(raw)


def select_branch_voxels(grid: VoxelGrid, target: VoxelIndex, seed: int,
                         n_branches: int = 3) -> BranchSelection:
    """Target plus n_branches - 1 distinct companions drawn uniformly from the mask"""
    if grid.n_masked < n_branches:
        raise DatasetError(f"Mask has {grid.n_masked} voxels, {n_branches} branches need more")
    if not grid.contains(target):
        raise DatasetError(f"Target voxel {target} is outside the mask")
    candidates = [index for index in grid.masked_indices() if index != target]
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(candidates), size=n_branches - 1, replace=False)
    companions = [candidates[int(i)] for i in picks]
    return BranchSelection(target=target, companions=companions, seed=seed)


def fit_supinn(grid: VoxelGrid, selection: BranchSelection,
               cfg: TrainConfig = TrainConfig()) -> SupinnResult:
    """
    Joint fit of one branch per selected voxel. Each branch weights its data
    loss with its own spatial weights; a single t1b trainable enters every
    branch's ODE residual; the total loss is the sum of branch losses.
    """
    voxels = selection.voxels
    if len(set(voxels)) != len(voxels) or not all(grid.contains(v) for v in voxels):
        raise DatasetError(f"Invalid branch selection {voxels}")
    started = time.perf_counter()
    shared_t1b = Parameter("t1b", cfg.init_t1b)
    branches = [
        make_branch(
            grid.series(voxel),
            grid.spec,
            cfg,
            weights=compute_spatial_weights(grid, voxel),
            shared_t1b=shared_t1b,
            prefix=f"branch{i}.",
        )
        for i, voxel in enumerate(voxels)
    ]
    history = train_branches(branches, grid.spec, cfg, label=f"supinn{selection.target}")
    wall_time = time.perf_counter() - started
    results = [branch_result(branch, grid.spec, history, wall_time) for branch in branches]
    return SupinnResult(
        selection=selection,
        branches=results,
        t1b=shared_t1b.value,
        loss_history=history,
        wall_time=wall_time,
    )


def fit_roi_supinn(grid: VoxelGrid, cfg: TrainConfig = TrainConfig(), jobs: int = 1):
    """
    One SUPINN run per masked voxel with that voxel as target; maps read each
    voxel from its own branch and the subject t1b is the mean of the runs'
    shared estimates
    """
    from aslpinn.core.pipeline import fit_roi

    return fit_roi(grid, "supinn", train=cfg, seed=cfg.seed, jobs=jobs)


def branch_seed(seed: int, voxel_flat_index: int) -> int:
    """Companion-selection seed of one target voxel"""
    return int(np.random.SeedSequence([seed, voxel_flat_index]).generate_state(1)[0])
