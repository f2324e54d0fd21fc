"""
Map Export Utilities
Grayscale parameter-map images, normalized relative-error maps and per-voxel
signal plots
"""
import logging
from pathlib import Path
from typing import Optional

import matplotlib
matplotlib.use('Agg')  # Use non-interactive backend
import matplotlib.pyplot as plt
import numpy as np

logger = logging.getLogger(__name__)

DPI = 100


def normalized_error_map(estimate: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """
    Per-voxel relative error divided by the largest absolute error, so values
    lie in [-1, 1]; NaN where either map is undefined or the truth is zero.
    """
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        error = np.where(truth != 0, (estimate - truth) / truth, np.nan)
    finite = np.isfinite(error)
    if not finite.any():
        return np.full(error.shape, np.nan)
    largest = float(np.max(np.abs(error[finite])))
    if largest == 0:
        return np.where(finite, 0.0, np.nan)
    return np.where(finite, error / largest, np.nan)


def save_map_png(values: np.ndarray, path: Path, title: str = "",
                 cmap: str = "gray", vmin: Optional[float] = None,
                 vmax: Optional[float] = None) -> Path:
    """Render a 2D map; NaN voxels are left blank"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(4, 4))
    try:
        image = ax.imshow(np.ma.masked_invalid(values), cmap=cmap, vmin=vmin, vmax=vmax,
                          interpolation="nearest")
        fig.colorbar(image, ax=ax, fraction=0.046, pad=0.04)
        ax.set_title(title)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.savefig(path, format="png", dpi=DPI, bbox_inches="tight")
    finally:
        plt.close(fig)
    logger.debug(f"Map image written to {path}")
    return path


def save_voxel_plot(times: np.ndarray, measured: np.ndarray, fitted: np.ndarray,
                    path: Path, title: str = "",
                    truth_times: Optional[np.ndarray] = None,
                    truth_curve: Optional[np.ndarray] = None) -> Path:
    """Measured samples, fitted series and (optionally) the dense true curve of one voxel"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    try:
        if truth_curve is not None and truth_times is not None:
            ax.plot(truth_times, truth_curve, color="0.6", linestyle="--", label="ground truth")
        ax.plot(times, measured, "o", color="black", label="measured")
        ax.plot(times, fitted, "-", color="tab:blue", label="fit")
        ax.set_xlabel("time (ms)")
        ax.set_ylabel("PWI signal (a.u.)")
        ax.set_title(title)
        ax.legend()
        fig.savefig(path, format="png", dpi=DPI, bbox_inches="tight")
    finally:
        plt.close(fig)
    logger.debug(f"Voxel plot written to {path}")
    return path
