"""
CLI Commands
generate, fit, evaluate and export-maps; each returns a summary dictionary
that main() prints
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from aslpinn.config import RunConfig
from aslpinn.core.asl_model import evaluate_signal
from aslpinn.core.dataset_io import (
    load_dataset,
    load_results,
    save_dataset,
    save_results,
    write_map_csv,
)
from aslpinn.core.metrics import build_report, combine_reports, render_report_text
from aslpinn.core.phantom import generate_phantom, noise_std_of
from aslpinn.core.pipeline import fit_roi
from aslpinn.exceptions import DatasetError, UsageError
from aslpinn.models.grid import VoxelIndex
from aslpinn.utils.map_export import normalized_error_map, save_map_png, save_voxel_plot

logger = logging.getLogger(__name__)

RESULTS_FILE = "results.json"
TIMINGS_FILE = "timings.json"
REPORT_JSON = "report.json"
REPORT_TEXT = "report.txt"
MAP_NAMES = ("cbf", "at", "t1b")


def sweep_path(output: Path, noise_std: float) -> Path:
    """dataset.json -> dataset_noise0.3.json"""
    return output.with_name(f"{output.stem}_noise{noise_std:g}{output.suffix or '.json'}")


def cmd_generate(cfg: RunConfig, output: Path) -> Dict[str, Any]:
    """Write one phantom dataset, or one per noise level of the sweep"""
    if cfg.seed is None:
        raise UsageError('generate needs --seed or a top-level "seed" in the config file')
    phantom = cfg.phantom.model_copy(update={"seed": cfg.seed})
    output = Path(output)

    if cfg.noise_sweep:
        targets = [(sweep_path(output, std), phantom.model_copy(update={"noise_std": std}))
                   for std in cfg.noise_sweep]
    else:
        targets = [(output, phantom)]

    files = []
    grid = None
    for path, phantom_cfg in targets:
        grid = generate_phantom(phantom_cfg)
        files.append(str(save_dataset(grid, path)))

    return {
        "files": files,
        "width": grid.width,
        "height": grid.height,
        "n_masked": grid.n_masked,
        "n_points": grid.spec.n_points,
        "t1b": grid.ground_truth.t1b,
        "seed": phantom.seed,
        "peak_signal": grid.metadata.get("peak_signal"),
    }


def cmd_fit(cfg: RunConfig, dataset: Path, output_dir: Path) -> Dict[str, Any]:
    """
    Fit every masked voxel and write results.json, one CSV per parameter map
    and timings.json. Per-voxel failures are recorded, not raised.
    """
    if cfg.method is None:
        raise UsageError("fit needs --method (lsf, lsf-multi, pinn or supinn)")
    if cfg.seed is None:
        raise UsageError('fit needs --seed or a top-level "seed" in the config file')
    seed = cfg.seed
    train = cfg.train.model_copy(update={"seed": seed})
    grid = load_dataset(dataset)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    roi = fit_roi(grid, cfg.method, train=train, lsf=cfg.lsf, seed=seed, jobs=cfg.jobs)

    save_results(roi, output_dir / RESULTS_FILE, seed=seed, history_stride=train.history_stride)
    maps = {"cbf": roi.cbf_map, "at": roi.at_map, "t1b": roi.t1b_map}
    for name, values in maps.items():
        write_map_csv(values, output_dir / f"{name}_map.csv")

    per_voxel = {f"{row},{col}": result.wall_time for (row, col), result in sorted(roi.results.items())}
    timings = {
        "method": roi.method,
        "per_voxel": per_voxel,
        "mean_per_voxel": float(np.mean(list(per_voxel.values()))) if per_voxel else None,
    }
    (output_dir / TIMINGS_FILE).write_text(json.dumps(timings, indent=1), encoding="utf-8")

    if roi.failures:
        logger.warning(f"{len(roi.failures)} voxel fit(s) failed; see {output_dir / RESULTS_FILE}")
    return {
        "method": roi.method,
        "seed": seed,
        "output_dir": str(output_dir),
        "n_fitted": len(roi.results),
        "n_failed": len(roi.failures),
        "t1b": roi.t1b,
    }


def resolve_results_path(path: Path) -> Path:
    path = Path(path)
    return path / RESULTS_FILE if path.is_dir() else path


def _read_timing(results_path: Path) -> Optional[Tuple[str, float]]:
    timings_path = results_path.parent / TIMINGS_FILE
    if not timings_path.exists():
        return None
    try:
        timings = json.loads(timings_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        logger.warning(f"Ignoring unreadable {timings_path}: {e}")
        return None
    if timings.get("mean_per_voxel") is None:
        return None
    return timings["method"], float(timings["mean_per_voxel"])


def cmd_evaluate(pairs: Sequence[Tuple[Path, Path]], output_dir: Path) -> Dict[str, Any]:
    """
    Score (results, dataset) pairs against ground truth. Rows are grouped by
    (method, noise_std) so several seeds or methods give one comparison table.
    """
    if not pairs:
        raise UsageError("evaluate needs at least one --results/--dataset pair")
    reports = []
    timing_samples: Dict[str, List[float]] = {}
    for results_path, dataset_path in pairs:
        results_path = resolve_results_path(results_path)
        roi = load_results(results_path)
        grid = load_dataset(dataset_path)
        if grid.ground_truth is None:
            raise DatasetError(f"Dataset {dataset_path} has no ground truth")
        if tuple(roi.shape) != grid.mask.shape:
            raise DatasetError(f"Results shape {roi.shape} does not match dataset {grid.mask.shape}")
        reports.append(build_report(roi, grid, noise_std=noise_std_of(grid)))
        timing = _read_timing(results_path)
        if timing is not None:
            timing_samples.setdefault(timing[0], []).append(timing[1])

    combined = combine_reports(reports)
    timings = {method: float(np.mean(values)) for method, values in timing_samples.items()}

    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    document = {"reports": [report.model_dump(mode="json") for report in combined]}
    (output_dir / REPORT_JSON).write_text(json.dumps(document, indent=1), encoding="utf-8")
    text = render_report_text(combined, timings or None)
    (output_dir / REPORT_TEXT).write_text(text, encoding="utf-8")
    return {"reports": combined, "text": text, "output_dir": str(output_dir)}


def parse_voxel(value: str) -> VoxelIndex:
    try:
        row, col = (int(part) for part in value.split(","))
    except ValueError as e:
        raise UsageError(f"--voxel expects ROW,COL, got '{value}'") from e
    return row, col


def cmd_export_maps(results: Path, output_dir: Path, dataset: Optional[Path] = None,
                    png: bool = False, voxel: Optional[VoxelIndex] = None) -> Dict[str, Any]:
    """
    CSV (and optional grayscale PNG) per parameter map; with a dataset also
    the normalized relative-error maps and, for --voxel, a signal plot
    """
    roi = load_results(resolve_results_path(results))
    output_dir = Path(output_dir)
    written: List[str] = []
    maps = {"cbf": roi.cbf_map, "at": roi.at_map, "t1b": roi.t1b_map}
    for name, values in maps.items():
        written.append(str(write_map_csv(values, output_dir / f"{name}_map.csv")))
        if png:
            written.append(str(save_map_png(values, output_dir / f"{name}_map.png",
                                            title=f"{roi.method} {name}")))

    grid = load_dataset(dataset) if dataset is not None else None
    if grid is not None and grid.ground_truth is not None:
        truths = {"cbf": grid.ground_truth.cbf_map, "at": grid.ground_truth.at_map}
        for name, truth in truths.items():
            error = normalized_error_map(maps[name], truth)
            written.append(str(write_map_csv(error, output_dir / f"{name}_error_map.csv")))
            if png:
                written.append(str(save_map_png(error, output_dir / f"{name}_error_map.png",
                                                title=f"{roi.method} {name} relative error",
                                                cmap="coolwarm", vmin=-1.0, vmax=1.0)))

    if voxel is not None:
        if grid is None:
            raise UsageError("--voxel needs --dataset for the measured signal")
        result = roi.results.get(voxel)
        if result is None:
            raise DatasetError(f"No fit result for voxel {voxel}")
        truth_times = truth_curve = None
        if grid.ground_truth is not None:
            truth_times = np.linspace(0.0, grid.spec.t_max, 361)
            truth_curve = evaluate_signal(grid.ground_truth.params_at(voxel), truth_times)
        path = save_voxel_plot(grid.spec.times_array, grid.series(voxel).values,
                               result.predicted_signal, output_dir / f"voxel_{voxel[0]}_{voxel[1]}.png",
                               title=f"{roi.method} voxel {voxel}",
                               truth_times=truth_times, truth_curve=truth_curve)
        written.append(str(path))

    return {"files": written, "output_dir": str(output_dir)}
