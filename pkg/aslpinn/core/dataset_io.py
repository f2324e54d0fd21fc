"""
Dataset I/O Module
JSON voxel-grid datasets and CSV parameter maps
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from aslpinn.exceptions import DatasetError, DatasetParseError, SchemaVersionError
from aslpinn.models.grid import GroundTruth, VoxelGrid
from aslpinn.models.params import AcquisitionSpec
from aslpinn.models.results import FitResult, RoiFit

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

PathLike = Union[str, Path]


class GroundTruthDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    cbf_map: List[float]  # masked voxels, row-major
    at_map: List[float]
    t1b: float


class DatasetDocument(BaseModel):
    """On-disk layout of a dataset; signal and maps list masked voxels only"""

    model_config = ConfigDict(extra="forbid")

    schema_version: int
    times_ms: List[float] = Field(min_length=1)
    spacing_ms: Optional[float] = None
    width: int = Field(ge=0)
    height: int = Field(ge=0)
    mask: List[int]
    signal: List[List[float]]
    ground_truth: Optional[GroundTruthDocument] = None
    metadata: Dict[str, Any] = Field(default_factory=dict)


def grid_to_document(grid: VoxelGrid) -> DatasetDocument:
    mask = grid.mask
    truth = None
    if grid.ground_truth is not None:
        truth = GroundTruthDocument(
            cbf_map=[float(v) for v in grid.ground_truth.cbf_map[mask]],
            at_map=[float(v) for v in grid.ground_truth.at_map[mask]],
            t1b=float(grid.ground_truth.t1b),
        )
    return DatasetDocument(
        schema_version=SCHEMA_VERSION,
        times_ms=list(grid.spec.times),
        spacing_ms=grid.spec.spacing,
        width=grid.width,
        height=grid.height,
        mask=[int(v) for v in mask.reshape(-1)],
        signal=[[float(v) for v in grid.signal[row, col]] for row, col in grid.masked_indices()],
        ground_truth=truth,
        metadata=grid.metadata,
    )


def document_to_grid(doc: DatasetDocument) -> VoxelGrid:
    if len(doc.mask) != doc.width * doc.height:
        raise DatasetParseError("mask", f"{len(doc.mask)} entries for a {doc.width}x{doc.height} grid")
    if any(v not in (0, 1) for v in doc.mask):
        raise DatasetParseError("mask", "entries must be 0 or 1")
    mask = np.asarray(doc.mask, dtype=bool).reshape(doc.height, doc.width)
    n_masked = int(mask.sum())

    try:
        if doc.spacing_ms is None:
            spec = AcquisitionSpec.from_times(doc.times_ms)
        else:
            spec = AcquisitionSpec(n_points=len(doc.times_ms), spacing=doc.spacing_ms,
                                   times=doc.times_ms)
    except ValidationError as e:
        raise DatasetParseError("times_ms", e.errors()[0]["msg"]) from e

    if len(doc.signal) != n_masked:
        raise DatasetParseError("signal", f"{len(doc.signal)} series for {n_masked} masked voxels")
    if any(len(series) != spec.n_points for series in doc.signal):
        raise DatasetParseError("signal", f"every series needs {spec.n_points} samples")
    signal = np.full((doc.height, doc.width, spec.n_points), np.nan)
    if n_masked:
        signal[mask] = np.asarray(doc.signal, dtype=float)

    truth = None
    if doc.ground_truth is not None:
        maps = {}
        for name in ("cbf_map", "at_map"):
            values = getattr(doc.ground_truth, name)
            if len(values) != n_masked:
                raise DatasetParseError(f"ground_truth.{name}",
                                        f"{len(values)} values for {n_masked} masked voxels")
            full = np.full(mask.shape, np.nan)
            full[mask] = np.asarray(values, dtype=float)
            maps[name] = full
        truth = GroundTruth(t1b=doc.ground_truth.t1b, **maps)

    return VoxelGrid(mask=mask, signal=signal, spec=spec, ground_truth=truth, metadata=doc.metadata)


def save_dataset(grid: VoxelGrid, path: PathLike) -> Path:
    """Write the grid as one JSON document; floats keep their exact repr"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(grid_to_document(grid).model_dump_json(indent=1), encoding="utf-8")
    logger.info(f"Dataset written to {path} ({grid.height}x{grid.width}, {grid.n_masked} voxels)")
    return path


def load_dataset(path: PathLike) -> VoxelGrid:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise DatasetError(f"Cannot read dataset {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DatasetParseError("<document>", f"invalid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise DatasetParseError("<document>", "top level must be a JSON object")
    if "schema_version" not in raw:
        raise DatasetParseError("schema_version", "field required")
    if raw["schema_version"] != SCHEMA_VERSION:
        raise SchemaVersionError(raw["schema_version"], SCHEMA_VERSION)

    try:
        doc = DatasetDocument.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"]) or "<document>"
        raise DatasetParseError(location, first["msg"]) from e
    return document_to_grid(doc)


# -- parameter maps -------------------------------------------------------

def write_map_csv(values: np.ndarray, path: PathLike) -> Path:
    """First line 'width,height', then one comma-separated line per row; NaN as 'nan'"""
    values = np.asarray(values, dtype=float)
    height, width = values.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"{width},{height}\n")
        if height:
            pd.DataFrame(values).to_csv(f, header=False, index=False, na_rep="nan",
                                        lineterminator="\n")
    return path


def read_map_csv(path: PathLike) -> np.ndarray:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline().strip()
            width, height = (int(v) for v in header.split(","))
    except OSError as e:
        raise DatasetError(f"Cannot read map {path}: {e}") from e
    except ValueError as e:
        raise DatasetParseError("header", f"expected 'width,height', got {header!r}") from e
    if height == 0:
        return np.zeros((0, width))
    frame = pd.read_csv(path, skiprows=1, header=None, float_precision="round_trip")
    values = frame.to_numpy(dtype=float)
    if values.shape != (height, width):
        raise DatasetParseError("rows", f"shape {values.shape} does not match header {(height, width)}")
    return values


# -- fit results ----------------------------------------------------------

def save_results(roi: RoiFit, path: PathLike, seed: int, history_stride: int = 1) -> Path:
    """
    Per-voxel records in row-major order. Wall times are kept out so that
    equal seeds give byte-identical files.
    """
    document = {
        "schema_version": SCHEMA_VERSION,
        "method": roi.method,
        "seed": seed,
        "shape": list(roi.shape),
        "t1b": roi.t1b,
        "voxels": [
            {"row": row, "col": col, **roi.results[(row, col)].to_record(history_stride)}
            for row, col in sorted(roi.results)
        ],
        "failures": [
            {"row": row, "col": col, "error": roi.failures[(row, col)]}
            for row, col in sorted(roi.failures)
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=1), encoding="utf-8")
    return path


def load_results(path: PathLike) -> RoiFit:
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise DatasetError(f"Cannot read results {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DatasetParseError("<document>", f"invalid JSON: {e}") from e
    if not isinstance(document, dict):
        raise DatasetParseError("<document>", "top level must be a JSON object")
    if document.get("schema_version") != SCHEMA_VERSION:
        raise SchemaVersionError(document.get("schema_version"), SCHEMA_VERSION)
    try:
        roi = RoiFit(method=str(document["method"]), shape=tuple(document["shape"]),
                     t1b=document.get("t1b"))
        for record in document.get("voxels", []):
            roi.results[(int(record["row"]), int(record["col"]))] = FitResult.from_record(record)
        for record in document.get("failures", []):
            roi.failures[(int(record["row"]), int(record["col"]))] = str(record["error"])
    except KeyError as e:
        raise DatasetParseError(str(e.args[0]), "field required") from e
    except (TypeError, ValueError) as e:
        raise DatasetParseError("voxels", str(e)) from e
    return roi
