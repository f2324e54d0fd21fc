"""
Voxel grid dataset types
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from aslpinn.exceptions import DatasetError
from aslpinn.models.params import AcquisitionSpec, HaemodynamicParams

VoxelIndex = Tuple[int, int]


@dataclass(frozen=True, eq=False)
class PwiTimeSeries:
    """One voxel's perfusion-weighted signal, aligned to spec.times"""

    values: np.ndarray
    spec: AcquisitionSpec = field(default_factory=AcquisitionSpec)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.size != self.spec.n_points:
            raise DatasetError(
                f"Series has {values.size} samples, acquisition expects {self.spec.n_points}"
            )
        if not np.all(np.isfinite(values)):
            raise DatasetError("Series contains non-finite samples")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, PwiTimeSeries):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.values, other.values)

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Per-voxel cbf/at maps (NaN outside the mask) and the grid's single t1b"""

    cbf_map: np.ndarray
    at_map: np.ndarray
    t1b: float

    def params_at(self, index: VoxelIndex, tau: Optional[float] = None) -> HaemodynamicParams:
        row, col = index
        extra = {} if tau is None else {"tau": tau}
        return HaemodynamicParams(
            cbf=float(self.cbf_map[row, col]), at=float(self.at_map[row, col]), t1b=self.t1b, **extra
        )

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, GroundTruth):
            return NotImplemented
        return (
            self.t1b == other.t1b
            and np.array_equal(self.cbf_map, other.cbf_map, equal_nan=True)
            and np.array_equal(self.at_map, other.at_map, equal_nan=True)
        )


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """
    2D masked grid of time series: the dataset unit.

    signal has shape (height, width, n_points) and holds NaN outside the mask,
    so unmasked voxels carry no samples.
    """

    mask: np.ndarray
    signal: np.ndarray
    spec: AcquisitionSpec = field(default_factory=AcquisitionSpec)
    ground_truth: Optional[GroundTruth] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise DatasetError(f"Mask must be 2D, got shape {mask.shape}")
        signal = np.array(self.signal, dtype=float)
        expected = mask.shape + (self.spec.n_points,)
        if signal.shape != expected:
            raise DatasetError(f"Signal shape {signal.shape} does not match {expected}")
        if not np.all(np.isfinite(signal[mask])):
            raise DatasetError("Masked voxels must carry finite samples")
        signal[~mask] = np.nan
        if self.ground_truth is not None:
            self._check_ground_truth(mask)
        mask.setflags(write=False)
        signal.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "signal", signal)

    def _check_ground_truth(self, mask: np.ndarray):
        truth = self.ground_truth
        for name in ("cbf_map", "at_map"):
            values = np.array(getattr(truth, name), dtype=float)
            if values.shape != mask.shape:
                raise DatasetError(f"Ground truth {name} shape {values.shape} != {mask.shape}")
            if not np.all(np.isfinite(values[mask])):
                raise DatasetError(f"Ground truth {name} must cover every masked voxel")
            values[~mask] = np.nan
            values.setflags(write=False)
            object.__setattr__(truth, name, values)
        if not truth.t1b > 0:
            raise DatasetError(f"Ground truth t1b must be positive, got {truth.t1b}")

    @property
    def height(self) -> int:
        return int(self.mask.shape[0])

    @property
    def width(self) -> int:
        return int(self.mask.shape[1])

    @property
    def n_masked(self) -> int:
        return int(self.mask.sum())

    def masked_indices(self) -> List[VoxelIndex]:
        """Masked voxels in row-major order"""
        rows, cols = np.nonzero(self.mask)
        return [(int(r), int(c)) for r, c in zip(rows, cols)]

    def contains(self, index: VoxelIndex) -> bool:
        row, col = index
        return 0 <= row < self.height and 0 <= col < self.width and bool(self.mask[row, col])

    def series(self, index: VoxelIndex) -> PwiTimeSeries:
        if not self.contains(index):
            raise DatasetError(f"Voxel {index} is outside the mask")
        row, col = index
        return PwiTimeSeries(self.signal[row, col], self.spec)

    def flat_index(self, index: VoxelIndex) -> int:
        return index[0] * self.width + index[1]

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return (
            self.spec == other.spec
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.signal, other.signal, equal_nan=True)
            and self.ground_truth == other.ground_truth
            and self.metadata == other.metadata
        )
