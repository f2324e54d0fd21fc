"""
Fit outcomes and evaluation reports
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from aslpinn.models.params import HaemodynamicParams

VoxelIndex = Tuple[int, int]


@dataclass(eq=False)
class FitResult:
    """Per-voxel estimation outcome"""

    params: HaemodynamicParams
    loss_history: np.ndarray
    predicted_signal: np.ndarray
    converged: bool
    wall_time: float = 0.0  # seconds

    def __post_init__(self):
        self.loss_history = np.asarray(self.loss_history, dtype=float).reshape(-1)
        self.predicted_signal = np.asarray(self.predicted_signal, dtype=float).reshape(-1)

    @property
    def final_loss(self) -> float:
        return float(self.loss_history[-1]) if self.loss_history.size else float("nan")

    def to_record(self, history_stride: int = 1) -> Dict[str, Any]:
        """JSON-ready record; wall time is left out so records are reproducible"""
        history = self.loss_history[::history_stride]
        return {
            "cbf": self.params.cbf,
            "at": self.params.at,
            "t1b": self.params.t1b,
            "converged": bool(self.converged),
            "predicted_signal": [float(v) for v in self.predicted_signal],
            "loss_history": [float(v) for v in history],
            "history_stride": int(history_stride),
        }

    @classmethod
    def from_record(cls, record: Dict[str, Any], tau: Optional[float] = None) -> "FitResult":
        extra = {} if tau is None else {"tau": tau}
        return cls(
            params=HaemodynamicParams(
                cbf=float(record["cbf"]), at=float(record["at"]), t1b=float(record["t1b"]), **extra
            ),
            loss_history=np.asarray(record.get("loss_history", []), dtype=float),
            predicted_signal=np.asarray(record["predicted_signal"], dtype=float),
            converged=bool(record["converged"]),
        )

    def same_outcome(self, other: "FitResult") -> bool:
        """Equality of everything except timing"""
        return (
            self.params == other.params
            and self.converged == other.converged
            and np.array_equal(self.loss_history, other.loss_history)
            and np.array_equal(self.predicted_signal, other.predicted_signal)
        )


class BranchSelection(BaseModel):
    """Target voxel plus the companions sharing its global parameter"""

    model_config = ConfigDict(frozen=True)

    target: VoxelIndex
    companions: List[VoxelIndex]
    seed: int

    @property
    def voxels(self) -> List[VoxelIndex]:
        return [self.target, *self.companions]


@dataclass(eq=False)
class SupinnResult:
    """Multi-branch fit: one FitResult per branch plus the shared t1b"""

    selection: BranchSelection
    branches: List[FitResult]
    t1b: float
    loss_history: np.ndarray = field(default_factory=lambda: np.zeros(0))
    wall_time: float = 0.0

    @property
    def target(self) -> FitResult:
        return self.branches[0]


@dataclass(eq=False)
class RoiFit:
    """Region-wide fit of one method: maps plus per-voxel outcomes"""

    method: str
    shape: Tuple[int, int]
    results: Dict[VoxelIndex, FitResult] = field(default_factory=dict)
    failures: Dict[VoxelIndex, str] = field(default_factory=dict)
    t1b: Optional[float] = None  # subject-level estimate

    def _map(self, name: str) -> np.ndarray:
        values = np.full(self.shape, np.nan)
        for (row, col), result in self.results.items():
            values[row, col] = getattr(result.params, name)
        return values

    @property
    def cbf_map(self) -> np.ndarray:
        return self._map("cbf")

    @property
    def at_map(self) -> np.ndarray:
        return self._map("at")

    @property
    def t1b_map(self) -> np.ndarray:
        return self._map("t1b")


class Stat(BaseModel):
    """Mean and standard deviation of a statistic"""

    mean: Optional[float] = None
    std: Optional[float] = None


class VoxelDetail(BaseModel):
    """Per-voxel row of a metrics report"""

    row: int
    col: int
    converged: Optional[bool] = None  # None when cbf truth is zero
    fit_error: bool = False
    cbf_re: Optional[float] = None
    at_re: Optional[float] = None
    t1b_re: Optional[float] = None
    signal_mse: Optional[float] = None


class MetricsReport(BaseModel):
    """Aggregate evaluation statistics of one method on one or more datasets"""

    method: str
    noise_std: Optional[float] = None
    n_datasets: int = 1
    n_voxels: int = 0
    n_failed: int = 0
    n_fit_errors: int = 0
    n_undefined: int = 0
    convergence_rate: float = Field(default=100.0, ge=0, le=100)  # %
    relative_error: Dict[str, Stat] = Field(default_factory=dict)  # %
    laplacian_variance: Dict[str, Stat] = Field(default_factory=dict)
    signal_mse: Stat = Field(default_factory=Stat)
    subject_t1b: Optional[float] = None
    details: List[VoxelDetail] = Field(default_factory=list)
