"""Data models"""
from aslpinn.models.params import AcquisitionSpec, HaemodynamicParams, SmoothingConfig
from aslpinn.models.grid import GroundTruth, PwiTimeSeries, VoxelGrid
from aslpinn.models.results import (
    BranchSelection,
    FitResult,
    MetricsReport,
    RoiFit,
    SupinnResult,
)

__all__ = [
    "AcquisitionSpec",
    "BranchSelection",
    "FitResult",
    "GroundTruth",
    "HaemodynamicParams",
    "MetricsReport",
    "PwiTimeSeries",
    "RoiFit",
    "SmoothingConfig",
    "SupinnResult",
    "VoxelGrid",
]
