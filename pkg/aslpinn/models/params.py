"""
Physical parameters and acquisition protocol
"""
from typing import Any, List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

DEFAULT_TAU = 900.0  # ms
DEFAULT_N_POINTS = 12
DEFAULT_SPACING = 300.0  # ms


class HaemodynamicParams(BaseModel):
    """
    Unknowns of the single-compartment ASL model.

    cbf is a raw signal amplitude rate (a.u./ms); at, t1b and tau are in ms.
    Domain checks live in asl_model.check_params so that estimates can be
    carried around even when a fitter drifts out of the physical range.
    """

    model_config = ConfigDict(frozen=True)

    cbf: float
    at: float
    t1b: float
    tau: float = DEFAULT_TAU


class AcquisitionSpec(BaseModel):
    """Sample times of the multi-delay acquisition"""

    model_config = ConfigDict(frozen=True)

    n_points: int = Field(default=DEFAULT_N_POINTS, gt=0)
    spacing: float = Field(default=DEFAULT_SPACING, gt=0)  # ms
    times: List[float]  # ms, filled from n_points and spacing when omitted

    @model_validator(mode="before")
    @classmethod
    def _fill_times(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("times") is None:
            n_points = int(data.get("n_points", DEFAULT_N_POINTS))
            spacing = float(data.get("spacing", DEFAULT_SPACING))
            data = {**data, "times": [spacing * (i + 1) for i in range(n_points)]}
        return data

    @model_validator(mode="after")
    def _check_times(self) -> "AcquisitionSpec":
        if len(self.times) != self.n_points:
            raise ValueError(f"expected {self.n_points} times, got {len(self.times)}")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("times must be strictly increasing")
        if self.times[0] < 0:
            raise ValueError("times must be non-negative")
        return self

    @classmethod
    def from_times(cls, times: List[float]) -> "AcquisitionSpec":
        times = [float(t) for t in times]
        spacing = times[1] - times[0] if len(times) > 1 else (times[0] or DEFAULT_SPACING)
        return cls(n_points=len(times), spacing=spacing, times=times)

    @property
    def times_array(self) -> np.ndarray:
        return np.asarray(self.times, dtype=float)

    @property
    def t_max(self) -> float:
        return float(self.times[-1])


class SmoothingConfig(BaseModel):
    """Steepness of the tanh gates blending the ODE branches"""

    model_config = ConfigDict(frozen=True)

    sharpness_k: float = Field(default=0.05, gt=0)  # 1/ms
