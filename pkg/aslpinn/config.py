"""
Configuration module for aslpinn
"""
import json
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Type, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings

from aslpinn.exceptions import ConfigurationError
from aslpinn.models.params import SmoothingConfig

METHODS = ("lsf", "lsf-multi", "pinn", "supinn")

ModelT = TypeVar("ModelT", bound=BaseModel)


class Settings(BaseSettings):
    """Application settings"""

    model_config = {
        "env_prefix": "ASLPINN_",
        "env_file": ".env",
        "env_file_encoding": "utf-8",
        "case_sensitive": False,
    }

    # Logging
    log_level: str = "INFO"
    debug: bool = False
    log_to_file: bool = True

    # Execution
    jobs: Optional[int] = None  # None -> logical core count

    # Paths
    base_dir: Path = Path(__file__).parent.parent
    log_path: Path = base_dir / "logs"
    output_dir: Path = base_dir / "runs"

    def resolved_jobs(self, jobs: Optional[int] = None) -> int:
        """Worker count: explicit value, then settings, then the core count"""
        value = jobs if jobs is not None else self.jobs
        return max(1, value if value is not None else (os.cpu_count() or 1))


# Global settings instance
settings = Settings()


class PhantomConfig(BaseModel):
    """Synthetic voxel-grid generator settings"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    width: int = Field(default=8, ge=0)
    height: int = Field(default=8, ge=0)
    cbf_range: Tuple[float, float] = (0.005, 0.02)  # a.u./ms
    at_range: Tuple[float, float] = (400.0, 1400.0)  # ms
    t1b: float = Field(default=1800.0, gt=0)  # ms
    smoothness: float = Field(default=2.0, ge=0)  # Gaussian sigma, voxels
    noise_std: float = Field(default=0.0, ge=0)  # fraction of the grid peak
    mask_shape: Literal["full", "ellipse"] = "full"
    n_points: int = Field(default=12, gt=0)
    spacing: float = Field(default=300.0, gt=0)  # ms
    seed: int = 0

    @field_validator("cbf_range", "at_range")
    @classmethod
    def _positive_ordered(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        lo, hi = value
        if lo <= 0 or hi <= 0:
            raise ValueError("range bounds must be positive")
        if lo > hi:
            raise ValueError("range must be ordered (low <= high)")
        return value


class TrainConfig(BaseModel):
    """PINN / SUPINN training settings"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    gamma: float = Field(default=0.005, gt=0)
    n_collocation: int = Field(default=121, ge=2)
    tier_iterations: Tuple[int, int, int] = (10_000, 30_000, 10_000)
    learning_rates: Tuple[float, float, float] = (1e-3, 1e-3, 1e-4)
    adam_beta1: float = Field(default=0.9, ge=0, lt=1)
    adam_beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)
    smoothing_k: float = Field(default=0.05, gt=0)  # 1/ms
    n_branches: int = Field(default=3, ge=2)
    init_at: float = Field(default=900.0, gt=0)  # ms
    init_t1b: float = Field(default=1800.0, gt=0)  # ms
    seed: int = 0
    log_every: int = Field(default=1000, gt=0)
    history_stride: int = Field(default=100, gt=0)

    @field_validator("tier_iterations")
    @classmethod
    def _positive_counts(cls, value: Tuple[int, int, int]) -> Tuple[int, int, int]:
        if any(count <= 0 for count in value):
            raise ValueError("tier iteration counts must be positive")
        return value

    @field_validator("learning_rates")
    @classmethod
    def _positive_rates(cls, value: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if any(rate <= 0 for rate in value):
            raise ValueError("learning rates must be positive")
        return value

    @property
    def horizon(self) -> int:
        """Iteration count at which divergence is audited"""
        return sum(self.tier_iterations)

    @property
    def smoothing(self) -> SmoothingConfig:
        return SmoothingConfig(sharpness_k=self.smoothing_k)


def _default_at_grid() -> List[float]:
    return [float(at) for at in range(300, 2101, 300)]


class LsfConfig(BaseModel):
    """Robust least-squares settings"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: Literal["fixed-t1b", "free-t1b"] = "free-t1b"
    at_grid: List[float] = Field(default_factory=_default_at_grid)  # ms
    max_iterations: int = Field(default=200, gt=0)
    huber_k: float = Field(default=1.345, gt=0)  # delta = huber_k * MAD-scale
    tolerance: float = Field(default=1e-8, gt=0)
    t1b_init: float = Field(default=1800.0, gt=0)  # ms
    t1b_bounds: Tuple[float, float] = (100.0, 10_000.0)  # ms

    @field_validator("at_grid")
    @classmethod
    def _valid_grid(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("at_grid must not be empty")
        if any(at <= 0 for at in value):
            raise ValueError("at_grid values must be positive")
        return value

    @model_validator(mode="after")
    def _bounds_contain_init(self) -> "LsfConfig":
        lo, hi = self.t1b_bounds
        if not 0 < lo < hi:
            raise ValueError("t1b_bounds must satisfy 0 < low < high")
        if not lo <= self.t1b_init <= hi:
            raise ValueError("t1b_init must lie inside t1b_bounds")
        return self


class RunConfig(BaseModel):
    """Everything a CLI subcommand needs, merged from a config file and flags"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    phantom: PhantomConfig = Field(default_factory=PhantomConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    lsf: LsfConfig = Field(default_factory=LsfConfig)
    method: Optional[Literal["lsf", "lsf-multi", "pinn", "supinn"]] = None
    seed: Optional[int] = None
    jobs: Optional[int] = Field(default=None, gt=0)
    noise_sweep: Optional[List[float]] = None

    @field_validator("noise_sweep")
    @classmethod
    def _non_negative_sweep(cls, value: Optional[List[float]]) -> Optional[List[float]]:
        if value is not None and any(std < 0 for std in value):
            raise ValueError("noise stds must be non-negative")
        return value

    @classmethod
    def from_sources(cls, config_path: Optional[Path] = None,
                     overrides: Optional[Dict[str, Any]] = None) -> "RunConfig":
        """
        Load an optional JSON config file and apply flag overrides on top.
        Overrides are nested like the file; None values mean "not given".
        """
        data: Dict[str, Any] = {}
        if config_path is not None:
            try:
                data = json.loads(Path(config_path).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigurationError(f"Cannot read config file {config_path}: {e}") from e
            if not isinstance(data, dict):
                raise ConfigurationError(f"Config file {config_path} must hold a JSON object")
        merged = _merge(data, overrides or {})
        return build_config(cls, merged)


def _merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict):
            section = merged.get(key) or {}
            merged[key] = _merge(section if isinstance(section, dict) else {}, value)
        else:
            merged[key] = value
    return merged


def build_config(model_cls: Type[ModelT], data: Dict[str, Any]) -> ModelT:
    """Validate a config mapping, translating pydantic errors to ConfigurationError"""
    try:
        return model_cls.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"]) or model_cls.__name__
        raise ConfigurationError(f"{location}: {first['msg']}") from e
