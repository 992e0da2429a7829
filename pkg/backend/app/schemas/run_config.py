"""
Pydantic schemas for run configuration files.

A run is described by one YAML (or JSON) document; every command re-emits the
resolved model as run.json, which can be fed back through --config.
"""
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union
import logging

import yaml
from pydantic import BaseModel, Field, field_validator, model_validator

from app.core.domain import BoxDomain
from app.core.errors import ConfigError

logger = logging.getLogger(__name__)

# Absolute float, "rational p/q", "irrational sqrt2" or "period x"
TimeValue = Union[float, str]


def _geometric_levels(first_exp: int, last_exp: int) -> List[int]:
    return [2 ** k for k in range(first_exp, last_exp + 1)]


class DomainSpec(BaseModel):
    """Box length, mass and hbar; defaults are the L = m = hbar = 1 unit system."""
    L: float = Field(1.0, gt=0)
    m: float = Field(1.0, gt=0)
    hbar: float = Field(1.0, gt=0)

    class Config:
        extra = "forbid"

    def build(self) -> BoxDomain:
        return BoxDomain(L=self.L, m=self.m, hbar=self.hbar)


class StateSpec(BaseModel):
    """Which spectral state to build and with which parameters."""
    kind: Literal["uniform", "weierstrass", "triangle", "parabola", "custom"] = "uniform"
    n_max: int = Field(16383, ge=1, description="Largest mode index considered")
    x1: float = 0.0
    x2: Optional[float] = Field(None, description="Defaults to L")
    normalize: Optional[bool] = Field(None, description="Defaults to True for weierstrass, False otherwise")
    s: float = Field(1.0, gt=0, lt=2)
    n: int = Field(2, ge=2)
    R: int = Field(10, ge=0)
    coefficients_file: Optional[str] = None
    energy_offset: float = 0.0

    class Config:
        extra = "forbid"

    @model_validator(mode="after")
    def check_custom_source(self) -> "StateSpec":
        if self.kind == "custom" and not self.coefficients_file:
            raise ValueError("state.kind 'custom' needs state.coefficients_file")
        return self


class LadderSpec(BaseModel):
    levels: List[int] = Field(default_factory=lambda: _geometric_levels(4, 13))

    class Config:
        extra = "forbid"

    @field_validator("levels")
    @classmethod
    def check_levels(cls, v: List[int]) -> List[int]:
        if len(v) < 3:
            raise ValueError("a truncation ladder needs at least 3 levels")
        if v[0] < 1 or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("ladder levels must be >= 1 and strictly increasing")
        return v


class TimeSpec(BaseModel):
    t_start: TimeValue = 0.0
    t_end: TimeValue = "rational 1/1"
    profile_times: List[TimeValue] = Field(
        default_factory=lambda: [0.0, "rational 1/2", "irrational sqrt2"]
    )
    fractal_times: List[TimeValue] = Field(
        default_factory=lambda: ["irrational sqrt2", "rational 7/10"]
    )

    class Config:
        extra = "forbid"


class GridSpec(BaseModel):
    nx: Optional[int] = Field(None, ge=2, description="Defaults to max(1001, 8 n_max)")
    nt: int = Field(257, ge=2, description="Carpet rows over [t_start, t_end]")
    N: Optional[int] = Field(None, ge=1, description="Truncation for carpet and profiles")

    class Config:
        extra = "forbid"


class IntegratorOptions(BaseModel):
    """
    Adaptive RK4 settings. Time steps left as None are derived from the period:
    dt_init = T / 2000 and dt_min = 1e-9 T; limit_tol defaults to 1e-3 L.
    """
    dt_init: Optional[float] = Field(None, gt=0)
    dt_min: Optional[float] = Field(None, gt=0)
    tol_step: float = Field(1e-8, gt=0)
    samples_per_period: int = Field(2048, ge=2)
    limit_tol: Optional[float] = Field(None, gt=0)
    max_steps: int = Field(50_000_000, ge=1)
    max_flags: int = Field(1000, ge=0)

    class Config:
        extra = "forbid"

    def resolved_dt_init(self, domain: BoxDomain) -> float:
        return self.dt_init if self.dt_init is not None else domain.period / 2000.0

    def resolved_dt_min(self, domain: BoxDomain) -> float:
        return self.dt_min if self.dt_min is not None else domain.period * 1e-9

    def resolved_limit_tol(self, domain: BoxDomain) -> float:
        return self.limit_tol if self.limit_tol is not None else 1e-3 * domain.L


class FitOptions(BaseModel):
    window: Optional[Tuple[int, int]] = Field(
        None, description="Half-open index range of ladder levels; defaults to the top half"
    )
    saturation_slope: float = 0.05
    min_levels: int = Field(4, ge=2)
    min_modes: int = Field(16, ge=2)
    check_grid: bool = True
    grid_tolerance: float = Field(0.01, gt=0)

    class Config:
        extra = "forbid"


class TrajectorySpec(BaseModel):
    x0: List[float] = Field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7, 0.9])
    N: int = Field(31, ge=1)
    limit: bool = True

    class Config:
        extra = "forbid"

    @field_validator("x0")
    @classmethod
    def check_increasing(cls, v: List[float]) -> List[float]:
        if not v or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("x0 must be a non-empty strictly increasing list")
        return v


class EnergySpec(BaseModel):
    x0: List[float] = Field(default_factory=lambda: [0.3])
    N: int = Field(3, ge=1)
    counts: List[int] = Field(default_factory=lambda: _geometric_levels(0, 9))
    quadrature: bool = True

    class Config:
        extra = "forbid"


class FractalSpec(BaseModel):
    density: bool = True
    spectrum: bool = True
    trajectory_x0: List[float] = Field(default_factory=lambda: [0.01, 0.1, 0.4, 0.49, 0.499, 0.5])
    trajectory_ladder: List[int] = Field(default_factory=lambda: _geometric_levels(4, 10))
    trajectory_method: Literal["transport", "integrate"] = "transport"
    trajectory_centre: TimeValue = Field("irrational sqrt2", description="Centre of the measured window")
    trajectory_width: float = Field(1.0 / 64.0, gt=0, le=1, description="Window width as a fraction of T")
    weierstrass_s: List[float] = Field(default_factory=list)
    weierstrass_n: int = Field(2, ge=2)
    weierstrass_R: List[int] = Field(default_factory=lambda: list(range(6, 12)))

    class Config:
        extra = "forbid"


class RunConfig(BaseModel):
    """Complete, serialisable description of a run."""
    domain: DomainSpec = Field(default_factory=DomainSpec)
    state: StateSpec = Field(default_factory=StateSpec)
    ladder: LadderSpec = Field(default_factory=LadderSpec)
    time: TimeSpec = Field(default_factory=TimeSpec)
    grid: GridSpec = Field(default_factory=GridSpec)
    integrator: IntegratorOptions = Field(default_factory=IntegratorOptions)
    fit: FitOptions = Field(default_factory=FitOptions)
    trajectories: TrajectorySpec = Field(default_factory=TrajectorySpec)
    energy: EnergySpec = Field(default_factory=EnergySpec)
    fractal: FractalSpec = Field(default_factory=FractalSpec)
    output_dir: Optional[str] = None
    write_carpet_binary: Optional[bool] = None
    deterministic: bool = True

    class Config:
        extra = "forbid"


def load_run_config(path: Union[str, Path, None]) -> RunConfig:
    """
    Load and validate a run configuration.

    Args:
        path: YAML or JSON file (a run.json is accepted); None gives the defaults

    Returns:
        Validated RunConfig

    Raises:
        ConfigError: unreadable or unparsable file
        pydantic.ValidationError: well-formed file with invalid values
    """
    if path is None:
        return RunConfig()

    try:
        with open(path, "r") as f:
            data = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot load config {path}: {e}") from e

    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping at the top level")
    # run.json wraps the resolved config with the command name and version
    if "command" in data and isinstance(data.get("config"), dict):
        data = data["config"]

    logger.info(f"Loaded configuration from {path}")
    return RunConfig.model_validate(data)
