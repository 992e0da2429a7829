"""
Pydantic schemas for fractal-dimension fits.
"""
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, Field


class FractalFit(BaseModel):
    """Result of a log-log regression, serialised as fractal_*.json."""
    method: Literal["length", "spectrum"]
    target: str = Field(..., description="density, trajectory or spectrum, with its parameters")
    N_values: List[int] = Field(..., description="Ladder levels, or mode indices for the spectrum method")
    lengths: List[float] = Field(..., description="Curve lengths, or |c_n|^2 for the spectrum method")
    grid_points: Optional[List[int]] = None
    fit_window: Tuple[int, int]
    slope: float
    intercept: float
    stderr: float
    D_f: float
    beta: Optional[float] = None
    flags: List[str] = Field(default_factory=list)
