import math
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, Field, model_validator

from app.base.exceptions import CustomException, ExType

Point = Tuple[float, float]


class DecayFit(BaseModel):
    """S(p) = a * (1 - exp(-lam * (1 - p)))."""

    a: float = 0.0
    lam: float = 0.0
    r2: float = 0.0
    residual_se: float = 0.0
    n_points: int = 0
    iterations: int = 0
    success: bool = True
    message: Optional[str] = None


class AdvantageGrid(BaseModel):
    p_grid: List[float]
    q_grid: List[float]
    mean: List[List[float]]
    se: List[List[float]]
    n_seeds: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def grids_consistent(self) -> "AdvantageGrid":
        for name, grid in (("p_grid", self.p_grid), ("q_grid", self.q_grid)):
            if len(grid) < 2 or any(b <= a for a, b in zip(grid, grid[1:])):
                raise CustomException(
                    code=ExType.GRID_MISMATCH,
                    field=name,
                    detail=f"{name} must hold at least 2 strictly increasing values",
                )
        shape = (len(self.p_grid), len(self.q_grid))
        for name, values in (("mean", self.mean), ("se", self.se)):
            if np.shape(values) != shape:
                raise CustomException(
                    code=ExType.GRID_MISMATCH,
                    field=name,
                    detail=f"{name} has shape {np.shape(values)}, expected {shape}",
                )
        if (np.asarray(self.se) < 0).any():
            raise ValueError("standard errors must be non-negative")
        return self

    @property
    def mean_array(self) -> npt.NDArray[np.float64]:
        return np.asarray(self.mean, dtype=np.float64)

    @property
    def se_array(self) -> npt.NDArray[np.float64]:
        return np.asarray(self.se, dtype=np.float64)

    def z_score(self, p: float, q: float) -> float:
        i = int(np.argmin(np.abs(np.asarray(self.p_grid) - p)))
        j = int(np.argmin(np.abs(np.asarray(self.q_grid) - q)))
        mean, se = self.mean[i][j], self.se[i][j]
        if se > 0:
            return mean / se
        return 0.0 if mean == 0 else math.copysign(math.inf, mean)


class Contour(BaseModel):
    points: List[Point] = Field(default_factory=list)
    n_polylines: int = 0
    message: Optional[str] = None

    @property
    def empty(self) -> bool:
        return not self.points


class BoundaryFamily(str, Enum):
    LOGISTIC = "logistic"
    EXPONENTIAL = "exponential"


class Classification(str, Enum):
    NOISE_SENSITIVE = "noise_sensitive"
    NOISE_INSENSITIVE = "noise_insensitive"
    BOUNDARY = "boundary"


class BoundaryFit(BaseModel):
    family: BoundaryFamily
    params: Dict[str, float] = Field(default_factory=dict)
    rmse: float = 0.0
    signed_area: float = 0.0
    classification: Optional[Classification] = None
    n_points: int = 0
    success: bool = True
    message: Optional[str] = None
    residuals: List[float] = Field(default_factory=list)


class SEBands(BaseModel):
    level: float
    lower: List[Point] = Field(default_factory=list)
    upper: List[Point] = Field(default_factory=list)
    omitted: int = 0
    method: str = "gradient_scaled_offset"


class QuantityStatus(str, Enum):
    REACHED = "reached"
    EXTRAPOLATED = "extrapolated"
    UNREACHABLE = "unreachable"


class QuantityPoint(BaseModel):
    p: float
    status: QuantityStatus
    required_size: Optional[float] = None
    asymptote: Optional[float] = None
    sizes: List[float] = Field(default_factory=list)
    means: List[float] = Field(default_factory=list)
    ses: List[float] = Field(default_factory=list)
    warning: Optional[str] = None
