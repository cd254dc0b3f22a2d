"""Windows, sampling designs and estimator results for spatial statistics."""

from typing import Annotated, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.core.exceptions import DimensionMismatchError
from src.models.arrays import FloatArray, IntArray


class Window(BaseModel):
    """Axis-aligned observation box [lower, upper]."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    lower: FloatArray
    upper: FloatArray

    @model_validator(mode="after")
    def check_bounds(self):
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise DimensionMismatchError("window bounds must be vectors of equal length")
        return self

    @classmethod
    def box(cls, lower, upper) -> "Window":
        return cls(lower=np.asarray(lower, dtype=float), upper=np.asarray(upper, dtype=float))

    @property
    def dimension(self) -> int:
        return int(self.lower.shape[0])

    @property
    def extents(self) -> np.ndarray:
        return self.upper - self.lower

    def volume(self) -> float:
        return float(np.prod(np.clip(self.extents, 0.0, None)))

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.all((points >= self.lower) & (points <= self.upper), axis=1)

    def border_distance(self, points: np.ndarray) -> np.ndarray:
        """Distance from each point to the window boundary (negative outside)."""
        points = np.atleast_2d(points)
        return np.minimum(points - self.lower, self.upper - points).min(axis=1)

    def eroded(self, margin: float) -> "Window":
        return Window.box(self.lower + margin, self.upper - margin)

    def overlap_volume(self, shift: np.ndarray) -> np.ndarray:
        """|W intersect (W + h)| for each row h of `shift`."""
        shift = np.atleast_2d(shift)
        return np.prod(np.clip(self.extents - np.abs(shift), 0.0, None), axis=1)

    def cells(self, cell_size: float) -> Tuple[np.ndarray, ...]:
        """Edges of a grid of cubic cells anchored at `lower`."""
        counts = np.floor(self.extents / cell_size + 1e-9).astype(int)
        return tuple(
            self.lower[a] + cell_size * np.arange(counts[a] + 1) for a in range(self.dimension)
        )


class GridDesign(BaseModel):
    """Sample points on a regular grid, offset half a spacing from the window corner."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["grid"] = "grid"
    spacing: float = Field(..., gt=0.0)


class RandomDesign(BaseModel):
    """Uniform random sample points."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["random"] = "random"
    count: int = Field(..., ge=1)
    seed: int = Field(default=0, ge=0)


SampleDesign = Annotated[Union[GridDesign, RandomDesign], Field(discriminator="kind")]


class PointPattern(BaseModel):
    """Sphere centres observed in a window.

    A periodic pattern is observed through the whole box, and distances use
    the minimum image.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    points: FloatArray
    window: Window
    periodic: bool = False

    @model_validator(mode="after")
    def check_points(self):
        if self.points.ndim != 2 or self.points.shape[1] != self.window.dimension:
            raise DimensionMismatchError(
                f"points of shape {self.points.shape} in a {self.window.dimension}D window"
            )
        if len(self.points) and not np.all(self.window.contains(self.points)):
            raise ValueError("all points must lie inside the window")
        return self

    @property
    def n(self) -> int:
        return int(self.points.shape[0])

    @property
    def dimension(self) -> int:
        return self.window.dimension

    @property
    def intensity(self) -> float:
        return self.n / self.window.volume()


class Estimate(BaseModel):
    """Point estimate with its standard error."""

    model_config = ConfigDict(frozen=True)

    value: float
    standard_error: float
    samples: int


class RadialFunction(BaseModel):
    """A function of distance estimated on a grid or on bins.

    `r` holds the evaluation distances (bin centres for binned estimators,
    where `edges` has one more entry than `values`).
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    r: FloatArray
    values: FloatArray
    counts: IntArray
    estimator: str
    correction: str = "none"
    edges: Optional[FloatArray] = None
    standard_errors: Optional[FloatArray] = None

    @model_validator(mode="after")
    def check_shapes(self):
        if self.r.shape != self.values.shape or self.counts.shape != self.values.shape:
            raise ValueError("r, values and counts must have the same length")
        if len(self.r) > 1 and np.any(np.diff(self.r) <= 0):
            raise ValueError("r must be strictly increasing")
        if self.edges is not None and len(self.edges) != len(self.values) + 1:
            raise ValueError("edges must have one more entry than values")
        return self

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """(r_low, r_high) per entry; equal for grid evaluations."""
        if self.edges is None:
            return self.r, self.r
        return self.edges[:-1], self.edges[1:]

    def value_at(self, r: float) -> float:
        """Value of the shell containing r for binned estimates, else linear interpolation."""
        if self.edges is not None:
            k = int(np.searchsorted(self.edges, r, side="right")) - 1
            return float(self.values[min(max(k, 0), len(self.values) - 1)])
        return float(np.interp(r, self.r, self.values))


class LocalFractionField(BaseModel):
    """Volume fraction estimated on each cell of a grid of subwindows."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    edges: Tuple[FloatArray, ...]
    values: FloatArray
    samples: IntArray
    cell_size: float
    high_variance: bool

    def profile(self, axis: int) -> np.ndarray:
        """Mean over every axis except `axis`."""
        others = tuple(a for a in range(self.values.ndim) if a != axis)
        return np.nanmean(self.values, axis=others)

    def variance(self) -> float:
        return float(np.nanvar(self.values, ddof=1)) if self.values.size > 1 else float("nan")


class MixedMoment(BaseModel):
    """Mixed moments at one pair of lag vectors."""

    model_config = ConfigDict(frozen=True)

    x: Tuple[float, ...]
    y: Tuple[float, ...]
    m2: float
    m3: float
    m110: float
    samples: int


class CovarianceResult(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    m2: RadialFunction
    volume_fraction: float
    mixed: List[MixedMoment] = Field(default_factory=list)


class NeighbourFunctions(BaseModel):
    """Nearest-neighbour distribution D, empty-space H_s and J = (1 - D) / (1 - H_s)."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    d: RadialFunction
    h_s: RadialFunction
    j: RadialFunction
    d_k: Dict[int, RadialFunction]


class QuadratCounts(BaseModel):
    """Point counts over a grid of equal cells."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    counts: IntArray
    cell_size: float
    mean: float
    variance: float
    ratio: float
