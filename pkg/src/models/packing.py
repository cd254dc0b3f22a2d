"""Sphere, boundary and configuration models.

All lengths are in units of the nominal sphere diameter, so monodisperse
spheres have radius 0.5.
"""

import math
from enum import Enum
from typing import Any, Dict, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.core.exceptions import DimensionMismatchError
from src.models.arrays import FloatArray


class BoundaryKind(str, Enum):
    """Supported boundary conditions."""

    PERIODIC = "periodic"
    HARD = "hard"
    OPEN_BASE = "open_base"
    NONE = "none"


class BoundarySpec(BaseModel):
    """Boundary of the packing region.

    For OPEN_BASE the extents are the lateral (periodic) edge lengths; the base
    is the plane where the last coordinate is 0 and gravity points along the
    negative last axis.
    """

    model_config = ConfigDict(frozen=True)

    kind: BoundaryKind
    dimension: int = Field(..., ge=2, le=3)
    extents: Tuple[float, ...] = ()

    @model_validator(mode="after")
    def check_extents(self):
        expected = {
            BoundaryKind.PERIODIC: self.dimension,
            BoundaryKind.HARD: self.dimension,
            BoundaryKind.OPEN_BASE: self.dimension - 1,
            BoundaryKind.NONE: 0,
        }[self.kind]
        if len(self.extents) != expected:
            raise ValueError(
                f"{self.kind.value} boundary in {self.dimension}D needs {expected} extents, "
                f"got {len(self.extents)}"
            )
        if any(not math.isfinite(e) or e <= 0 for e in self.extents):
            raise ValueError("boundary extents must be finite and positive")
        return self

    @classmethod
    def periodic_box(cls, *extents: float) -> "BoundarySpec":
        return cls(kind=BoundaryKind.PERIODIC, dimension=len(extents), extents=tuple(extents))

    @classmethod
    def hard_box(cls, *extents: float) -> "BoundarySpec":
        return cls(kind=BoundaryKind.HARD, dimension=len(extents), extents=tuple(extents))

    @classmethod
    def open_with_base(cls, *lateral: float) -> "BoundarySpec":
        return cls(kind=BoundaryKind.OPEN_BASE, dimension=len(lateral) + 1, extents=tuple(lateral))

    @classmethod
    def unbounded(cls, dimension: int) -> "BoundarySpec":
        return cls(kind=BoundaryKind.NONE, dimension=dimension)

    @property
    def periodic_mask(self) -> np.ndarray:
        """Axes that wrap."""
        if self.kind == BoundaryKind.PERIODIC:
            return np.ones(self.dimension, dtype=bool)
        if self.kind == BoundaryKind.OPEN_BASE:
            mask = np.ones(self.dimension, dtype=bool)
            mask[-1] = False
            return mask
        return np.zeros(self.dimension, dtype=bool)

    @property
    def periods(self) -> np.ndarray:
        """Period along each axis; inf on non-periodic axes."""
        periods = np.full(self.dimension, np.inf)
        if self.kind == BoundaryKind.PERIODIC:
            periods[:] = self.extents
        elif self.kind == BoundaryKind.OPEN_BASE:
            periods[:-1] = self.extents
        return periods

    @property
    def is_bounded(self) -> bool:
        """True when the region has a finite volume independent of the spheres."""
        return self.kind in (BoundaryKind.PERIODIC, BoundaryKind.HARD)

    @property
    def gravity_axis(self) -> int | None:
        return self.dimension - 1 if self.kind == BoundaryKind.OPEN_BASE else None

    def volume(self) -> float:
        """Region volume (area in 2D) of a bounded region."""
        if not self.is_bounded:
            raise ValueError(f"{self.kind.value} boundary has no intrinsic volume")
        return float(np.prod(self.extents))


class Sphere(BaseModel):
    """A single sphere."""

    model_config = ConfigDict(frozen=True)

    center: Tuple[float, ...]
    radius: float = Field(..., gt=0)


class Provenance(BaseModel):
    """How a configuration was produced."""

    model_config = ConfigDict(frozen=True)

    algorithm: str = Field(default="unknown")
    parameters: Dict[str, Any] = Field(default_factory=dict)
    seed: int = Field(default=0, ge=0, lt=2**64)
    diagnostics: Dict[str, Any] = Field(default_factory=dict)


class Configuration(BaseModel):
    """A finite set of spheres inside a boundary, with provenance.

    Centers on periodic axes are stored wrapped into [0, L).
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    centers: FloatArray
    radii: FloatArray
    boundary: BoundarySpec
    provenance: Provenance = Field(default_factory=Provenance)

    @field_validator("centers")
    @classmethod
    def check_centers(cls, v: np.ndarray) -> np.ndarray:
        if v.ndim != 2:
            raise ValueError("centers must be an (n, d) array")
        if not np.all(np.isfinite(v)):
            raise ValueError("centers must be finite")
        return v

    @field_validator("radii")
    @classmethod
    def check_radii(cls, v: np.ndarray) -> np.ndarray:
        if v.ndim != 1:
            raise ValueError("radii must be a 1-d array")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ValueError("radii must be finite and positive")
        return v

    @model_validator(mode="before")
    @classmethod
    def wrap_periodic(cls, data: Any) -> Any:
        if not isinstance(data, dict) or "centers" not in data or "boundary" not in data:
            return data
        boundary = data["boundary"]
        if isinstance(boundary, dict):
            boundary = BoundarySpec.model_validate(boundary)
        centers = np.array(data["centers"], dtype=np.float64, copy=True)
        if centers.ndim == 2 and centers.shape[1] == boundary.dimension:
            mask = boundary.periodic_mask
            periods = boundary.periods
            centers[:, mask] = np.mod(centers[:, mask], periods[mask])
            # mod can round up to exactly L
            centers[:, mask] = np.where(centers[:, mask] >= periods[mask], 0.0, centers[:, mask])
        return {**data, "centers": centers, "boundary": boundary}

    @model_validator(mode="after")
    def check_consistency(self):
        n, d = self.centers.shape
        if d != self.boundary.dimension:
            raise DimensionMismatchError(
                f"centers are {d}-dimensional but boundary is {self.boundary.dimension}-dimensional"
            )
        if self.radii.shape[0] != n:
            raise ValueError(f"{n} centers but {self.radii.shape[0]} radii")
        if self.boundary.kind == BoundaryKind.HARD:
            upper = np.asarray(self.boundary.extents)
            if np.any(self.centers < 0) or np.any(self.centers > upper):
                raise ValueError("centers must lie inside the hard box")
        if self.boundary.kind == BoundaryKind.OPEN_BASE and np.any(self.centers[:, -1] < 0):
            raise ValueError("centers must lie above the base plane")
        return self

    @property
    def n(self) -> int:
        return int(self.centers.shape[0])

    @property
    def dimension(self) -> int:
        return int(self.centers.shape[1])

    @property
    def spheres(self) -> List[Sphere]:
        return [
            Sphere(center=tuple(float(x) for x in c), radius=float(r))
            for c, r in zip(self.centers, self.radii)
        ]

    @property
    def sphere_volumes(self) -> np.ndarray:
        return ball_volume(self.dimension) * self.radii**self.dimension

    def volume_fraction(self) -> float:
        """Nominal volume fraction of a periodic or hard box."""
        return float(self.sphere_volumes.sum() / self.boundary.volume())

    def region_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounds of the region (sphere extents where unbounded)."""
        d = self.dimension
        if self.boundary.is_bounded:
            return np.zeros(d), np.asarray(self.boundary.extents, dtype=float)
        if self.n == 0:
            return np.zeros(d), np.ones(d)
        lower = (self.centers - self.radii[:, None]).min(axis=0)
        upper = (self.centers + self.radii[:, None]).max(axis=0)
        if self.boundary.kind == BoundaryKind.OPEN_BASE:
            lower[:-1] = 0.0
            upper[:-1] = self.boundary.extents
            lower[-1] = 0.0
        return lower, upper

    def replace(self, **changes: Any) -> "Configuration":
        """Copy with validated changes."""
        data = {
            "centers": self.centers,
            "radii": self.radii,
            "boundary": self.boundary,
            "provenance": self.provenance,
        }
        data.update(changes)
        return Configuration(**data)


def ball_volume(dimension: int) -> float:
    """Volume of the unit ball (b_d)."""
    return math.pi ** (dimension / 2) / math.gamma(dimension / 2 + 1)
