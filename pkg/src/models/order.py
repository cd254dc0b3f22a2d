"""Bond-orientational order and planar defect models."""

from enum import Enum
from typing import Dict, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.models.arrays import FloatArray


class BondSource(str, Enum):
    """Where the bonds of a sphere come from."""

    CONTACTS = "contacts"
    NEIGHBORS = "neighbors"


class BondSet(BaseModel):
    """Unit bond vectors per sphere."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    vectors: Tuple[FloatArray, ...]
    sources: Tuple[BondSource, ...]

    @property
    def n(self) -> int:
        return len(self.vectors)

    def counts(self) -> np.ndarray:
        return np.array([len(v) for v in self.vectors], dtype=np.int64)


class OrderReport(BaseModel):
    """Per-sphere q_l and the two global averages.

    `local_mean[l]` averages the per-sphere q_l; `bond_sum[l]` sums the
    harmonics over every bond of the scored spheres before taking the norm.
    Excluded spheres (fewer than 2 bonds) have NaN per-sphere values.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    per_sphere: Dict[int, FloatArray]
    local_mean: Dict[int, float]
    bond_sum: Dict[int, float]
    scored: Tuple[int, ...]
    excluded: Tuple[int, ...]


class PlanarDefects(BaseModel):
    """Interior Delaunay vertices of a 2D packing grouped by degree."""

    model_config = ConfigDict(frozen=True)

    by_degree: Dict[int, int] = Field(default_factory=dict)
    defects: int
    interior: int
    fraction: float
