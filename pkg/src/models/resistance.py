"""Resistor-network models for structurally determined statistics."""

from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.models.arrays import FloatArray, IntArray


class ElectrodeSpec(BaseModel):
    """Two disjoint sphere sets held at potential 1 (source) and 0 (sink)."""

    model_config = ConfigDict(frozen=True)

    source: Tuple[int, ...]
    sink: Tuple[int, ...]
    axis: Optional[int] = None

    @model_validator(mode="after")
    def check_sets(self):
        if not self.source or not self.sink:
            raise ValueError("electrode sets must be nonempty")
        if set(self.source) & set(self.sink):
            raise ValueError("electrode sets must be disjoint")
        return self

    def swapped(self) -> "ElectrodeSpec":
        return ElectrodeSpec(source=self.sink, sink=self.source, axis=self.axis)


class ResistorNetwork(BaseModel):
    """Sphere nodes joined by conductances, with electrode sets."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    n: int = Field(..., ge=1)
    edges: IntArray
    conductances: FloatArray
    electrodes: ElectrodeSpec

    @model_validator(mode="after")
    def check_edges(self):
        edges = self.edges.reshape(-1, 2)
        if len(edges) != len(self.conductances):
            raise ValueError("one conductance per edge")
        if np.any(self.conductances < 0):
            raise ValueError("conductances must be non-negative")
        if len(edges) and (edges.min() < 0 or edges.max() >= self.n):
            raise ValueError("edge endpoints out of range")
        return self


class PotentialField(BaseModel):
    """Node potentials (NaN on components without an electrode) and Kirchhoff residual."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    potentials: FloatArray
    residual: float


class BulkResistance(BaseModel):
    """Resistance between the electrodes at unit potential difference.

    `currents[k]` flows along edge k from its first to its second node.
    Disconnected electrodes give an infinite resistance and no field.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    resistance: float
    connected: bool
    total_current: float
    field: Optional[PotentialField] = None
    currents: Optional[FloatArray] = None
    solver: str = "none"

    @property
    def conductance(self) -> float:
        return 1.0 / self.resistance if self.connected else 0.0


class ConductanceCurve(BaseModel):
    """Bulk conductance as the spheres are inflated by each factor."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    expansions: FloatArray
    conductances: FloatArray
    edge_counts: IntArray


class AnisotropyResult(BaseModel):
    """Axis-relabelling permutation test on per-axis log resistances."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    axes: Tuple[int, ...]
    resistances: FloatArray
    axis_means: FloatArray
    statistic: float
    p_value: float
    n_permutations: int
