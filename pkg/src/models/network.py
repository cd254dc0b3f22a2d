"""Contact rules, contact networks and sphere partitions."""

import math
from enum import Enum
from typing import Annotated, Dict, List, Literal, Optional, Tuple, Union

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.models.arrays import FloatArray, IntArray


class StochasticDecision(str, Enum):
    """How a Gaussian contact rule turns a gap into a decision."""

    DETERMINISTIC = "deterministic"
    SEEDED = "seeded"


class HardTolerance(BaseModel):
    """Accept a pair as touching when its gap is at most epsilon."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["hard_tolerance"] = "hard_tolerance"
    epsilon: float = Field(default=1e-6, ge=0.0)

    @property
    def acceptance_bound(self) -> float:
        return self.epsilon


class GaussianRule(BaseModel):
    """Gaussian gap model: threshold at `cutoff`, or accept with probability
    Phi((cutoff - gap) / sigma) drawn from `seed`."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["gaussian"] = "gaussian"
    sigma: float = Field(..., gt=0.0)
    cutoff: float = Field(..., ge=0.0)
    decision: StochasticDecision = StochasticDecision.DETERMINISTIC
    seed: int = Field(default=0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def check_finite(self):
        if not (math.isfinite(self.sigma) and math.isfinite(self.cutoff)):
            raise ValueError("gaussian rule parameters must be finite")
        return self

    @property
    def acceptance_bound(self) -> float:
        # seeded decisions can accept any gap with positive probability
        if self.decision == StochasticDecision.SEEDED:
            return math.inf
        return self.cutoff


ContactRule = Annotated[Union[HardTolerance, GaussianRule], Field(discriminator="kind")]


class WallContact(BaseModel):
    """A sphere touching a confining plane."""

    model_config = ConfigDict(frozen=True)

    sphere: int = Field(..., ge=0)
    axis: int = Field(..., ge=0)
    side: Literal["low", "high"]
    gap: float

    @property
    def normal(self) -> Tuple[int, int]:
        """(axis, sign) of the unit vector from the centre towards the wall."""
        return self.axis, (-1 if self.side == "low" else 1)


class ContactNetwork(BaseModel):
    """Graph on sphere indices whose edges are contacts under `rule`.

    `candidate_*` hold every triangulation edge with its gap, so neighbour
    structure stays available to rattler detection and order metrics.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    n: int = Field(..., ge=0)
    edges: IntArray
    gaps: FloatArray
    wall_contacts: Tuple[WallContact, ...] = ()
    rule: ContactRule
    candidate_edges: IntArray
    candidate_gaps: FloatArray

    @model_validator(mode="after")
    def check_edges(self):
        for name in ("edges", "candidate_edges"):
            edges = getattr(self, name)
            if edges.size and (edges.ndim != 2 or edges.shape[1] != 2):
                raise ValueError(f"{name} must be an (m, 2) array")
            if edges.size and np.any(edges[:, 0] >= edges[:, 1]):
                raise ValueError(f"{name} must be stored as i < j without self-edges")
        return self

    @property
    def edge_list(self) -> List[Tuple[int, int]]:
        return [(int(i), int(j)) for i, j in self.edges.reshape(-1, 2)]

    def degrees(self) -> np.ndarray:
        """Sphere-sphere contact count per sphere (walls excluded)."""
        degree = np.zeros(self.n, dtype=np.int64)
        if self.edges.size:
            np.add.at(degree, self.edges[:, 0], 1)
            np.add.at(degree, self.edges[:, 1], 1)
        return degree

    def contacts_of(self, index: int) -> List[int]:
        if not self.edges.size:
            return []
        rows = self.edges[(self.edges[:, 0] == index) | (self.edges[:, 1] == index)]
        return sorted(int(j if i == index else i) for i, j in rows)

    def walls_of(self, index: int) -> List[WallContact]:
        return [w for w in self.wall_contacts if w.sphere == index]

    def neighbors_of(self, index: int) -> List[int]:
        """Triangulation (Voronoi) neighbours, contact or not."""
        if not self.candidate_edges.size:
            return []
        e = self.candidate_edges
        rows = e[(e[:, 0] == index) | (e[:, 1] == index)]
        return sorted(int(j if i == index else i) for i, j in rows)

    def to_graph(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n))
        for (i, j), gap in zip(self.edge_list, self.gaps):
            graph.add_edge(i, j, gap=float(gap))
        return graph


class SpherePartition(BaseModel):
    """Interior / boundary / free-boundary classification.

    `free_boundary` is the subset of `boundary` that fails the local jam check.
    """

    model_config = ConfigDict(frozen=True)

    interior: Tuple[int, ...]
    boundary: Tuple[int, ...]
    free_boundary: Tuple[int, ...] = ()

    @model_validator(mode="after")
    def check_disjoint(self):
        if set(self.interior) & set(self.boundary):
            raise ValueError("interior and boundary sets overlap")
        if not set(self.free_boundary) <= set(self.boundary):
            raise ValueError("free-boundary spheres must be boundary spheres")
        return self


class CoordinationReport(BaseModel):
    """Coordination number histograms; the mean is over interior spheres."""

    interior_histogram: Dict[int, int]
    boundary_histogram: Dict[int, int]
    mean: float
    interior_count: int
    wall_contact_count: int = 0


class Components(BaseModel):
    """Connected-component labels, numbered by smallest member index."""

    labels: Tuple[int, ...]
    count: int
    sizes: Tuple[int, ...]


class JamSummary(BaseModel):
    """Per-configuration jamming summary."""

    jammed: Tuple[int, ...]
    rattlers: Tuple[int, ...]
    jammed_fraction: float
    rattler_fraction: float
    gravity: bool = False
    scored: Optional[Tuple[int, ...]] = None
