"""Delaunay triangulation, Voronoi tessellation and cell statistics models."""

from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.models.arrays import BoolArray, FloatArray, IntArray

SYNTHETIC = -1


class Triangulation(BaseModel):
    """Delaunay triangulation over sphere centres.

    `points` holds the primary centres first (index == sphere index), then
    periodic image copies, then synthetic hull points. `origin` maps each
    vertex back to its sphere (SYNTHETIC for hull points). `edges` are
    sphere-index pairs i < j, deduplicated across periodic images.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    n_spheres: int = Field(..., ge=0)
    dimension: int = Field(..., ge=2, le=3)
    points: FloatArray
    origin: IntArray
    is_image: BoolArray
    simplices: IntArray
    edges: IntArray
    hull_linked: IntArray

    @property
    def synthetic_mask(self) -> np.ndarray:
        return self.origin == SYNTHETIC

    def neighbors(self) -> List[List[int]]:
        """Adjacency lists over sphere indices."""
        adjacency: List[List[int]] = [[] for _ in range(self.n_spheres)]
        for i, j in self.edges.reshape(-1, 2):
            adjacency[int(i)].append(int(j))
            adjacency[int(j)].append(int(i))
        return [sorted(a) for a in adjacency]

    def degrees(self) -> np.ndarray:
        degree = np.zeros(self.n_spheres, dtype=np.int64)
        if self.edges.size:
            np.add.at(degree, self.edges[:, 0], 1)
            np.add.at(degree, self.edges[:, 1], 1)
        return degree

    def real_simplices(self) -> np.ndarray:
        """Simplices without synthetic vertices, one copy per periodic image class.

        A copy is kept when its vertex with the smallest sphere index is the
        primary (non-image) point of that sphere.
        """
        simplices = self.simplices.reshape(-1, self.dimension + 1)
        if not len(simplices):
            return simplices
        owners = self.origin[simplices]
        keep = np.all(owners != SYNTHETIC, axis=1)
        simplices, owners = simplices[keep], owners[keep]
        lead = simplices[np.arange(len(simplices)), np.argmin(owners, axis=1)]
        return simplices[~self.is_image[lead]]


class VoronoiFace(BaseModel):
    """A cell face shared with `neighbor` (SYNTHETIC when it faces a hull point).

    `vertices` index into the owning cell's vertex array, in cyclic order.
    """

    model_config = ConfigDict(frozen=True)

    neighbor: int
    vertices: Tuple[int, ...]


class VoronoiCell(BaseModel):
    """Bounded Voronoi cell of one sphere."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    sphere: int
    bounded: bool
    vertices: FloatArray
    faces: Tuple[VoronoiFace, ...] = ()
    volume: float = float("nan")
    surface: float = float("nan")

    @property
    def neighbors(self) -> Tuple[int, ...]:
        return tuple(sorted({f.neighbor for f in self.faces if f.neighbor != SYNTHETIC}))

    @property
    def face_count(self) -> int:
        return len(self.faces)


class Tessellation(BaseModel):
    """Voronoi cells of every sphere."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    dimension: int
    cells: Tuple[VoronoiCell, ...]

    def cell(self, sphere: int) -> VoronoiCell:
        return self.cells[sphere]

    def volumes(self) -> np.ndarray:
        return np.array([c.volume for c in self.cells])


class CellRecord(BaseModel):
    """Per-cell measurements (area/perimeter in 2D, volume/surface in 3D)."""

    sphere: int
    volume: float
    surface: float
    min_angle: float
    max_angle: float
    min_edge: float
    max_edge: float
    face_count: int


class Summary(BaseModel):
    mean: float
    sd: float
    min: float
    max: float


class Histogram(BaseModel):
    field: str
    edges: List[float]
    counts: List[int]


class GammaFit(BaseModel):
    """Method-of-moments gamma fit to cell volumes."""

    shape: float
    scale: float
    degenerate: bool = False


class CellStats(BaseModel):
    records: Tuple[CellRecord, ...]
    summary: Dict[str, Summary]
    histogram: Histogram
    gamma_fit: GammaFit


class LocalDensity(BaseModel):
    """Sphere volume over cell volume, per sphere."""

    values: Dict[int, float]
    excluded: Tuple[int, ...] = ()

    def array(self) -> np.ndarray:
        return np.array([self.values[k] for k in sorted(self.values)])


class EscapeFraction(BaseModel):
    """Largest escaping sphere per cell and its empirical CDF on a grid."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    radii: Dict[int, float]
    r_grid: FloatArray
    ecdf: FloatArray

    def median(self) -> float:
        return float(np.median(list(self.radii.values()))) if self.radii else float("nan")


class TopologicalDensity(BaseModel):
    """Contact-graph shell counts and their quadratic fit a*k^2 + b*k + c."""

    shell_counts: Dict[int, List[int]]
    mean_counts: List[float]
    quadratic: float
    linear: float
    constant: float


class SimplexShape(BaseModel):
    """Edge-length shape measures of one Delaunay tetrahedron."""

    vertices: Tuple[int, int, int, int]
    tetrahedricity: float
    quartoctahedricity: float


class SimplexShapeReport(BaseModel):
    simplices: Tuple[SimplexShape, ...]
    mean_tetrahedricity: float
    mean_quartoctahedricity: float
    skipped: int = 0
    note: Optional[str] = None
