"""Delaunay triangulation, Voronoi tessellation and cell-based statistics."""

import itertools
import math
from collections import defaultdict
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy.spatial import ConvexHull, Delaunay, QhullError, Voronoi

from src.core.config import settings
from src.core.exceptions import TriangulationError, ValidationFailure
from src.core.geometry import hull_points, clearance_length, surface_shell
from src.core.logging import get_logger
from src.models.network import ContactNetwork
from src.models.packing import BoundaryKind, Configuration
from src.models.tessellation import (
    SYNTHETIC,
    CellRecord,
    CellStats,
    EscapeFraction,
    GammaFit,
    Histogram,
    LocalDensity,
    SimplexShape,
    SimplexShapeReport,
    Summary,
    Tessellation,
    TopologicalDensity,
    Triangulation,
    VoronoiCell,
    VoronoiFace,
)

logger = get_logger(__name__)

RECORD_FIELDS = (
    "volume",
    "surface",
    "min_angle",
    "max_angle",
    "min_edge",
    "max_edge",
    "face_count",
)

# edge-length profile of a quarter octahedron, sorted ascending
QUARTER_OCTAHEDRON = np.array([1.0, 1.0, 1.0, 1.0, 1.0, math.sqrt(2.0)])


class VertexSet(NamedTuple):
    """Points handed to qhull: primaries, periodic images, synthetic hull points."""

    points: np.ndarray
    origin: np.ndarray
    is_image: np.ndarray


class TessellationService:
    """Builds triangulations and tessellations and measures their cells."""

    def __init__(self, ghost_margin: Optional[float] = None, hull_scale: Optional[float] = None):
        self.ghost_margin = settings.ghost_margin if ghost_margin is None else ghost_margin
        self.hull_scale = settings.hull_scale if hull_scale is None else hull_scale

    # ------------------------------------------------------------------
    # construction
    # ------------------------------------------------------------------

    def vertex_set(self, config: Configuration) -> VertexSet:
        """Primary centres, periodic ghosts within the margin, and synthetic points.

        Non-periodic packings get a shell of grid points hugging their outer
        surface plus far hull points; spheres linked to either are boundary.
        """
        n, d = config.n, config.dimension
        boundary = config.boundary
        centers = config.centers
        points = [centers]
        origin = [np.arange(n, dtype=np.int64)]
        image = [np.zeros(n, dtype=bool)]

        mask = boundary.periodic_mask
        if mask.any() and n:
            periods = np.where(mask, boundary.periods, 0.0)
            margin = self.ghost_margin
            ranges = []
            for axis in range(d):
                if mask[axis]:
                    k = int(math.ceil(margin / periods[axis]))
                    ranges.append(range(-k, k + 1))
                else:
                    ranges.append(range(0, 1))
            for shift in itertools.product(*ranges):
                if not any(shift):
                    continue
                moved = centers + np.asarray(shift, dtype=np.float64) * periods
                inside = (moved[:, mask] >= -margin) & (moved[:, mask] <= periods[mask] + margin)
                keep = np.all(inside, axis=1)
                if keep.any():
                    points.append(moved[keep])
                    origin.append(np.flatnonzero(keep).astype(np.int64))
                    image.append(np.ones(int(keep.sum()), dtype=bool))

        if boundary.kind != BoundaryKind.PERIODIC and n:
            lower, upper = config.region_bounds()
            axes = [d - 1] if boundary.kind == BoundaryKind.OPEN_BASE else None
            clearance = clearance_length(centers, config.radii)
            synthetic = np.vstack(
                [
                    surface_shell(np.vstack(points), clearance),
                    hull_points(lower, upper, self.hull_scale, axes),
                ]
            )
            points.append(synthetic)
            origin.append(np.full(len(synthetic), SYNTHETIC, dtype=np.int64))
            image.append(np.zeros(len(synthetic), dtype=bool))

        return VertexSet(np.vstack(points), np.concatenate(origin), np.concatenate(image))

    def _check_spread(self, config: Configuration) -> None:
        if config.boundary.periodic_mask.any() or config.n < 2:
            return
        centred = config.centers - config.centers.mean(axis=0)
        scale = max(float(np.abs(centred).max()), 1.0)
        rank = np.linalg.matrix_rank(centred, tol=1e-9 * scale)
        if rank < min(config.n - 1, config.dimension):
            raise TriangulationError(
                f"{config.n} centres span only {rank} dimensions; points are collinear or coplanar"
            )

    def delaunay(self, config: Configuration) -> Triangulation:
        """Delaunay triangulation of the sphere centres with ghosts and hull points."""
        self._check_spread(config)
        vertices = self.vertex_set(config)
        d = config.dimension
        if len(vertices.points) < d + 1:
            raise TriangulationError(f"need at least {d + 1} points, got {len(vertices.points)}")
        try:
            qhull = Delaunay(vertices.points)
        except QhullError as exc:
            raise TriangulationError(f"triangulation failed: {exc}") from exc

        n = config.n
        primary = np.zeros(len(vertices.points), dtype=bool)
        primary[:n] = True
        simplices = qhull.simplices[primary[qhull.simplices].any(axis=1)]

        pairs = list(itertools.combinations(range(d + 1), 2))
        u = simplices[:, [a for a, _ in pairs]].ravel()
        v = simplices[:, [b for _, b in pairs]].ravel()
        ou, ov = vertices.origin[u], vertices.origin[v]

        linked = np.concatenate(
            [u[(ov == SYNTHETIC) & primary[u]], v[(ou == SYNTHETIC) & primary[v]]]
        )
        real = (ou != SYNTHETIC) & (ov != SYNTHETIC) & (ou != ov)
        edges = np.sort(np.stack([ou[real], ov[real]], axis=1), axis=1)
        edges = np.unique(edges, axis=0) if len(edges) else np.empty((0, 2), dtype=np.int64)

        logger.debug(
            "delaunay_built",
            n=n,
            points=len(vertices.points),
            simplices=len(simplices),
            edges=len(edges),
        )
        return Triangulation(
            n_spheres=n,
            dimension=d,
            points=vertices.points,
            origin=vertices.origin,
            is_image=vertices.is_image,
            simplices=simplices.astype(np.int64),
            edges=edges.astype(np.int64),
            hull_linked=np.unique(linked).astype(np.int64),
        )

    def voronoi(self, config: Configuration) -> Tessellation:
        """Voronoi cells of every sphere, built over the same vertex set as `delaunay`."""
        self._check_spread(config)
        vertices = self.vertex_set(config)
        try:
            qhull = Voronoi(vertices.points)
        except QhullError as exc:
            raise TriangulationError(f"tessellation failed: {exc}") from exc

        n = config.n
        ridges: Dict[int, List[Tuple[int, List[int]]]] = defaultdict(list)
        for (a, b), ridge in zip(qhull.ridge_points, qhull.ridge_vertices):
            if a < n:
                ridges[int(a)].append((int(b), ridge))
            if b < n:
                ridges[int(b)].append((int(a), ridge))

        cells = tuple(
            self._cell(qhull, vertices.origin, index, ridges[index], config.dimension)
            for index in range(n)
        )
        unbounded = sum(not c.bounded for c in cells)
        if unbounded:
            logger.debug("voronoi_unbounded_cells", count=unbounded)
        return Tessellation(dimension=config.dimension, cells=cells)

    def _cell(
        self,
        qhull: Voronoi,
        origin: np.ndarray,
        index: int,
        ridges: List[Tuple[int, List[int]]],
        dimension: int,
    ) -> VoronoiCell:
        region = qhull.regions[qhull.point_region[index]]
        empty = np.empty((0, dimension))
        if not region or -1 in region:
            return VoronoiCell(sphere=index, bounded=False, vertices=empty)
        local = {g: k for k, g in enumerate(region)}
        faces = []
        for other, ridge in ridges:
            if -1 in ridge:
                continue
            if dimension == 3:
                normal = qhull.points[other] - qhull.points[index]
                ridge = _order_face(qhull.vertices, ridge, normal)
            faces.append(
                VoronoiFace(neighbor=int(origin[other]), vertices=tuple(local[g] for g in ridge))
            )
        cell_vertices = qhull.vertices[region]
        try:
            hull = ConvexHull(cell_vertices)
        except QhullError:
            return VoronoiCell(sphere=index, bounded=False, vertices=empty)
        return VoronoiCell(
            sphere=index,
            bounded=True,
            vertices=cell_vertices,
            faces=tuple(faces),
            volume=float(hull.volume),
            surface=float(hull.area),
        )

    # ------------------------------------------------------------------
    # cell statistics
    # ------------------------------------------------------------------

    def cell_record(self, cell: VoronoiCell, dimension: int) -> CellRecord:
        """Volume, surface, angle and edge extremes of one bounded cell (angles in radians)."""
        polygons = _cell_polygons(cell, dimension)
        lengths: List[float] = []
        angles: List[float] = []
        for polygon in polygons:
            edge_lengths, corner_angles = _polygon_measures(polygon)
            lengths.extend(edge_lengths)
            angles.extend(corner_angles)
        return CellRecord(
            sphere=cell.sphere,
            volume=cell.volume,
            surface=cell.surface,
            min_angle=min(angles) if angles else float("nan"),
            max_angle=max(angles) if angles else float("nan"),
            min_edge=min(lengths) if lengths else float("nan"),
            max_edge=max(lengths) if lengths else float("nan"),
            face_count=cell.face_count,
        )

    def cell_statistics(
        self,
        tess: Tessellation,
        spheres: Optional[Iterable[int]] = None,
        field: str = "volume",
        bins: int | Sequence[float] = 20,
    ) -> CellStats:
        """Records, summaries, a histogram and a gamma fit over the given (interior) cells."""
        ids = range(len(tess.cells)) if spheres is None else spheres
        records = tuple(
            self.cell_record(tess.cells[i], tess.dimension) for i in ids if tess.cells[i].bounded
        )
        if not records:
            raise ValidationFailure("cell statistics need at least one bounded cell")
        return CellStats(
            records=records,
            summary=summarize(records),
            histogram=self.histogram(records, field, bins),
            gamma_fit=gamma_moments([r.volume for r in records]),
        )

    def histogram(
        self, records: Sequence[CellRecord], field: str, bins: int | Sequence[float] = 20
    ) -> Histogram:
        if field not in RECORD_FIELDS:
            raise ValidationFailure(f"unknown cell record field '{field}'")
        values = np.array([getattr(r, field) for r in records], dtype=np.float64)
        values = values[np.isfinite(values)]
        counts, edges = np.histogram(values, bins=bins)
        return Histogram(field=field, edges=edges.tolist(), counts=counts.tolist())

    def local_density(
        self, config: Configuration, tess: Tessellation, spheres: Optional[Iterable[int]] = None
    ) -> LocalDensity:
        """Sphere volume over Voronoi cell volume; unbounded cells are excluded and listed."""
        ids = range(config.n) if spheres is None else spheres
        volumes = config.sphere_volumes
        values: Dict[int, float] = {}
        excluded: List[int] = []
        for i in ids:
            cell = tess.cells[i]
            if cell.bounded and cell.volume > 0:
                values[int(i)] = float(volumes[i] / cell.volume)
            else:
                excluded.append(int(i))
        return LocalDensity(values=values, excluded=tuple(excluded))

    def escape_fraction(
        self,
        config: Configuration,
        tess: Tessellation,
        spheres: Optional[Iterable[int]] = None,
        r_grid: Optional[np.ndarray] = None,
    ) -> EscapeFraction:
        """Largest sphere able to leave each cell through a gap between neighbours.

        In 2D the gap of a cell corner is the circumcircle of the three discs
        meeting there; in 3D each cell edge is bounded by a ring of spheres and
        its narrowest point is the circumcentre of that ring. The escape radius
        is the widest such gap, less the sphere radius, floored at zero.
        """
        ids = range(config.n) if spheres is None else spheres
        radii: Dict[int, float] = {}
        for i in ids:
            cell = tess.cells[i]
            if not cell.bounded:
                continue
            centre = config.centers[i]
            if tess.dimension == 2:
                reach = float(np.linalg.norm(cell.vertices - centre, axis=1).max())
            else:
                reach = max(
                    _segment_distance(centre, cell.vertices[a], cell.vertices[b])
                    for a, b in _cell_edges(cell)
                )
            radii[int(i)] = max(0.0, reach - float(config.radii[i]))

        values = np.sort(np.fromiter(radii.values(), dtype=np.float64, count=len(radii)))
        if r_grid is None:
            top = float(values.max()) * 1.1 if len(values) and values.max() > 0 else 1.0
            r_grid = np.linspace(0.0, top, 101)
        r_grid = np.asarray(r_grid, dtype=np.float64)
        if len(values):
            ecdf = np.searchsorted(values, r_grid, side="right") / len(values)
        else:
            ecdf = np.full(len(r_grid), np.nan)
        return EscapeFraction(radii=radii, r_grid=r_grid, ecdf=ecdf)

    def topological_density(
        self, net: ContactNetwork, roots: Iterable[int], max_shell: int = 5
    ) -> TopologicalDensity:
        """Shell sizes around each root in the contact graph and their quadratic fit."""
        if max_shell < 3:
            raise ValidationFailure("a quadratic shell fit needs at least 3 shells")
        graph = net.to_graph()
        shell_counts: Dict[int, List[int]] = {}
        for root in roots:
            distances = nx.single_source_shortest_path_length(graph, int(root), cutoff=max_shell)
            counts = np.bincount(list(distances.values()), minlength=max_shell + 1)
            if counts[max_shell] == 0:
                raise ValidationFailure(
                    f"sphere {root} reaches only {int(max(distances.values()))} contact shells"
                )
            shell_counts[int(root)] = counts[1 : max_shell + 1].tolist()
        if not shell_counts:
            raise ValidationFailure("no root spheres given")
        mean = np.mean(list(shell_counts.values()), axis=0)
        shells = np.arange(1, max_shell + 1, dtype=np.float64)
        quadratic, linear, constant = np.polyfit(shells, mean, 2)
        return TopologicalDensity(
            shell_counts=shell_counts,
            mean_counts=mean.tolist(),
            quadratic=float(quadratic),
            linear=float(linear),
            constant=float(constant),
        )

    def simplex_shape_metrics(self, tri: Triangulation) -> SimplexShapeReport:
        """Tetrahedricity and quarter-octahedricity of every real Delaunay tetrahedron."""
        if tri.dimension != 3:
            raise ValidationFailure("simplex shape metrics are defined for tetrahedra only")
        shapes = []
        skipped = 0
        for simplex in tri.real_simplices():
            try:
                t, q = simplex_shape(tri.points[simplex])
            except TriangulationError:
                skipped += 1
                continue
            shapes.append(
                SimplexShape(
                    vertices=tuple(int(k) for k in tri.origin[simplex]),
                    tetrahedricity=t,
                    quartoctahedricity=q,
                )
            )
        if skipped:
            logger.info("degenerate_simplices_skipped", count=skipped)
        return SimplexShapeReport(
            simplices=tuple(shapes),
            mean_tetrahedricity=(
                float(np.mean([s.tetrahedricity for s in shapes])) if shapes else float("nan")
            ),
            mean_quartoctahedricity=(
                float(np.mean([s.quartoctahedricity for s in shapes])) if shapes else float("nan")
            ),
            skipped=skipped,
            note=f"{skipped} flat simplices skipped" if skipped else None,
        )


def simplex_shape(points: np.ndarray) -> Tuple[float, float]:
    """(T, Q) of one tetrahedron from its four vertices.

    T = sum_{i<j} (l_i - l_j)^2 / (15 lbar^2) over the six edge lengths.
    Q is the squared residual of the sorted lengths against the best-scaled
    quarter-octahedron profile (1, 1, 1, 1, 1, sqrt 2), over 6 lbar^2.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.shape != (4, 3):
        raise TriangulationError(f"a tetrahedron needs 4 points in 3D, got {points.shape}")
    lengths = np.array(
        [np.linalg.norm(points[a] - points[b]) for a, b in itertools.combinations(range(4), 2)]
    )
    mean = float(lengths.mean())
    volume = abs(np.linalg.det(points[1:] - points[0])) / 6.0
    if mean <= 0 or volume <= 1e-12 * mean**3:
        raise TriangulationError("degenerate simplex")
    diffs = lengths[:, None] - lengths[None, :]
    t = float(np.sum(np.triu(diffs, 1) ** 2) / (15.0 * mean**2))
    ordered = np.sort(lengths)
    scale = float(ordered @ QUARTER_OCTAHEDRON / (QUARTER_OCTAHEDRON @ QUARTER_OCTAHEDRON))
    q = float(np.sum((ordered - scale * QUARTER_OCTAHEDRON) ** 2) / (6.0 * mean**2))
    return t, q


def gamma_moments(values: Sequence[float]) -> GammaFit:
    """Method-of-moments gamma fit: shape = mean^2/var, scale = var/mean."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        return GammaFit(shape=float("nan"), scale=0.0, degenerate=True)
    mean = float(values.mean())
    var = float(values.var(ddof=1))
    if mean <= 0 or var <= 1e-12 * mean * mean:
        return GammaFit(shape=float("nan"), scale=0.0, degenerate=True)
    return GammaFit(shape=mean * mean / var, scale=var / mean)


def summarize(records: Sequence[CellRecord]) -> Dict[str, Summary]:
    summary = {}
    for field in RECORD_FIELDS:
        values = np.array([getattr(r, field) for r in records], dtype=np.float64)
        values = values[np.isfinite(values)]
        if not len(values):
            continue
        summary[field] = Summary(
            mean=float(values.mean()),
            sd=float(values.std(ddof=1)) if len(values) > 1 else 0.0,
            min=float(values.min()),
            max=float(values.max()),
        )
    return summary


def _order_face(vertices: np.ndarray, ridge: Sequence[int], normal: np.ndarray) -> List[int]:
    """Order a planar 3D face cyclically about its centroid."""
    pts = vertices[ridge]
    centre = pts.mean(axis=0)
    normal = normal / np.linalg.norm(normal)
    offsets = pts - centre
    radial = offsets - np.outer(offsets @ normal, normal)
    u = radial[int(np.argmax(np.linalg.norm(radial, axis=1)))]
    u = u / np.linalg.norm(u)
    w = np.cross(normal, u)
    angles = np.arctan2(offsets @ w, offsets @ u)
    return [ridge[k] for k in np.argsort(angles, kind="stable")]


def _cell_polygons(cell: VoronoiCell, dimension: int) -> List[np.ndarray]:
    if dimension == 2:
        offsets = cell.vertices - cell.vertices.mean(axis=0)
        order = np.argsort(np.arctan2(offsets[:, 1], offsets[:, 0]), kind="stable")
        return [cell.vertices[order]]
    return [cell.vertices[list(face.vertices)] for face in cell.faces if len(face.vertices) >= 3]


def _polygon_measures(polygon: np.ndarray, tol: float = 1e-10) -> Tuple[List[float], List[float]]:
    """Edge lengths and interior angles of a convex polygon given in cyclic order."""
    step = np.linalg.norm(np.roll(polygon, -1, axis=0) - polygon, axis=1)
    polygon = polygon[step > tol]
    if len(polygon) < 3:
        return [], []
    ahead = np.roll(polygon, -1, axis=0) - polygon
    behind = np.roll(polygon, 1, axis=0) - polygon
    lengths = np.linalg.norm(ahead, axis=1)
    cosines = np.einsum("ij,ij->i", ahead, behind) / (lengths * np.linalg.norm(behind, axis=1))
    angles = np.arccos(np.clip(cosines, -1.0, 1.0))
    return lengths.tolist(), angles.tolist()


def _cell_edges(cell: VoronoiCell) -> set:
    edges = set()
    for face in cell.faces:
        ring = face.vertices
        for a, b in zip(ring, ring[1:] + ring[:1]):
            if a != b:
                edges.add((min(a, b), max(a, b)))
    return edges


def _segment_distance(point: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    length2 = float(ab @ ab)
    t = 0.0 if length2 == 0 else min(1.0, max(0.0, float((point - a) @ ab) / length2))
    return float(np.linalg.norm(a + t * ab - point))


tessellation_service = TessellationService()
