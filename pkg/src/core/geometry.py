"""Distances, neighbour indexing and pair search under boundary conditions."""

import itertools
from collections import defaultdict
from typing import Dict, Iterable, List, NamedTuple, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from src.core.exceptions import DimensionMismatchError, ValidationFailure
from src.models.packing import BoundaryKind, BoundarySpec, Configuration


def minimum_image(delta: np.ndarray, boundary: BoundarySpec) -> np.ndarray:
    """Apply the minimum-image convention on the periodic axes of `delta` (..., d)."""
    delta = np.asarray(delta, dtype=np.float64)
    mask = boundary.periodic_mask
    if not mask.any():
        return delta
    periods = boundary.periods[mask]
    wrapped = delta.copy()
    wrapped[..., mask] -= periods * np.round(delta[..., mask] / periods)
    return wrapped


def periodic_displacement(
    p: Sequence[float], q: Sequence[float], boundary: BoundarySpec
) -> np.ndarray:
    """Minimum-image displacement q - p.

    Non-periodic axes return the plain difference; OPEN_BASE wraps its lateral
    axes only.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.shape != (boundary.dimension,):
        raise DimensionMismatchError(
            f"points of shape {p.shape} and {q.shape} in a {boundary.dimension}D boundary"
        )
    return minimum_image(q - p, boundary)


class PairSet(NamedTuple):
    """Pairs i < j with their minimum-image displacement and distance."""

    i: np.ndarray
    j: np.ndarray
    delta: np.ndarray
    distance: np.ndarray


def build_kdtree(centers: np.ndarray, boundary: BoundarySpec, reach: float) -> cKDTree:
    """k-d tree that honours the periodic axes of `boundary` for queries up to `reach`.

    Non-periodic axes get a period large enough that wrapped images never fall
    within `reach`, so one toroidal tree serves every boundary kind.
    """
    centers = np.asarray(centers, dtype=np.float64)
    mask = boundary.periodic_mask
    if not mask.any():
        return cKDTree(centers)
    data = centers.copy()
    box = np.empty(boundary.dimension)
    box[mask] = boundary.periods[mask]
    for axis in np.flatnonzero(~mask):
        low = data[:, axis].min() if len(data) else 0.0
        high = data[:, axis].max() if len(data) else 0.0
        data[:, axis] -= low
        box[axis] = 2.0 * (high - low) + 2.0 * reach + 1.0
    data[:, mask] = np.mod(data[:, mask], box[mask])
    data[:, mask] = np.where(data[:, mask] >= box[mask], 0.0, data[:, mask])
    return cKDTree(data, boxsize=box)


def pair_search(config: Configuration, reach: float) -> PairSet:
    """All pairs whose centres are within `reach`, sorted by (i, j)."""
    if config.n < 2:
        empty = np.empty(0, dtype=np.int64)
        return PairSet(empty, empty, np.empty((0, config.dimension)), np.empty(0))
    tree = build_kdtree(config.centers, config.boundary, reach)
    pairs = tree.query_pairs(reach, output_type="ndarray")
    if len(pairs) == 0:
        empty = np.empty(0, dtype=np.int64)
        return PairSet(empty, empty, np.empty((0, config.dimension)), np.empty(0))
    pairs = np.sort(pairs, axis=1)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    pairs = pairs[order]
    i, j = pairs[:, 0].astype(np.int64), pairs[:, 1].astype(np.int64)
    delta = minimum_image(config.centers[j] - config.centers[i], config.boundary)
    return PairSet(i, j, delta, np.linalg.norm(delta, axis=1))


def min_gap(config: Configuration) -> float:
    """Minimum over pairs of centre distance minus both radii; negative means overlap."""
    if config.n < 2:
        raise ValidationFailure("min_gap needs at least 2 spheres")
    reach = 2.0 * float(config.radii.max())
    pairs = pair_search(config, reach)
    while len(pairs.i) == 0:
        reach *= 2.0
        pairs = pair_search(config, reach)
    gaps = pairs.distance - config.radii[pairs.i] - config.radii[pairs.j]
    return float(gaps.min())


def hull_points(
    lower: np.ndarray,
    upper: np.ndarray,
    scale: float = 10.0,
    axes: Sequence[int] | None = None,
) -> np.ndarray:
    """Synthetic points at `scale` region extents along +/- each axis from the centre."""
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    middle = 0.5 * (lower + upper)
    extent = max(float(np.max(upper - lower)), 1.0)
    d = len(middle)
    points = []
    for axis in range(d) if axes is None else axes:
        for sign in (-1.0, 1.0):
            point = middle.copy()
            point[axis] += sign * scale * extent
            points.append(point)
    return np.array(points)


MAX_SHELL_CELLS = 2_000_000


def clearance_length(centers: np.ndarray, radii: np.ndarray) -> float:
    """Larger of the largest diameter and the median nearest-neighbour distance."""
    diameter = 2.0 * float(np.max(radii))
    if len(centers) < 2:
        return max(diameter, 1e-9)
    distance, _ = cKDTree(centers).query(centers, k=2)
    return max(diameter, float(np.median(distance[:, 1])))


def surface_shell(
    points: np.ndarray,
    clearance: float,
    pad: float = 2.0,
    max_cells: int = MAX_SHELL_CELLS,
) -> np.ndarray:
    """Grid points hugging the outside of a point cloud.

    A grid of spacing clearance/2 covers the cloud bounds padded by `pad` clearances.
    Grid points at least `clearance` from every cloud point are empty; empty
    points connected to the border of the grid are outside, and outside
    points next to a non-empty grid point form the shell.
    """
    points = np.asarray(points, dtype=np.float64)
    d = points.shape[1]
    lower = points.min(axis=0) - pad * clearance
    upper = points.max(axis=0) + pad * clearance
    spacing = 0.5 * clearance
    while np.prod(np.ceil((upper - lower) / spacing) + 1) > max_cells:
        spacing *= 1.25
    axes = [np.arange(lo, hi + spacing, spacing) for lo, hi in zip(lower, upper)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    shape = grid.shape[:-1]
    flat = grid.reshape(-1, d)

    distance, _ = cKDTree(points).query(flat, distance_upper_bound=clearance)
    empty = (distance >= clearance).reshape(shape)

    labels, _ = ndimage.label(empty)
    border = np.zeros(shape, dtype=bool)
    for axis in range(d):
        border[(slice(None),) * axis + (0,)] = True
        border[(slice(None),) * axis + (-1,)] = True
    outside_labels = np.unique(labels[border & empty])
    outside = np.isin(labels, outside_labels[outside_labels > 0])
    shell = outside & ndimage.binary_dilation(~empty)
    return flat[shell.reshape(-1)]


class NeighborGrid:
    """Cell list over sphere centres.

    Cells are at least one maximum diameter wide. `query(p, r)` returns every
    indexed sphere whose centre lies within `r` of `p` (plus possibly others).
    Spheres may be added while a configuration is under construction.
    """

    def __init__(self, boundary: BoundarySpec, cell_size: float):
        if cell_size <= 0:
            raise ValidationFailure("cell size must be positive")
        self.boundary = boundary
        self.dimension = boundary.dimension
        self._mask = boundary.periodic_mask
        periods = boundary.periods
        self._counts = np.zeros(self.dimension, dtype=np.int64)
        self._cell = np.full(self.dimension, float(cell_size))
        for axis in range(self.dimension):
            if self._mask[axis]:
                count = max(1, int(np.floor(periods[axis] / cell_size)))
                self._counts[axis] = count
                self._cell[axis] = periods[axis] / count
        self._buckets: Dict[Tuple[int, ...], List[int]] = defaultdict(list)
        self._points: List[np.ndarray] = []

    @classmethod
    def from_configuration(
        cls, config: Configuration, cell_size: float | None = None
    ) -> "NeighborGrid":
        size = cell_size or 2.0 * float(config.radii.max() if config.n else 0.5)
        grid = cls(config.boundary, size)
        for point in config.centers:
            grid.add(point)
        return grid

    def __len__(self) -> int:
        return len(self._points)

    def _key(self, point: np.ndarray) -> Tuple[int, ...]:
        key = np.floor(point / self._cell).astype(np.int64)
        key[self._mask] = np.mod(key[self._mask], self._counts[self._mask])
        return tuple(int(k) for k in key)

    def add(self, point: Iterable[float]) -> int:
        """Index a new point; returns its index."""
        point = np.asarray(point, dtype=np.float64)
        index = len(self._points)
        self._points.append(point)
        self._buckets[self._key(point)].append(index)
        return index

    def move(self, index: int, point: Iterable[float]) -> None:
        """Re-index an existing point at a new location."""
        old = self._key(self._points[index])
        point = np.asarray(point, dtype=np.float64)
        new = self._key(point)
        if old != new:
            self._buckets[old].remove(index)
            self._buckets[new].append(index)
        self._points[index] = point

    def query(self, point: Iterable[float], radius: float) -> List[int]:
        """Candidate indices within `radius` of `point` (a superset)."""
        point = np.asarray(point, dtype=np.float64)
        low = np.floor((point - radius) / self._cell).astype(np.int64)
        high = np.floor((point + radius) / self._cell).astype(np.int64)
        ranges = []
        for axis in range(self.dimension):
            span = range(low[axis], high[axis] + 1)
            if self._mask[axis]:
                count = self._counts[axis]
                if high[axis] - low[axis] + 1 >= count:
                    span = range(count)
                else:
                    span = sorted({k % count for k in span})
            ranges.append(span)
        found: List[int] = []
        for key in itertools.product(*ranges):
            bucket = self._buckets.get(key)
            if bucket:
                found.extend(bucket)
        return found

    def query_exact(self, point: Iterable[float], radius: float) -> List[int]:
        """Indices whose centre is within `radius` of `point` (minimum image)."""
        point = np.asarray(point, dtype=np.float64)
        candidates = self.query(point, radius)
        if not candidates:
            return []
        others = np.array([self._points[c] for c in candidates])
        delta = minimum_image(others - point, self.boundary)
        close = np.einsum("ij,ij->i", delta, delta) <= radius * radius
        return [c for c, keep in zip(candidates, close) if keep]

    def points(self) -> np.ndarray:
        """Indexed points in insertion order."""
        return np.array(self._points, dtype=np.float64).reshape(-1, self.dimension)

    def pairs(self, radius: float) -> List[Tuple[int, int]]:
        """Index pairs i < j within `radius` of each other (minimum image)."""
        found = []
        for i, point in enumerate(self._points):
            found.extend((i, j) for j in self.query_exact(point, radius) if j > i)
        return sorted(found)


def build_neighbor_grid(config: Configuration, cell_size: float | None = None) -> NeighborGrid:
    """Cell list over the centres of `config`."""
    return NeighborGrid.from_configuration(config, cell_size)


class SpatialIndex:
    """k-d tree over sphere centres that also accepts query points.

    Periodic axes wrap. Non-periodic axes are shifted so that the centres
    and any query point within `reach` of them sit well inside an oversized
    period, which keeps wrapped images out of range.
    """

    def __init__(self, centers: np.ndarray, boundary: BoundarySpec, reach: float):
        centers = np.asarray(centers, dtype=np.float64).reshape(-1, boundary.dimension)
        self.boundary = boundary
        self._mask = boundary.periodic_mask
        self._offset = np.zeros(boundary.dimension)
        if not self._mask.any():
            self._box = None
            self.tree = cKDTree(centers)
            return
        box = np.array(boundary.periods, dtype=np.float64)
        for axis in np.flatnonzero(~self._mask):
            low = centers[:, axis].min() if len(centers) else 0.0
            high = centers[:, axis].max() if len(centers) else 0.0
            self._offset[axis] = low - reach
            box[axis] = 2.0 * (high - low + 2.0 * reach) + 1.0
        self._box = box
        self.tree = cKDTree(self.to_frame(centers), boxsize=box)

    def to_frame(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64)) - self._offset
        if self._box is not None:
            points = np.mod(points, self._box)
            points = np.where(points >= self._box, 0.0, points)
        return points

    def query(self, points: np.ndarray, k: int = 1):
        return self.tree.query(self.to_frame(points), k=k)

    def query_ball_point(self, points: np.ndarray, radius: float):
        return self.tree.query_ball_point(self.to_frame(points), radius)


def surface_distance(config: Configuration, points: np.ndarray) -> np.ndarray:
    """Signed distance from each point to the nearest sphere surface (negative inside)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if config.n == 0:
        return np.full(len(points), np.inf)
    r_max = float(config.radii.max())
    spread = r_max - float(config.radii.min())
    index = SpatialIndex(config.centers, config.boundary, 4.0 * r_max)
    nearest, which = index.query(points, k=1)
    if spread < 1e-12:
        return nearest - config.radii[which]
    result = np.empty(len(points))
    for p, (point, first) in enumerate(zip(points, nearest)):
        close = index.query_ball_point(point, first + spread)[0]
        delta = minimum_image(config.centers[close] - point, config.boundary)
        result[p] = float((np.linalg.norm(delta, axis=1) - config.radii[close]).min())
    return result
