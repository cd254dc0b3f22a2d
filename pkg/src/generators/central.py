"""Greedy central placement: each sphere goes to the free touching spot nearest the origin."""

import heapq
import itertools
import math
from typing import List, Tuple

import numpy as np

from src.core.exceptions import SaturationError
from src.core.geometry import NeighborGrid
from src.core.logging import get_logger
from src.generators.base import PackingGenerator
from src.models.generator import BennettCentral
from src.models.packing import BoundarySpec, Configuration

logger = get_logger(__name__)

TIE_TOL = 1e-12
OVERLAP_TOL = 1e-10


def seed_cluster(dimension: int, radius: float, shape: str = "simplex") -> np.ndarray:
    """Mutually touching starter cluster centred on the origin.

    "simplex" is a triangle (2D) or regular tetrahedron (3D); "square" is a
    square of four discs (2D) or a square pyramid base (3D).
    """
    side = 2.0 * radius
    if shape == "square":
        square = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=np.float64) * side
        if dimension == 3:
            square = np.hstack([square, np.zeros((4, 1))])
        return square - square.mean(axis=0)
    if dimension == 2:
        points = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3.0) / 2.0]]) * side
    else:
        points = np.array(
            [
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.5, math.sqrt(3.0) / 2.0, 0.0],
                [0.5, math.sqrt(3.0) / 6.0, math.sqrt(2.0 / 3.0)],
            ]
        ) * side
    return points - points.mean(axis=0)


def touching_positions(centers: np.ndarray, reach: np.ndarray) -> np.ndarray:
    """Points at distance reach[k] from each of the d given centres (0, 1 or 2 points)."""
    d = centers.shape[1]
    if d == 2:
        p1, p2 = centers
        r1, r2 = reach
        axis = p2 - p1
        span = float(np.linalg.norm(axis))
        if span < 1e-15:
            return np.empty((0, 2))
        along = (r1 * r1 - r2 * r2 + span * span) / (2.0 * span)
        h2 = r1 * r1 - along * along
        if h2 < 0:
            return np.empty((0, 2))
        e = axis / span
        perp = np.array([-e[1], e[0]])
        base = p1 + along * e
        h = math.sqrt(h2)
        return np.array([base + h * perp, base - h * perp])

    p1, p2, p3 = centers
    r1, r2, r3 = reach
    ex = p2 - p1
    span = float(np.linalg.norm(ex))
    if span < 1e-15:
        return np.empty((0, 3))
    ex /= span
    offset = p3 - p1
    i = float(ex @ offset)
    ey = offset - i * ex
    ey_norm = float(np.linalg.norm(ey))
    if ey_norm < 1e-12:
        return np.empty((0, 3))
    ey /= ey_norm
    ez = np.cross(ex, ey)
    j = float(ey @ offset)
    x = (r1 * r1 - r2 * r2 + span * span) / (2.0 * span)
    y = (r1 * r1 - r3 * r3 + i * i + j * j) / (2.0 * j) - (i / j) * x
    z2 = r1 * r1 - x * x - y * y
    if z2 < 0:
        return np.empty((0, 3))
    z = math.sqrt(z2)
    base = p1 + x * ex + y * ey
    return np.array([base + z * ez, base - z * ez])


def outward_spots(spots: np.ndarray) -> np.ndarray:
    """Keep the pocket solutions on the side of the pocket facing away from the origin.

    A pocket whose plane (2D: line) passes through the origin keeps both.
    """
    if len(spots) < 2:
        return spots
    base = spots.mean(axis=0)
    side = (spots - base) @ base
    return spots[side >= -TIE_TOL]


class CentralPlacementGenerator(PackingGenerator):
    """Bennett-style greedy growth of a cluster around the origin."""

    spec: BennettCentral

    def _build(self, rng: np.random.Generator, seed: int) -> Configuration:
        spec = self.spec
        d, r = spec.dimension, spec.radius
        contact = 2.0 * r
        start = seed_cluster(d, r, spec.seed_cluster)[: spec.n]

        boundary = BoundarySpec.unbounded(d)
        grid = NeighborGrid(boundary, contact)
        placed: List[np.ndarray] = []
        heap: List[Tuple[float, int, Tuple[float, ...]]] = []
        counter = itertools.count()

        def free(point: np.ndarray) -> bool:
            for j in grid.query(point, contact):
                if np.linalg.norm(placed[j] - point) < contact - OVERLAP_TOL:
                    return False
            return True

        def add_candidates(new: int) -> None:
            near = [j for j in grid.query_exact(placed[new], 2.0 * contact) if j != new]
            for group in itertools.combinations(near, d - 1):
                members = (new,) + group
                if any(
                    np.linalg.norm(placed[a] - placed[b]) > 2.0 * contact
                    for a, b in itertools.combinations(members, 2)
                ):
                    continue
                spots = touching_positions(
                    np.array([placed[m] for m in members]), np.full(d, contact)
                )
                if spec.outward_pockets:
                    spots = outward_spots(spots)
                for spot in spots:
                    if free(spot):
                        heapq.heappush(
                            heap, (float(np.linalg.norm(spot)), next(counter), tuple(spot))
                        )

        def place(point: np.ndarray) -> None:
            placed.append(np.asarray(point, dtype=np.float64))
            grid.add(point)
            add_candidates(len(placed) - 1)

        for point in start:
            place(point)

        while len(placed) < spec.n:
            if not heap:
                raise SaturationError(
                    f"central placement ran out of candidates after {len(placed)} spheres",
                    seed=seed,
                    diagnostics={"placed": len(placed)},
                )
            ties = self._next_candidates(heap, free)
            if not ties:
                continue
            pick = int(rng.integers(len(ties))) if len(ties) > 1 else 0
            for k, (dist, other_spot) in enumerate(ties):
                if k != pick:
                    heapq.heappush(heap, (dist, next(counter), other_spot))
            place(np.array(ties[pick][1]))
            if len(placed) % 1000 == 0:
                logger.debug("central_progress", placed=len(placed), seed=seed)

        centers = np.array(placed[: spec.n])
        return self._configuration(
            centers,
            np.full(spec.n, r),
            boundary,
            seed,
            cluster_radius=float(np.linalg.norm(centers, axis=1).max() + r),
        )

    def _next_candidates(self, heap, free) -> List[Tuple[float, Tuple[float, ...]]]:
        """Free spots to choose from: the nearest ones (ties), or the nearest `candidate_pool`."""
        chosen: List[Tuple[float, Tuple[float, ...]]] = []
        pool = self.spec.candidate_pool
        while heap:
            distance, _, spot = heapq.heappop(heap)
            if not free(np.array(spot)):
                continue
            if pool == 0 and chosen and distance - chosen[0][0] > TIE_TOL:
                heapq.heappush(heap, (distance, -1, spot))
                break
            chosen.append((distance, spot))
            if pool and len(chosen) >= pool:
                break
        return chosen
