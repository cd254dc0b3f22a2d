"""Random sequential adsorption (simple sequential inhibition)."""

import numpy as np

from src.core.exceptions import SaturationError, ValidationFailure
from src.core.geometry import NeighborGrid
from src.generators.base import PackingGenerator
from src.models.generator import RSAInit
from src.models.packing import BoundarySpec, Configuration, ball_volume

MAX_RSA_FRACTION = 0.3


def sequential_inhibition(
    n: int,
    boundary: BoundarySpec,
    radius: float,
    rng: np.random.Generator,
    max_attempts: int,
    seed: int = 0,
) -> np.ndarray:
    """Uniform proposals in a periodic box, rejected when they overlap an accepted sphere."""
    d = boundary.dimension
    extents = np.asarray(boundary.extents, dtype=np.float64)
    grid = NeighborGrid(boundary, 2.0 * radius)
    attempts = 0
    while len(grid) < n:
        if attempts >= max_attempts:
            raise SaturationError(
                f"placed {len(grid)} of {n} spheres in {attempts} attempts",
                seed=seed,
                diagnostics={"placed": len(grid), "attempts": attempts},
            )
        attempts += 1
        point = rng.random(d) * extents
        if not grid.query_exact(point, 2.0 * radius):
            grid.add(point)
    return grid.points()


class RSAGenerator(PackingGenerator):
    """Non-overlapping uniform spheres at low density in a periodic box."""

    spec: RSAInit

    def box_edge(self) -> float:
        spec = self.spec
        if spec.box_edge is not None:
            return spec.box_edge
        occupied = spec.n * ball_volume(spec.dimension) * spec.radius**spec.dimension
        return float((occupied / spec.target_fraction) ** (1.0 / spec.dimension))

    def _build(self, rng: np.random.Generator, seed: int) -> Configuration:
        spec = self.spec
        edge = self.box_edge()
        boundary = BoundarySpec.periodic_box(*([edge] * spec.dimension))
        occupied = spec.n * ball_volume(spec.dimension) * spec.radius**spec.dimension
        if occupied > MAX_RSA_FRACTION * boundary.volume() * (1 + 1e-12):
            raise ValidationFailure(
                f"{spec.n} spheres fill {occupied / boundary.volume():.3f} of the box; "
                f"sequential inhibition is limited to {MAX_RSA_FRACTION}"
            )
        centers = sequential_inhibition(
            spec.n,
            boundary,
            spec.radius,
            rng,
            spec.max_attempts_per_sphere * spec.n,
            seed=seed,
        )
        return self._configuration(
            centers,
            np.full(spec.n, spec.radius),
            boundary,
            seed,
            volume_fraction=occupied / boundary.volume(),
        )
