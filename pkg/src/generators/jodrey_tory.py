"""Jodrey-Tory shrink-and-separate rearrangement in a periodic box."""

from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from src.core.exceptions import ConvergenceError, ValidationFailure
from src.core.logging import get_logger
from src.core.rng import derive_seed
from src.generators.base import PackingGenerator
from src.generators.rsa import sequential_inhibition
from src.models.generator import JodreyTory
from src.models.packing import BoundaryKind, BoundarySpec, Configuration, ball_volume

logger = get_logger(__name__)

# nominal radius of the working configuration
R0 = 1.0
RSA_FRACTION = 0.25


def _wrap(centers: np.ndarray, box: np.ndarray) -> np.ndarray:
    wrapped = np.mod(centers, box)
    return np.where(wrapped >= box, 0.0, wrapped)


def separate_pairs(
    centers: np.ndarray, radius: float, box: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, int]:
    """Move every overlapping pair apart along its centre line.

    Each member of a pair closer than 2 * radius moves half the overlap, so
    an isolated pair ends exactly touching. Displacements from all pairs are
    applied at once. Returns the new centres and the number of pairs moved.
    """
    centers = np.asarray(centers, dtype=np.float64)
    if box is not None:
        box = np.asarray(box, dtype=np.float64)
        centers = _wrap(centers, box)
        tree = cKDTree(centers, boxsize=box)
    else:
        tree = cKDTree(centers)
    pairs = tree.query_pairs(2.0 * radius, output_type="ndarray")
    if len(pairs) == 0:
        return centers, 0
    i, j = pairs[:, 0], pairs[:, 1]
    delta = centers[j] - centers[i]
    if box is not None:
        delta -= box * np.round(delta / box)
    distance = np.linalg.norm(delta, axis=1)
    coincident = distance < 1e-15
    if coincident.any():
        delta[coincident] = 0.0
        delta[coincident, 0] = 1.0
        distance[coincident] = 1.0
    push = (0.5 * (2.0 * radius - np.where(coincident, 0.0, distance)) / distance)[:, None] * delta
    moved = centers.copy()
    np.add.at(moved, i, -push)
    np.add.at(moved, j, push)
    if box is not None:
        moved = _wrap(moved, box)
    return moved, len(pairs)


def inner_radius(centers: np.ndarray, box: np.ndarray) -> float:
    """Half the smallest centre distance (minimum image)."""
    tree = cKDTree(_wrap(centers, box), boxsize=box)
    distance, _ = tree.query(_wrap(centers, box), k=2)
    return 0.5 * float(distance[:, 1].min())


class JodreyToryGenerator(PackingGenerator):
    """Shrink the outer radius while separating overlaps, then remove what is left.

    Works at nominal radius 1 and rescales the result to `spec.radius`.
    `initial` replaces the random start with the centres of an existing
    periodic configuration.
    """

    spec: JodreyTory

    def __init__(self, spec: JodreyTory, initial: Optional[Configuration] = None):
        super().__init__(spec)
        if initial is not None:
            if initial.boundary.kind != BoundaryKind.PERIODIC:
                raise ValidationFailure("Jodrey-Tory needs a periodic starting configuration")
            if initial.n != spec.n or initial.dimension != spec.dimension:
                raise ValidationFailure(
                    f"starting configuration has {initial.n} spheres in {initial.dimension}D, "
                    f"spec asks for {spec.n} in {spec.dimension}D"
                )
        self.initial = initial

    def box(self) -> np.ndarray:
        spec = self.spec
        occupied = spec.n * ball_volume(spec.dimension) * R0**spec.dimension
        edge = (occupied / spec.initial_fraction) ** (1.0 / spec.dimension)
        return np.full(spec.dimension, float(edge))

    def _start(self, rng: np.random.Generator, box: np.ndarray, seed: int) -> np.ndarray:
        spec = self.spec
        if self.initial is not None:
            periods = self.initial.boundary.periods
            return _wrap(self.initial.centers * (box / periods), box)
        ratio = min(RSA_FRACTION, spec.initial_fraction) / spec.initial_fraction
        radius = R0 * ratio ** (1.0 / spec.dimension)
        return sequential_inhibition(
            spec.n,
            BoundarySpec.periodic_box(*box),
            radius,
            rng,
            5000 * spec.n,
            seed=seed,
        )

    def _build(self, rng: np.random.Generator, seed: int) -> Configuration:
        spec = self.spec
        box = self.box()
        centers = self._start(rng, box, seed)
        log = logger.bind(seed=seed, n=spec.n)

        r_out = R0
        if spec.n < 2:
            return self._finish(centers, box, R0, seed, cycles=0, sweeps=0)

        for cycle in range(spec.cycles):
            centers, moved = separate_pairs(centers, r_out, box)
            if moved:
                r_out -= spec.shrink * R0
            else:
                r_out += spec.grow * R0
            if r_out <= 0:
                raise ConvergenceError(
                    "outer radius collapsed", seed=seed, diagnostics={"cycle": cycle}
                )
            if (cycle + 1) % 500 == 0:
                log.debug("jodrey_tory_cycle", cycle=cycle + 1, r_out=r_out)

        sweeps = 0
        r_in = inner_radius(centers, box)
        while r_out - r_in > spec.stop_gap * r_out:
            if sweeps >= spec.cleanup_sweeps:
                raise ConvergenceError(
                    f"overlaps remain after {sweeps} cleanup sweeps",
                    seed=seed,
                    diagnostics={"r_in": r_in, "r_out": r_out, "sweeps": sweeps},
                )
            r_out = max(r_in + 0.5 * (r_out - r_in), r_in)
            centers, _ = separate_pairs(centers, r_out, box)
            r_in = inner_radius(centers, box)
            sweeps += 1
        log.debug("jodrey_tory_cleanup", sweeps=sweeps, r_in=r_in, r_out=r_out)
        return self._finish(centers, box, r_in, seed, cycles=spec.cycles, sweeps=sweeps)

    def _finish(
        self, centers: np.ndarray, box: np.ndarray, r_final: float, seed: int, **diagnostics
    ) -> Configuration:
        spec = self.spec
        scale = spec.radius / r_final
        boundary = BoundarySpec.periodic_box(*(box * scale))
        occupied = spec.n * ball_volume(spec.dimension) * spec.radius**spec.dimension
        return self._configuration(
            centers * scale,
            np.full(spec.n, spec.radius),
            boundary,
            seed,
            volume_fraction=occupied / boundary.volume(),
            recycled=self.initial is not None,
            **diagnostics,
        )


def recycle_jodrey_tory(
    config: Configuration, spec: JodreyTory, times: int, seed: int
) -> list[Configuration]:
    """Feed Jodrey-Tory its own output `times` times; returns every stage."""
    if times < 1:
        raise ValidationFailure("times must be at least 1")
    stages = []
    current = config
    for stage in range(times):
        current = JodreyToryGenerator(spec, initial=current).generate(
            derive_seed(seed, "recycle", stage)
        )
        stages.append(current)
    return stages
