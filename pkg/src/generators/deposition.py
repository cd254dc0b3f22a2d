"""Sequential deposition under gravity.

Spheres are dropped at lateral positions onto a base with periodic lateral
walls. A falling sphere stops at its first contact. Unless it sticks there it
then descends quasi-statically along the steepest feasible direction: rolling
over one support, along the ridge of two supports (3D), or falling freely,
until the downward direction lies in the cone of its contact normals. Every
contact along the way is found analytically, with no time stepping.
"""

import itertools
import math
from collections import defaultdict
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import nnls

from src.core.exceptions import ConvergenceError, ValidationFailure
from src.core.geometry import NeighborGrid
from src.core.logging import get_logger
from src.core.rng import derive_seed, make_rng
from src.generators.base import PackingGenerator
from src.models.generator import (
    ShakeRedeposit,
    VisscherBolsterli,
    VoldBallistic,
    default_lateral_extent,
)
from src.models.packing import BoundaryKind, BoundarySpec, Configuration, Provenance, ball_volume

logger = get_logger(__name__)

TOUCH_TOL = 1e-9
ANGLE_EPS = 1e-12
OVERLAP_TOL = 1e-12


def _first_root(
    a: float, b: float, c: float, start: float, stop: float, decreasing: bool = True
) -> Optional[float]:
    """Smallest t in (start, stop] with a sin t + b cos t = c.

    With `decreasing`, only crossings where the left side is falling count.
    """
    amplitude = math.hypot(a, b)
    if amplitude < 1e-15:
        return None
    ratio = c / amplitude
    if ratio > 1.0 or ratio < -1.0:
        return None
    phase = math.atan2(a, b)
    spread = math.acos(ratio)
    best = None
    for base in (phase + spread, phase - spread):
        t = start + (base - start) % (2.0 * math.pi)
        if t <= start + ANGLE_EPS:
            t += 2.0 * math.pi
        if t > stop:
            continue
        if decreasing and a * math.cos(t) - b * math.sin(t) >= 0.0:
            continue
        if best is None or t < best:
            best = t
    return best


class ColumnIndex:
    """Sphere indices bucketed by lateral cell, for vertical line queries."""

    def __init__(self, lateral: np.ndarray, cell_size: float):
        self.lateral = np.asarray(lateral, dtype=np.float64)
        self.counts = np.maximum(1, np.floor(self.lateral / cell_size)).astype(np.int64)
        self.cell = self.lateral / self.counts
        self._buckets: Dict[Tuple[int, ...], List[int]] = defaultdict(list)

    def _base(self, xy: np.ndarray) -> np.ndarray:
        return np.floor(np.asarray(xy) / self.cell).astype(np.int64)

    def add(self, index: int, xy: np.ndarray) -> None:
        key = tuple(int(k) for k in np.mod(self._base(xy), self.counts))
        self._buckets[key].append(index)

    def query(self, xy: np.ndarray) -> List[int]:
        base = self._base(xy)
        ranges = [
            sorted({int((b + offset) % count) for offset in (-1, 0, 1)})
            for b, count in zip(base, self.counts)
        ]
        found: List[int] = []
        for key in itertools.product(*ranges):
            found.extend(self._buckets.get(key, ()))
        return found


class DepositionEngine:
    """Incrementally built packing on a base, with analytic rolling."""

    def __init__(
        self,
        dimension: int,
        lateral_extent: float,
        rng: np.random.Generator,
        max_radius: float = 0.5,
        max_steps: int = 10_000,
    ):
        self.d = dimension
        self.boundary = BoundarySpec.open_with_base(*([lateral_extent] * (dimension - 1)))
        self.lateral = np.full(dimension - 1, float(lateral_extent))
        self.rng = rng
        self.max_radius = float(max_radius)
        self.max_steps = max_steps
        self.grid = NeighborGrid(self.boundary, 2.0 * self.max_radius)
        self.columns = ColumnIndex(self.lateral, 2.0 * self.max_radius)
        self._xyz = np.empty((64, dimension))
        self._r = np.empty(64)
        self.n = 0
        self.down = np.zeros(dimension)
        self.down[-1] = -1.0

    @property
    def centers(self) -> np.ndarray:
        return self._xyz[: self.n].copy()

    @property
    def radii(self) -> np.ndarray:
        return self._r[: self.n].copy()

    def _image(self, delta: np.ndarray) -> np.ndarray:
        delta = np.array(delta, dtype=np.float64)
        delta[..., :-1] -= self.lateral * np.round(delta[..., :-1] / self.lateral)
        return delta

    def _local(self, indices: Sequence[int], origin: np.ndarray) -> np.ndarray:
        """Centres of `indices` as their images nearest to `origin`."""
        return origin + self._image(self._xyz[np.asarray(indices, dtype=np.int64)] - origin)

    def wrap(self, point: np.ndarray) -> np.ndarray:
        point = np.array(point, dtype=np.float64)
        point[:-1] = np.mod(point[:-1], self.lateral)
        point[:-1] = np.where(point[:-1] >= self.lateral, 0.0, point[:-1])
        return point

    def insert(self, point: np.ndarray, radius: float) -> int:
        point = self.wrap(point)
        if self.n == len(self._r):
            self._xyz = np.vstack([self._xyz, np.empty_like(self._xyz)])
            self._r = np.concatenate([self._r, np.empty_like(self._r)])
        index = self.n
        self._xyz[index] = point
        self._r[index] = radius
        self.n += 1
        self.grid.add(point)
        self.columns.add(index, point[:-1])
        return index

    # ------------------------------------------------------------------
    # motion
    # ------------------------------------------------------------------

    def drop(self, lateral: np.ndarray, radius: float, stick: bool = False) -> np.ndarray:
        """Final centre of a sphere released from far above `lateral` (not inserted)."""
        point = np.empty(self.d)
        point[:-1] = lateral
        point[-1] = math.inf
        point, hit = self.fall(point, radius)
        if stick or hit is None:
            return self.wrap(point)
        return self.wrap(self.settle(point, radius))

    def fall(
        self, point: np.ndarray, radius: float, exclude: Iterable[int] = ()
    ) -> Tuple[np.ndarray, Optional[int]]:
        """Drop straight down to the first sphere or the base."""
        skip = set(exclude)
        candidates = [c for c in self.columns.query(point[:-1]) if c not in skip]
        best_z, best = radius, None
        if candidates:
            idx = np.asarray(candidates, dtype=np.int64)
            delta = self._image(self._xyz[idx] - np.where(np.isfinite(point), point, 0.0))
            rho2 = np.sum(delta[:, :-1] ** 2, axis=1)
            reach = radius + self._r[idx]
            lift = np.sqrt(np.maximum(reach * reach - rho2, 0.0))
            heights = self._xyz[idx, -1] + lift
            valid = (rho2 < reach * reach) & (heights <= point[-1] + 1e-12)
            if valid.any():
                k = int(np.argmax(np.where(valid, heights, -np.inf)))
                if heights[k] > best_z:
                    best_z, best = float(heights[k]), int(idx[k])
        landed = np.array(point, dtype=np.float64)
        landed[-1] = best_z
        return landed, best

    def touching(self, point: np.ndarray, radius: float) -> List[int]:
        candidates = self.grid.query(point, radius + self.max_radius + TOUCH_TOL)
        if not candidates:
            return []
        idx = np.asarray(candidates, dtype=np.int64)
        delta = self._image(self._xyz[idx] - point)
        gap = np.linalg.norm(delta, axis=1) - radius - self._r[idx]
        return sorted(int(i) for i in idx[gap <= TOUCH_TOL])

    def settle(self, point: np.ndarray, radius: float) -> np.ndarray:
        """Steepest quasi-static descent until gravitationally stable."""
        point = np.array(point, dtype=np.float64)
        for _ in range(self.max_steps):
            if point[-1] - radius <= TOUCH_TOL:
                point[-1] = radius
                return point
            touching = self.touching(point, radius)
            if not touching:
                point, _ = self.fall(point, radius)
                continue
            normals = self._local(touching, point) - point
            normals /= np.linalg.norm(normals, axis=1)[:, None]
            weights, _ = nnls(normals.T, self.down)
            residual = self.down - normals.T @ weights
            if np.linalg.norm(residual) <= 1e-9:
                return point
            active = [touching[k] for k in np.flatnonzero(weights > 1e-12)]
            if not active:
                moved, _ = self.fall(point, radius, exclude=touching)
            elif len(active) == 1:
                moved = self._roll_single(point, radius, active[0])
            elif len(active) == 2 and self.d == 3:
                moved = self._roll_ridge(point, radius, active[0], active[1])
            else:
                return point
            if np.linalg.norm(moved - point) < 1e-13:
                return point
            point = moved
        raise ConvergenceError(
            f"sphere did not settle within {self.max_steps} rolling steps",
            diagnostics={"position": point.tolist()},
        )

    def _random_horizontal(self) -> np.ndarray:
        h = np.zeros(self.d)
        if self.d == 2:
            h[0] = 1.0 if self.rng.random() < 0.5 else -1.0
        else:
            angle = self.rng.random() * 2.0 * math.pi
            h[0], h[1] = math.cos(angle), math.sin(angle)
        return h

    def _roll_single(self, point: np.ndarray, radius: float, j: int) -> np.ndarray:
        """Roll over sphere j in the vertical plane through the contact."""
        centre = self._local([j], point)[0]
        offset = point - centre
        reach = float(np.linalg.norm(offset))
        lateral = offset.copy()
        lateral[-1] = 0.0
        spread = float(np.linalg.norm(lateral))
        h = self._random_horizontal() if spread < 1e-12 * reach else lateral / spread
        start = math.acos(max(-1.0, min(1.0, offset[-1] / reach)))
        stop = 0.5 * math.pi
        if start >= stop - ANGLE_EPS:
            moved, _ = self.fall(point, radius, exclude=[j])
            return moved

        best = stop
        others = [q for q in self.grid.query(centre, reach + radius + self.max_radius) if q != j]
        if others:
            local = self._local(others, centre)
            w = centre - local
            contact = radius + self._r[np.asarray(others)]
            a = w @ h
            b = w[:, -1]
            c = (contact * contact - np.sum(w * w, axis=1) - reach * reach) / (2.0 * reach)
            for k in range(len(others)):
                t = _first_root(a[k], b[k], c[k], start, best)
                if t is not None and t < best:
                    best = t
        t = _first_root(0.0, reach, radius - centre[-1], start, best)
        if t is not None and t < best:
            best = t
        up = np.zeros(self.d)
        up[-1] = 1.0
        return centre + reach * (math.cos(best) * up + math.sin(best) * h)

    def _roll_ridge(self, point: np.ndarray, radius: float, j: int, k: int) -> np.ndarray:
        """Roll along the circle of positions touching both j and k."""
        cj, ck = self._local([j, k], point)
        rj, rk = radius + self._r[j], radius + self._r[k]
        axis = ck - cj
        span = float(np.linalg.norm(axis))
        a = axis / span
        s = (rj * rj - rk * rk + span * span) / (2.0 * span)
        rho2 = rj * rj - s * s
        if rho2 <= 1e-24:
            lower = j if cj[-1] <= ck[-1] else k
            return self._roll_single(point, radius, lower)
        rho = math.sqrt(rho2)
        middle = cj + s * a
        e1 = point - middle
        e1 -= (e1 @ a) * a
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(a, e1)
        if e2[-1] > 0:
            e2 = -e2
        if e2[-1] > -1e-14:
            return point

        # lowest point of the ridge circle
        best = (math.atan2(e2[-1], e1[-1]) + math.pi) % (2.0 * math.pi)
        others = [
            q for q in self.grid.query(middle, rho + radius + self.max_radius) if q not in (j, k)
        ]
        if others:
            local = self._local(others, middle)
            w = middle - local
            contact = radius + self._r[np.asarray(others)]
            aa = w @ e2
            bb = w @ e1
            cc = (contact * contact - np.sum(w * w, axis=1) - rho2) / (2.0 * rho)
            for q in range(len(others)):
                t = _first_root(aa[q], bb[q], cc[q], 0.0, best)
                if t is not None and t < best:
                    best = t
        t = _first_root(rho * e2[-1], rho * e1[-1], radius - middle[-1], 0.0, best)
        if t is not None and t < best:
            best = t
        # a support lets go when its contact force reaches zero
        releases = []
        if s > 1e-12:
            releases.append(rho * a[-1] / s)
        if span - s > 1e-12:
            releases.append(-rho * a[-1] / (span - s))
        for target in releases:
            t = _first_root(e2[-1], e1[-1], target, 0.0, best, decreasing=False)
            if t is not None and t < best:
                best = t
        return middle + rho * (math.cos(best) * e1 + math.sin(best) * e2)


def layer_fraction(centers: np.ndarray, radii: np.ndarray, lateral_extent: float) -> float:
    """Sphere volume over the slab from the base to the highest sphere top."""
    if not len(radii):
        return 0.0
    d = centers.shape[1]
    height = float(np.max(centers[:, -1] + radii))
    volume = ball_volume(d) * float(np.sum(radii**d))
    return volume / (lateral_extent ** (d - 1) * height)


def _volume_below(heights: np.ndarray, radii: np.ndarray, level: float, d: int) -> np.ndarray:
    """Part of each sphere (disc) below the horizontal level."""
    t = np.clip(level - (heights - radii), 0.0, 2.0 * radii)
    if d == 3:
        return math.pi * t * t * (3.0 * radii - t) / 3.0
    u = radii - t
    return radii**2 * np.arccos(np.clip(u / radii, -1.0, 1.0)) - u * np.sqrt(
        np.maximum(2.0 * radii * t - t * t, 0.0)
    )


def bulk_fraction(
    centers: np.ndarray, radii: np.ndarray, lateral_extent: float, trim: float = 0.1
) -> Optional[float]:
    """Exact volume fraction of a slab clear of the base and of the rough top.

    The top of the slab sits below the lowest column top, with columns about two
    diameters wide. Both ends are trimmed by max(one diameter, trim * surface
    height). None when the deposit is too thin to leave a slab.
    """
    if not len(radii):
        return None
    d = centers.shape[1]
    cells = max(1, int(lateral_extent // 2.0))
    width = lateral_extent / cells
    index = np.minimum(np.floor(np.mod(centers[:, :-1], lateral_extent) / width), cells - 1)
    flat = np.ravel_multi_index(index.astype(np.int64).T, (cells,) * (d - 1))
    tops = np.full(cells ** (d - 1), -np.inf)
    np.maximum.at(tops, flat, centers[:, -1] + radii)
    surface = float(tops.min())
    margin = max(2.0 * float(radii.max()), trim * surface)
    lower, upper = margin, surface - margin
    if not upper > lower:
        return None
    heights = centers[:, -1]
    inside = _volume_below(heights, radii, upper, d) - _volume_below(heights, radii, lower, d)
    return float(inside.sum()) / (lateral_extent ** (d - 1) * (upper - lower))


class _DepositionGenerator(PackingGenerator):
    def _radii(self, rng: np.random.Generator, lateral: float) -> np.ndarray:
        return np.full(self.spec.n, self.spec.radius)

    def _deposit(
        self,
        rng: np.random.Generator,
        seed: int,
        drops: int,
        stick_probability: float,
    ) -> Configuration:
        spec = self.spec
        lateral = spec.lateral_extent or default_lateral_extent(spec.n, spec.dimension)
        radii = self._radii(rng, lateral)
        engine = DepositionEngine(spec.dimension, lateral, rng, max_radius=float(radii.max()))
        for i in range(spec.n):
            stick = stick_probability > 0 and rng.random() < stick_probability
            best = None
            for _ in range(drops):
                xy = rng.random(spec.dimension - 1) * lateral
                centre = engine.drop(xy, float(radii[i]), stick=stick)
                key = (centre[-1], *centre[:-1])
                if best is None or key < best[0]:
                    best = (key, centre)
            engine.insert(best[1], float(radii[i]))
            if (i + 1) % 1000 == 0:
                logger.debug(
                    "deposition_progress", algorithm=self.algorithm, placed=i + 1, seed=seed
                )
        return self._configuration(
            engine.centers,
            engine.radii,
            engine.boundary,
            seed,
            lateral_extent=lateral,
            layer_fraction=layer_fraction(engine.centers, engine.radii, lateral),
            bulk_fraction=bulk_fraction(engine.centers, engine.radii, lateral),
        )


class VoldGenerator(_DepositionGenerator):
    """Ballistic deposition; each sphere sticks at first contact with probability p_stick."""

    spec: VoldBallistic

    def _build(self, rng: np.random.Generator, seed: int) -> Configuration:
        return self._deposit(rng, seed, drops=1, stick_probability=self.spec.p_stick)


class VisscherBolsterliGenerator(_DepositionGenerator):
    """Keeps the lowest of k rolled drops (ties: lowest x, then y)."""

    spec: VisscherBolsterli

    def _radii(self, rng: np.random.Generator, lateral: float) -> np.ndarray:
        spec = self.spec
        radii = np.full(spec.n, spec.radius)
        if spec.dimension == 2 and spec.first_layer_size_jitter > 0:
            first = min(spec.n, int(math.floor(lateral / (2.0 * spec.radius))))
            jitter = spec.first_layer_size_jitter
            radii[:first] *= 1.0 + rng.uniform(-jitter, jitter, first)
        return radii

    def _build(self, rng: np.random.Generator, seed: int) -> Configuration:
        return self._deposit(rng, seed, drops=self.spec.k_drops, stick_probability=0.0)


def _lateral_extent(config: Configuration) -> float:
    boundary = config.boundary
    if boundary.kind != BoundaryKind.OPEN_BASE:
        raise ValidationFailure("redeposition needs a packing on a base with periodic lateral walls")
    if len(set(boundary.extents)) != 1:
        raise ValidationFailure("redeposition needs equal lateral extents")
    return float(boundary.extents[0])


def redeposit_centers(config: Configuration, seed: int) -> np.ndarray:
    """Redeposit every sphere, lowest first, at its own lateral position under VB rules."""
    lateral = _lateral_extent(config)
    engine = DepositionEngine(
        config.dimension, lateral, make_rng(seed, "redeposit"), max_radius=float(config.radii.max())
    )
    order = np.argsort(config.centers[:, -1], kind="stable")
    centers = np.empty_like(config.centers)
    for i in order:
        centre = engine.drop(config.centers[i, :-1], float(config.radii[i]))
        engine.insert(centre, float(config.radii[i]))
        centers[i] = engine.wrap(centre)
    return centers


def redeposit(config: Configuration, seed: int) -> Configuration:
    """Height-ordered redeposition rearrangement of a deposited packing."""
    centers = redeposit_centers(config, seed)
    lateral = _lateral_extent(config)
    return config.replace(
        centers=centers,
        provenance=Provenance(
            algorithm="redeposit",
            parameters={"source": config.provenance.algorithm},
            seed=seed,
            diagnostics={
                "fraction_before": bulk_fraction(config.centers, config.radii, lateral),
                "fraction_after": bulk_fraction(centers, config.radii, lateral),
            },
        ),
    )


def shake_centers(
    config: Configuration, spec: ShakeRedeposit, rng: np.random.Generator
) -> Tuple[np.ndarray, int]:
    """Lift each sphere by |N(0, sigma_up)| and jiggle until the collision budget is spent."""
    centers = np.array(config.centers, dtype=np.float64)
    radii = config.radii
    grid = NeighborGrid(config.boundary, 2.0 * float(radii.max()))
    for point in centers:
        grid.add(point)
    reach = float(radii.max())

    def blocked(i: int, trial: np.ndarray) -> bool:
        if trial[-1] < radii[i] - OVERLAP_TOL:
            return True
        for j in grid.query_exact(trial, radii[i] + reach):
            if j == i:
                continue
            delta = trial - centers[j]
            delta[:-1] -= config.boundary.periods[:-1] * np.round(
                delta[:-1] / config.boundary.periods[:-1]
            )
            if np.linalg.norm(delta) < radii[i] + radii[j] - OVERLAP_TOL:
                return True
        return False

    budget = spec.collision_threshold or 20 * config.n
    collisions = 0
    for i in np.argsort(-centers[:, -1], kind="stable"):
        trial = centers[i].copy()
        trial[-1] += abs(rng.normal(0.0, spec.sigma_up))
        if blocked(i, trial):
            collisions += 1
        else:
            centers[i] = trial
            grid.move(i, trial)

    for _ in range(spec.sweeps):
        if collisions >= budget:
            break
        for i in rng.permutation(config.n):
            trial = centers[i] + rng.normal(0.0, spec.sigma_move, config.dimension)
            if blocked(i, trial):
                collisions += 1
                if collisions >= budget:
                    break
            else:
                centers[i] = trial
                grid.move(i, trial)
    return centers, collisions


def shake_redeposit(config: Configuration, spec: ShakeRedeposit, seed: int) -> Configuration:
    """Shake a deposited packing, then collapse it from the bottom with VB rules."""
    lateral = _lateral_extent(config)
    shaken, collisions = shake_centers(config, spec, make_rng(seed, "shake"))
    shaken_config = config.replace(centers=shaken)
    centers = redeposit_centers(shaken_config, seed)
    before = bulk_fraction(config.centers, config.radii, lateral)
    after = bulk_fraction(centers, config.radii, lateral)
    logger.info(
        "shake_redeposit_finished",
        seed=seed,
        collisions=collisions,
        fraction_before=before,
        fraction_after=after,
    )
    return config.replace(
        centers=centers,
        provenance=Provenance(
            algorithm=spec.algorithm,
            parameters=spec.model_dump(mode="json"),
            seed=seed,
            diagnostics={
                "collisions": collisions,
                "fraction_before": before,
                "fraction_after": after,
            },
        ),
    )


class ShakeRedepositGenerator(PackingGenerator):
    """VB packing from a derived seed, shaken and redeposited."""

    spec: ShakeRedeposit

    def _build(self, rng: np.random.Generator, seed: int) -> Configuration:
        base = VisscherBolsterliGenerator(self.spec.base).generate(derive_seed(seed, "base"))
        return shake_redeposit(base, self.spec, seed)
