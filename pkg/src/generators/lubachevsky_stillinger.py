"""Event-driven growth of hard discs/spheres in a periodic box.

Diameters grow as sigma(t) = growth_rate * t from points at t = 0. Positions
are advanced lazily: each particle stores the time of its last update.
Pending events live in a heap and are invalidated by per-particle event
counters rather than removed.
"""

import heapq
import itertools
import math
from collections import deque
from typing import Deque, List, Optional, Tuple

import numpy as np

from src.core.exceptions import EventQueueOverflow
from src.core.logging import get_logger
from src.generators.base import PackingGenerator
from src.models.generator import LubachevskyStillinger
from src.models.packing import BoundarySpec, Configuration, ball_volume

logger = get_logger(__name__)

# densest packing fractions, used to size the cell list
MAX_FRACTION = {2: math.pi / math.sqrt(12.0), 3: math.pi / math.sqrt(18.0)}

COLLISION = 0
CROSSING = 1
EVENTS_PER_SPHERE = 5000

Event = Tuple[float, int, int, int, int, int, int]


def elastic_collision(
    vi: np.ndarray, vj: np.ndarray, normal: np.ndarray, growth: float = 0.0
) -> Tuple[np.ndarray, np.ndarray]:
    """Equal-mass collision of two growing spheres.

    `normal` is the unit vector from i to j. The normal component of the
    relative velocity, measured against the surface growth rate, is
    reversed; tangential components are unchanged and momentum is conserved.
    """
    normal = np.asarray(normal, dtype=np.float64)
    closing = float((np.asarray(vj) - np.asarray(vi)) @ normal)
    impulse = (growth - closing) * normal
    return np.asarray(vi, dtype=np.float64) - impulse, np.asarray(vj, dtype=np.float64) + impulse


def collision_time(r: np.ndarray, v: np.ndarray, sigma: float, growth: float) -> np.ndarray:
    """Time until |r + v t| = sigma + growth * t for each row; inf when never."""
    r = np.atleast_2d(r)
    v = np.atleast_2d(v)
    a = np.einsum("ij,ij->i", v, v) - growth * growth
    b = np.einsum("ij,ij->i", r, v) - sigma * growth
    c = np.maximum(np.einsum("ij,ij->i", r, r) - sigma * sigma, 0.0)
    disc = b * b - a * c
    root = np.sqrt(np.maximum(disc, 0.0))
    tau = np.full(len(r), np.inf)
    # growth outpaces the relative motion: one root is positive
    growing = a < 0
    tau[growing] = (-b[growing] - root[growing]) / a[growing]
    closing = ~growing & (b < 0) & (disc >= 0)
    tau[closing] = c[closing] / (-b[closing] + root[closing])
    return np.maximum(tau, 0.0)


class EventDrivenSimulation:
    """Growing hard particles in a periodic box of edge `box_edge`."""

    def __init__(
        self,
        positions: np.ndarray,
        velocities: np.ndarray,
        box_edge: float,
        growth_rate: float,
        max_queue: int = 5_000_000,
        sigma_cap: Optional[float] = None,
    ):
        self.x = np.mod(np.asarray(positions, dtype=np.float64), box_edge)
        self.v = np.asarray(velocities, dtype=np.float64).copy()
        self.n, self.dimension = self.x.shape
        self.box = float(box_edge)
        self.growth = float(growth_rate)
        self.max_queue = max_queue
        self.t = 0.0
        self.t_last = np.zeros(self.n)
        self.counts = np.zeros(self.n, dtype=np.int64)
        self.collisions = 0
        self.events = 0
        self.kinetic0 = self.kinetic_energy()

        fullest = (
            MAX_FRACTION[self.dimension] * self.box**self.dimension
            / (self.n * ball_volume(self.dimension))
        ) ** (1.0 / self.dimension) * 2.0
        self.sigma_cap = min(fullest, 0.5 * self.box) if sigma_cap is None else sigma_cap
        cells = int(math.floor(self.box / fullest))
        self.cells = cells if cells >= 3 else 1
        self.width = self.box / self.cells
        self.cell = np.floor(self.x / self.width).astype(np.int64) % self.cells
        self.members: dict = {}
        for i, key in enumerate(map(tuple, self.cell)):
            self.members.setdefault(key, set()).add(i)
        self._sequence = itertools.count()
        self.queue: List[Event] = []
        self.rebuild()

    @property
    def sigma(self) -> float:
        return self.growth * self.t

    def kinetic_energy(self) -> float:
        return 0.5 * float(np.einsum("ij,ij->", self.v, self.v))

    def momentum(self) -> np.ndarray:
        return self.v.sum(axis=0)

    def _advance(self, idx) -> None:
        self.x[idx] += self.v[idx] * (self.t - self.t_last[idx])[..., None]
        self.x[idx] = np.mod(self.x[idx], self.box)
        self.t_last[idx] = self.t

    def positions(self) -> np.ndarray:
        """All positions at the current time."""
        return np.mod(self.x + self.v * (self.t - self.t_last)[:, None], self.box)

    def _neighbours(self, i: int) -> List[int]:
        if self.cells == 1:
            return [j for j in range(self.n) if j != i]
        found = []
        for offset in itertools.product((-1, 0, 1), repeat=self.dimension):
            key = tuple(int(k) for k in (self.cell[i] + offset) % self.cells)
            found.extend(self.members.get(key, ()))
        return [j for j in found if j != i]

    def _push(self, time: float, kind: int, i: int, j: int) -> None:
        count_j = int(self.counts[j]) if j >= 0 else 0
        heapq.heappush(
            self.queue, (time, next(self._sequence), kind, i, j, int(self.counts[i]), count_j)
        )
        if len(self.queue) > self.max_queue:
            raise EventQueueOverflow(
                f"event queue exceeded {self.max_queue} entries",
                diagnostics={"events": self.events, "collisions": self.collisions},
            )

    def predict(self, i: int) -> None:
        """Schedule i's collisions with its cell neighbours and its next cell crossing."""
        self._advance(np.array([i]))
        others = np.array(self._neighbours(i), dtype=np.int64)
        if len(others):
            self._advance(others)
            r = self.x[others] - self.x[i]
            r -= self.box * np.round(r / self.box)
            tau = collision_time(r, self.v[others] - self.v[i], self.sigma, self.growth)
            for j, dt in zip(others[np.isfinite(tau)], tau[np.isfinite(tau)]):
                self._push(self.t + float(dt), COLLISION, i, int(j))
        crossing = self._crossing_time(i)
        if math.isfinite(crossing):
            self._push(self.t + crossing, CROSSING, i, -1)

    def _face_times(self, i: int) -> np.ndarray:
        low = self.cell[i] * self.width
        local = np.mod(self.x[i] - low + 0.5 * self.box, self.box) - 0.5 * self.box
        speed = self.v[i]
        with np.errstate(divide="ignore", invalid="ignore"):
            times = np.where(
                speed > 0,
                np.maximum(self.width - local, 0.0) / speed,
                np.where(speed < 0, np.maximum(local, 0.0) / -speed, np.inf),
            )
        return times

    def _crossing_time(self, i: int) -> float:
        if self.cells == 1:
            # no cells: recheck minimum images before they can change
            speed = float(np.linalg.norm(self.v[i]))
            return 0.1 * self.box / speed if speed > 0 else math.inf
        return float(self._face_times(i).min())

    def rebuild(self) -> None:
        """Bring every particle to the current time and reschedule everything."""
        self._advance(np.arange(self.n))
        self.queue = []
        for i in range(self.n):
            self.predict(i)

    def _valid(self, event: Event) -> bool:
        _, _, kind, i, j, count_i, count_j = event
        if self.counts[i] != count_i:
            return False
        return kind == CROSSING or self.counts[j] == count_j

    def _collide(self, i: int, j: int) -> None:
        self._advance(np.array([i, j]))
        delta = self.x[j] - self.x[i]
        delta -= self.box * np.round(delta / self.box)
        normal = delta / np.linalg.norm(delta)
        self.v[i], self.v[j] = elastic_collision(self.v[i], self.v[j], normal, self.growth)
        self.counts[[i, j]] += 1
        self.collisions += 1
        self.predict(i)
        self.predict(j)

    def _cross(self, i: int) -> None:
        self._advance(np.array([i]))
        if self.cells == 1:
            self.counts[i] += 1
            self.predict(i)
            return
        old = tuple(int(k) for k in self.cell[i])
        axis = int(np.argmin(self._face_times(i)))
        step = np.zeros(self.dimension, dtype=np.int64)
        step[axis] = 1 if self.v[i, axis] > 0 else -1
        self.cell[i] = (self.cell[i] + step) % self.cells
        self.members[old].discard(i)
        self.members.setdefault(tuple(int(k) for k in self.cell[i]), set()).add(i)
        self.counts[i] += 1
        self.predict(i)

    def step(self) -> Optional[Tuple[int, float]]:
        """Process the next valid event; returns (kind, time) or None when the growth cap is hit."""
        while self.queue:
            event = heapq.heappop(self.queue)
            if not self._valid(event):
                continue
            time, _, kind, i, j, _, _ = event
            if self.growth * time >= self.sigma_cap:
                self.t = self.sigma_cap / self.growth if self.growth > 0 else self.t
                return None
            self.t = time
            self.events += 1
            if kind == COLLISION:
                self._collide(i, j)
            else:
                self._cross(i)
            return kind, time
        return None

    def rescale_energy(self) -> None:
        """Scale velocities back to the starting kinetic energy."""
        energy = self.kinetic_energy()
        if energy > 0 and self.kinetic0 > 0:
            self._advance(np.arange(self.n))
            self.v *= math.sqrt(self.kinetic0 / energy)
            self.rebuild()

    def min_distance(self) -> float:
        x = self.positions()
        best = math.inf
        for i in range(self.n - 1):
            delta = x[i + 1 :] - x[i]
            delta -= self.box * np.round(delta / self.box)
            best = min(best, float(np.sqrt(np.einsum("ij,ij->i", delta, delta).min())))
        return best


class LubachevskyStillingerGenerator(PackingGenerator):
    """Grow particles from uniform points until collisions pile up or the budget runs out."""

    spec: LubachevskyStillinger

    def _build(self, rng: np.random.Generator, seed: int) -> Configuration:
        spec = self.spec
        d, n = spec.dimension, spec.n
        edge = spec.box_edge if spec.box_edge is not None else float(n ** (1.0 / d))
        positions = rng.random((n, d)) * edge
        velocities = rng.standard_normal((n, d))
        if n > 1:
            velocities -= velocities.mean(axis=0)

        if n == 1:
            scale = 2.0 * spec.radius / edge
            boundary = BoundarySpec.periodic_box(*([edge * scale] * d))
            return self._configuration(
                positions * scale,
                np.full(1, spec.radius),
                boundary,
                seed,
                events=0,
                reason="single",
            )

        sim = EventDrivenSimulation(
            positions, velocities, edge, spec.growth_rate, max_queue=spec.max_queue
        )
        recent: Deque[float] = deque(maxlen=max(n, 10))
        budget = spec.max_events or EVENTS_PER_SPHERE * n
        reason = "max_events"
        log = logger.bind(seed=seed, n=n)
        while sim.events < budget:
            outcome = sim.step()
            if outcome is None:
                reason = "growth_cap"
                break
            kind, time = outcome
            if kind != COLLISION:
                continue
            recent.append(time)
            if len(recent) == recent.maxlen:
                interval = (recent[-1] - recent[0]) / (len(recent) - 1)
                if interval < spec.jam_interval:
                    reason = "jammed"
                    break
            if sim.collisions % n == 0:
                sim.rescale_energy()
            if sim.collisions % (50 * n) == 0:
                log.debug("event_progress", collisions=sim.collisions, sigma=sim.sigma)

        sigma = min(sim.sigma, sim.min_distance())
        if sigma <= 0:
            sigma = sim.min_distance()
        scale = 2.0 * spec.radius / sigma
        boundary = BoundarySpec.periodic_box(*([edge * scale] * d))
        fraction = n * ball_volume(d) * spec.radius**d / boundary.volume()
        log.info("growth_stopped", reason=reason, events=sim.events, volume_fraction=fraction)
        return self._configuration(
            sim.positions() * scale,
            np.full(n, spec.radius),
            boundary,
            seed,
            events=sim.events,
            event_budget=budget,
            collisions=sim.collisions,
            reason=reason,
            volume_fraction=fraction,
        )
