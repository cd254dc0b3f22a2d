"""Contact networks, sphere classification, coordination and local jamming."""

import math
from typing import Dict, Iterable, List, Optional

import networkx as nx
import numpy as np
from scipy.optimize import linprog, nnls
from scipy.stats import norm

from src.core.config import settings
from src.core.exceptions import ContactRuleError, TriangulationError
from src.core.geometry import minimum_image
from src.core.logging import get_logger
from src.core.rng import make_rng
from src.models.network import (
    Components,
    ContactNetwork,
    ContactRule,
    CoordinationReport,
    GaussianRule,
    HardTolerance,
    JamSummary,
    SpherePartition,
    StochasticDecision,
    WallContact,
)
from src.models.packing import BoundaryKind, Configuration
from src.models.tessellation import Triangulation

logger = get_logger(__name__)


class ContactService:
    """Contact detection and jamming analysis on a triangulated configuration."""

    def __init__(self, contact_tolerance: Optional[float] = None):
        self.contact_tolerance = (
            settings.contact_tolerance if contact_tolerance is None else contact_tolerance
        )

    def default_rule(self) -> HardTolerance:
        return HardTolerance(epsilon=self.contact_tolerance)

    def build_contact_network(
        self,
        config: Configuration,
        tri: Triangulation,
        rule: Optional[ContactRule] = None,
    ) -> ContactNetwork:
        """Triangulation edges accepted as contacts by `rule`, plus wall contacts."""
        rule = rule or self.default_rule()
        _check_rule(rule)
        _check_match(config, tri)

        edges = tri.edges.reshape(-1, 2)
        if len(edges):
            delta = minimum_image(
                config.centers[edges[:, 1]] - config.centers[edges[:, 0]], config.boundary
            )
            reach = config.radii[edges[:, 0]] + config.radii[edges[:, 1]]
            gaps = np.linalg.norm(delta, axis=1) - reach
        else:
            gaps = np.empty(0)
        accepted = _accept(rule, gaps)

        walls = self._wall_contacts(config, _threshold(rule))
        net = ContactNetwork(
            n=config.n,
            edges=edges[accepted],
            gaps=gaps[accepted],
            wall_contacts=walls,
            rule=rule,
            candidate_edges=edges,
            candidate_gaps=gaps,
        )
        logger.debug(
            "contact_network_built",
            n=config.n,
            candidates=len(edges),
            contacts=int(accepted.sum()),
            walls=len(walls),
            rule=rule.kind,
        )
        return net

    def _wall_contacts(self, config: Configuration, threshold: float) -> tuple:
        boundary = config.boundary
        walls: List[WallContact] = []
        if boundary.kind == BoundaryKind.HARD:
            extents = np.asarray(boundary.extents)
            for i, (centre, radius) in enumerate(zip(config.centers, config.radii)):
                for axis in range(boundary.dimension):
                    low = float(centre[axis] - radius)
                    high = float(extents[axis] - centre[axis] - radius)
                    if low <= threshold:
                        walls.append(WallContact(sphere=i, axis=axis, side="low", gap=low))
                    if high <= threshold:
                        walls.append(WallContact(sphere=i, axis=axis, side="high", gap=high))
        elif boundary.kind == BoundaryKind.OPEN_BASE:
            axis = boundary.dimension - 1
            gaps = config.centers[:, axis] - config.radii
            for i in np.flatnonzero(gaps <= threshold):
                walls.append(WallContact(sphere=int(i), axis=axis, side="low", gap=float(gaps[i])))
        return tuple(walls)

    def classify_spheres(
        self,
        config: Configuration,
        tri: Triangulation,
        net: Optional[ContactNetwork] = None,
    ) -> SpherePartition:
        """Interior spheres have no triangulation edge to a synthetic point.

        Free-boundary spheres are boundary spheres failing the local jam check
        (with gravity for packings on a base).
        """
        _check_match(config, tri)
        if config.boundary.kind == BoundaryKind.PERIODIC:
            boundary: List[int] = []
        else:
            boundary = sorted(int(i) for i in tri.hull_linked)
        marked = set(boundary)
        interior = [i for i in range(config.n) if i not in marked]
        if boundary:
            net = net or self.build_contact_network(config, tri)
            gravity = config.boundary.gravity_axis is not None
            free = [
                i for i in boundary if not self.local_jam_check(config, net, i, gravity=gravity)
            ]
        else:
            free = []
        return SpherePartition(
            interior=tuple(interior), boundary=tuple(boundary), free_boundary=tuple(free)
        )

    def coordination_histogram(
        self, net: ContactNetwork, partition: Optional[SpherePartition] = None
    ) -> CoordinationReport:
        """Sphere-sphere contact counts; interior and boundary reported separately."""
        degrees = net.degrees()
        interior = list(range(net.n)) if partition is None else list(partition.interior)
        boundary = [] if partition is None else list(partition.boundary)
        inner = _histogram(degrees[interior])
        outer = _histogram(degrees[boundary])
        mean = float(degrees[interior].mean()) if interior else float("nan")
        return CoordinationReport(
            interior_histogram=inner,
            boundary_histogram=outer,
            mean=mean,
            interior_count=len(interior),
            wall_contact_count=len(net.wall_contacts),
        )

    def contact_normals(self, config: Configuration, net: ContactNetwork, index: int) -> np.ndarray:
        """Unit vectors from the centre of `index` towards each of its contacts."""
        normals = []
        others = net.contacts_of(index)
        if others:
            delta = minimum_image(config.centers[others] - config.centers[index], config.boundary)
            normals.extend(delta / np.linalg.norm(delta, axis=1)[:, None])
        for wall in net.walls_of(index):
            axis, sign = wall.normal
            unit = np.zeros(config.dimension)
            unit[axis] = sign
            normals.append(unit)
        return np.array(normals).reshape(-1, config.dimension)

    def local_jam_check(
        self, config: Configuration, net: ContactNetwork, index: int, gravity: bool = False
    ) -> bool:
        """Translation-blocking test for one sphere.

        Without gravity the sphere is jammed when no nonzero direction u has
        u . n_k <= 0 for every contact normal n_k, i.e. the normals span space
        and some strictly positive combination of them vanishes. With gravity
        the downward unit vector must lie in the cone of the normals.
        """
        normals = self.contact_normals(config, net, index)
        d = config.dimension
        if gravity:
            return gravity_stable(normals, d)
        if len(normals) < d + 1 or np.linalg.matrix_rank(normals, tol=1e-9) < d:
            return False
        result = linprog(
            c=np.zeros(len(normals)),
            A_eq=normals.T,
            b_eq=np.zeros(d),
            bounds=[(1.0, None)] * len(normals),
            method="highs",
        )
        return result.status == 0

    def jam_states(
        self, config: Configuration, net: ContactNetwork, gravity: bool = False
    ) -> np.ndarray:
        return np.array(
            [self.local_jam_check(config, net, i, gravity=gravity) for i in range(config.n)],
            dtype=bool,
        )

    def find_rattlers(
        self, config: Configuration, net: ContactNetwork, gravity: bool = False
    ) -> List[int]:
        """Unjammed spheres whose Voronoi neighbours are all jammed."""
        jammed = self.jam_states(config, net, gravity=gravity)
        rattlers = []
        for i in np.flatnonzero(~jammed):
            neighbours = net.neighbors_of(int(i))
            if neighbours and all(jammed[j] for j in neighbours):
                rattlers.append(int(i))
        return rattlers

    def connected_components(self, net: ContactNetwork) -> Components:
        """Component labels numbered in order of each component's smallest sphere."""
        components = sorted((sorted(c) for c in nx.connected_components(net.to_graph())), key=min)
        labels = np.empty(net.n, dtype=np.int64)
        for label, members in enumerate(components):
            labels[members] = label
        return Components(
            labels=tuple(int(v) for v in labels),
            count=len(components),
            sizes=tuple(len(c) for c in components),
        )

    def jam_summary(
        self,
        config: Configuration,
        net: ContactNetwork,
        partition: Optional[SpherePartition] = None,
        gravity: bool = False,
    ) -> JamSummary:
        """Jammed and rattler fractions over the scored (interior, when given) spheres."""
        jammed = self.jam_states(config, net, gravity=gravity)
        scored = list(range(config.n)) if partition is None else list(partition.interior)
        rattlers = set(self.find_rattlers(config, net, gravity=gravity))
        jammed_ids = tuple(i for i in scored if jammed[i])
        rattler_ids = tuple(i for i in scored if i in rattlers)
        total = len(scored)
        return JamSummary(
            jammed=jammed_ids,
            rattlers=rattler_ids,
            jammed_fraction=len(jammed_ids) / total if total else float("nan"),
            rattler_fraction=len(rattler_ids) / total if total else float("nan"),
            gravity=gravity,
            scored=tuple(scored) if partition is not None else None,
        )


def gravity_stable(normals: np.ndarray, dimension: int, tol: float = 1e-9) -> bool:
    """True when straight down is a non-negative combination of the contact normals."""
    if not len(normals):
        return False
    down = np.zeros(dimension)
    down[-1] = -1.0
    _, residual = nnls(np.asarray(normals, dtype=np.float64).T, down)
    return residual <= tol


def _check_rule(rule: ContactRule) -> None:
    if isinstance(rule, HardTolerance):
        values = [rule.epsilon]
    elif isinstance(rule, GaussianRule):
        values = [rule.sigma, rule.cutoff]
    else:
        raise ContactRuleError(f"unknown contact rule {rule!r}")
    if not all(math.isfinite(v) for v in values):
        raise ContactRuleError("contact rule parameters must be finite")


def _check_match(config: Configuration, tri: Triangulation) -> None:
    if tri.n_spheres != config.n or tri.dimension != config.dimension:
        raise TriangulationError(
            f"triangulation over {tri.n_spheres} spheres in {tri.dimension}D does not match "
            f"a configuration of {config.n} spheres in {config.dimension}D"
        )


def _threshold(rule: ContactRule) -> float:
    return rule.epsilon if isinstance(rule, HardTolerance) else rule.cutoff


def _accept(rule: ContactRule, gaps: np.ndarray) -> np.ndarray:
    if isinstance(rule, GaussianRule) and rule.decision == StochasticDecision.SEEDED:
        probability = norm.cdf((rule.cutoff - gaps) / rule.sigma)
        draws = make_rng(rule.seed, "contacts").random(len(gaps))
        return draws < probability
    return gaps <= _threshold(rule)


def _histogram(values: Iterable[int]) -> Dict[int, int]:
    counts: Dict[int, int] = {}
    for v in values:
        counts[int(v)] = counts.get(int(v), 0) + 1
    return dict(sorted(counts.items()))


contact_service = ContactService()
