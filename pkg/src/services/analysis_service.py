"""Per-configuration analysis bundle and the statistic descriptor registry."""

from functools import cached_property
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.exceptions import ValidationFailure
from src.core.logging import get_logger
from src.models.inference import StatisticDescriptor
from src.models.network import ContactNetwork, ContactRule, SpherePartition
from src.models.packing import BoundaryKind, Configuration
from src.models.statistics import PointPattern, RadialFunction, RandomDesign, Window
from src.models.tessellation import Tessellation, Triangulation
from src.services.contact_service import contact_service
from src.services.order_service import order_service
from src.services.resistance_service import resistance_service
from src.services.spatial_stats_service import full_window, point_pattern, spatial_stats_service
from src.services.tessellation_service import tessellation_service

logger = get_logger(__name__)

TRIM_FRACTION = 0.1
PAIR_SHELL = 0.05
PAIR_REACH = 2.5
CONTACT_SAMPLES = 20_000
WINDOW_SLACK = 1e-9

G_PEAKS = (1.0, 1.73, 2.0)
G_CURVE = tuple(round(0.825 + PAIR_SHELL * k, 3) for k in range(34))
K_CURVE = tuple(round(0.5 + 0.1 * k, 3) for k in range(21))
QUARTILES = (0.25, 0.5, 0.75)

Extractor = Callable[["PackingAnalysis"], np.ndarray]


class PackingAnalysis:
    """Triangulation, tessellation, contacts and window of one configuration, built on demand.

    Scored spheres are the interior spheres whose centres lie in the analysis
    window. Open and unbounded packings are trimmed by max(1, 10%) of the
    region extent on every non-periodic axis.
    """

    def __init__(self, config: Configuration, rule: Optional[ContactRule] = None):
        self.config = config
        self.rule = rule or contact_service.default_rule()

    @cached_property
    def tri(self) -> Triangulation:
        return tessellation_service.delaunay(self.config)

    @cached_property
    def tess(self) -> Tessellation:
        return tessellation_service.voronoi(self.config)

    @cached_property
    def net(self) -> ContactNetwork:
        return contact_service.build_contact_network(self.config, self.tri, self.rule)

    @cached_property
    def partition(self) -> SpherePartition:
        return contact_service.classify_spheres(self.config, self.tri, self.net)

    @cached_property
    def window(self) -> Window:
        whole = full_window(self.config)
        if self.config.boundary.kind not in (BoundaryKind.OPEN_BASE, BoundaryKind.NONE):
            return whole
        lower, upper = np.array(whole.lower), np.array(whole.upper)
        for axis in np.flatnonzero(~self.config.boundary.periodic_mask):
            margin = max(1.0, TRIM_FRACTION * float(upper[axis] - lower[axis]))
            lower[axis] += margin
            upper[axis] -= margin
        if np.any(upper <= lower):
            raise ValidationFailure("packing too small for a trimmed analysis window")
        return Window.box(lower, upper)

    @cached_property
    def pattern(self) -> PointPattern:
        return point_pattern(self.config, self.window)

    @cached_property
    def scored(self) -> Tuple[int, ...]:
        inside = self.window.contains(self.config.centers)
        scored = tuple(i for i in self.partition.interior if inside[i])
        if not scored:
            raise ValidationFailure("no interior sphere inside the analysis window")
        return scored

    @cached_property
    def contained(self) -> Tuple[int, ...]:
        """Scored spheres whose whole Voronoi cell lies inside the window on non-periodic axes."""
        axes = np.flatnonzero(~self.config.boundary.periodic_mask)
        lower = np.asarray(self.window.lower)[axes] - WINDOW_SLACK
        upper = np.asarray(self.window.upper)[axes] + WINDOW_SLACK
        kept = []
        for i in self.scored:
            cell = self.tess.cells[i]
            if not cell.bounded:
                continue
            span = cell.vertices[:, axes]
            if np.all(span >= lower) and np.all(span <= upper):
                kept.append(i)
        return tuple(kept)

    @cached_property
    def scored_partition(self) -> SpherePartition:
        scored = set(self.scored)
        rest = tuple(i for i in range(self.config.n) if i not in scored)
        return SpherePartition(interior=self.scored, boundary=rest)

    @cached_property
    def pair_correlation(self) -> RadialFunction:
        g, _ = spatial_stats_service.pair_correlation(
            self.pattern, shell_width=PAIR_SHELL, r_max=PAIR_REACH
        )
        return g


DESCRIPTORS: Dict[str, StatisticDescriptor] = {}
_EXTRACTORS: Dict[str, Extractor] = {}


def descriptor(
    name: str,
    extractor: str,
    units: str = "1",
    grid: Optional[Sequence[float]] = None,
    description: str = "",
) -> Callable[[Extractor], Extractor]:
    """Register an extractor under a descriptor name."""

    def register(func: Extractor) -> Extractor:
        DESCRIPTORS[name] = StatisticDescriptor(
            name=name,
            extractor=extractor,
            units=units,
            grid=tuple(grid) if grid is not None else None,
            description=description,
        )
        _EXTRACTORS[name] = func
        return func

    return register


@descriptor("m1", "volume_fraction", description="nominal or interior Voronoi volume fraction")
def _m1(a: PackingAnalysis) -> np.ndarray:
    config = a.config
    if config.boundary.is_bounded:
        return np.array([config.volume_fraction()])
    density = tessellation_service.local_density(config, a.tess, a.contained)
    ids = sorted(density.values)
    if not ids:
        raise ValidationFailure("no bounded Voronoi cell inside the analysis window")
    cells = sum(a.tess.cells[i].volume for i in ids)
    return np.array([float(config.sphere_volumes[ids].sum() / cells)])


@descriptor("mean_coordination", "coordination_histogram", units="contacts")
def _mean_coordination(a: PackingAnalysis) -> np.ndarray:
    report = contact_service.coordination_histogram(a.net, a.scored_partition)
    return np.array([report.mean])


@descriptor("rattler_fraction", "jam_summary")
def _rattler_fraction(a: PackingAnalysis) -> np.ndarray:
    gravity = a.config.boundary.gravity_axis is not None
    summary = contact_service.jam_summary(a.config, a.net, a.scored_partition, gravity=gravity)
    return np.array([summary.rattler_fraction])


@descriptor("q6", "bond_orientational", description="bond-summed global Q6")
def _q6(a: PackingAnalysis) -> np.ndarray:
    bonds = order_service.bond_set(a.config, a.net, a.tri)
    report = order_service.bond_orientational(a.config, bonds, degrees=(6,), spheres=a.scored)
    return np.array([report.bond_sum[6]])


@descriptor("defect_fraction", "planar_defect_count")
def _defect_fraction(a: PackingAnalysis) -> np.ndarray:
    return np.array([order_service.planar_defect_count(a.tri, a.scored).fraction])


@descriptor("g_peaks", "pair_correlation", grid=G_PEAKS)
def _g_peaks(a: PackingAnalysis) -> np.ndarray:
    return np.array([a.pair_correlation.value_at(r) for r in G_PEAKS])


@descriptor("g_curve", "pair_correlation", grid=G_CURVE)
def _g_curve(a: PackingAnalysis) -> np.ndarray:
    return np.array([a.pair_correlation.value_at(r) for r in G_CURVE])


@descriptor("k_curve", "k_function", units="diameter^d", grid=K_CURVE)
def _k_curve(a: PackingAnalysis) -> np.ndarray:
    return spatial_stats_service.k_function(a.pattern, K_CURVE, correction="translation").values


@descriptor("s_quartiles", "spherical_contact", units="diameter", grid=QUARTILES)
def _s_quartiles(a: PackingAnalysis) -> np.ndarray:
    design = RandomDesign(count=CONTACT_SAMPLES, seed=0)
    return spatial_stats_service.contact_distance_quantiles(a.config, QUARTILES, a.window, design)


@descriptor("r_bulk", "solve_bulk_resistance", units="unit resistor")
def _r_bulk(a: PackingAnalysis) -> np.ndarray:
    return np.array([resistance_service.resistance_along(a.config, a.net).resistance])


@descriptor("escape_median", "escape_fraction", units="diameter")
def _escape_median(a: PackingAnalysis) -> np.ndarray:
    return np.array([tessellation_service.escape_fraction(a.config, a.tess, a.scored).median()])


def default_panel(dimension: int) -> List[str]:
    """Default descriptor panel; 2D swaps Q6 for the planar defect fraction."""
    order = "q6" if dimension == 3 else "defect_fraction"
    return [
        "m1",
        "mean_coordination",
        "rattler_fraction",
        order,
        "g_peaks",
        "s_quartiles",
        "r_bulk",
        "escape_median",
    ]


def resolve_descriptors(names: Optional[Sequence[str]], dimension: int) -> List[str]:
    names = list(names) if names else default_panel(dimension)
    unknown = [n for n in names if n not in DESCRIPTORS]
    if unknown:
        raise ValidationFailure(f"unknown descriptors: {', '.join(unknown)}")
    if len(set(names)) != len(names):
        raise ValidationFailure("descriptor names must be unique")
    return names


def columns_of(names: Sequence[str]) -> Tuple[str, ...]:
    return tuple(c for n in names for c in DESCRIPTORS[n].columns())


def describe(
    config: Configuration,
    names: Sequence[str],
    rule: Optional[ContactRule] = None,
) -> np.ndarray:
    """Row of descriptor values for one configuration, in column order."""
    analysis = PackingAnalysis(config, rule)
    parts = []
    for name in names:
        values = np.asarray(_EXTRACTORS[name](analysis), dtype=np.float64).ravel()
        expected = len(DESCRIPTORS[name].columns())
        if len(values) != expected:
            raise ValidationFailure(
                f"descriptor {name} gave {len(values)} values, expected {expected}"
            )
        parts.append(values)
    row = np.concatenate(parts) if parts else np.empty(0)
    logger.debug("configuration_described", n=config.n, columns=len(row))
    return row
