"""Random-set and point-process estimators.

Random-set moments (volume fraction, covariance, spherical contact) are
estimated by sampling the solid/void indicator at the points of a sample
design. Point-process functions (K, g, D, H_s, J) work on sphere centres.
Distances are in sphere diameters.
"""

import itertools
import math
from typing import Literal, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import quad
from scipy.spatial import cKDTree

from src.core.config import settings
from src.core.exceptions import ValidationFailure
from src.core.geometry import surface_distance
from src.core.logging import get_logger
from src.core.rng import make_rng
from src.models.packing import BoundaryKind, Configuration, ball_volume
from src.models.statistics import (
    CovarianceResult,
    Estimate,
    GridDesign,
    LocalFractionField,
    MixedMoment,
    NeighbourFunctions,
    PointPattern,
    QuadratCounts,
    RadialFunction,
    RandomDesign,
    SampleDesign,
    Window,
)

logger = get_logger(__name__)

Phase = Literal["solid", "void"]
Correction = Literal["minus", "translation"]

MIN_QUADRATS = 10


def sample_points(window: Window, design: SampleDesign) -> np.ndarray:
    """Sample locations of a design inside `window`."""
    d = window.dimension
    if isinstance(design, GridDesign):
        axes = []
        for a in range(d):
            count = max(1, int(math.floor(window.extents[a] / design.spacing + 1e-9)))
            axes.append(window.lower[a] + design.spacing * (np.arange(count) + 0.5))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)
    rng = make_rng(design.seed, "design")
    return window.lower + rng.random((design.count, d)) * window.extents


def full_window(config: Configuration) -> Window:
    lower, upper = config.region_bounds()
    return Window.box(lower, upper)


def point_pattern(config: Configuration, window: Optional[Window] = None) -> PointPattern:
    """Centres inside `window` (default: the whole region).

    A periodic box observed as a whole gives a periodic pattern.
    """
    whole = full_window(config)
    window = window or whole
    periodic = (
        config.boundary.kind == BoundaryKind.PERIODIC
        and np.allclose(window.lower, whole.lower)
        and np.allclose(window.upper, whole.upper)
    )
    inside = window.contains(config.centers) if config.n else np.zeros(0, dtype=bool)
    return PointPattern(points=config.centers[inside], window=window, periodic=periodic)


class SpatialStatsService:
    """Estimators of random-set moments and point-process summary functions."""

    def __init__(self, shell_width: Optional[float] = None, default_samples: int = 100_000):
        self.shell_width = settings.default_shell_width if shell_width is None else shell_width
        self.default_design = RandomDesign(count=default_samples, seed=0)

    # random-set moments

    def _window(self, config: Configuration, window: Optional[Window]) -> Window:
        whole = full_window(config)
        if window is None:
            return whole
        if window.dimension != config.dimension:
            raise ValidationFailure(
                f"{window.dimension}D window for a {config.dimension}D configuration"
            )
        if window.volume() <= 0:
            raise ValidationFailure("empty window")
        if config.boundary.is_bounded and (
            np.any(window.lower < whole.lower - 1e-9) or np.any(window.upper > whole.upper + 1e-9)
        ):
            raise ValidationFailure("window extends outside the packing region")
        return window

    def volume_fraction(
        self,
        config: Configuration,
        window: Optional[Window] = None,
        design: Optional[SampleDesign] = None,
        phase: Phase = "solid",
    ) -> Estimate:
        """Point-sampling estimate of the solid (or void) volume fraction."""
        window = self._window(config, window)
        points = sample_points(window, design or self.default_design)
        solid = int(np.count_nonzero(surface_distance(config, points) <= 0))
        total = len(points)
        hits = solid if phase == "solid" else total - solid
        p = hits / total
        return Estimate(value=p, standard_error=math.sqrt(p * (1 - p) / total), samples=total)

    def exact_volume_fraction(
        self, config: Configuration, window: Optional[Window] = None
    ) -> float:
        """Sphere-window intersection volume by quadrature, divided by |W|."""
        window = self._window(config, window)
        if config.dimension not in (2, 3):
            raise ValidationFailure("exact volume fraction needs 2D or 3D")
        mask = config.boundary.periodic_mask
        periods = config.boundary.periods
        shifts = [
            np.array(s) * np.where(mask, periods, 0.0)
            for s in itertools.product(*[(-1, 0, 1) if m else (0,) for m in mask])
        ]
        covered = 0.0
        for centre, radius in zip(config.centers, config.radii):
            for shift in shifts:
                covered += ball_box_volume(
                    centre + shift, float(radius), window.lower, window.upper
                )
        return covered / window.volume()

    def local_volume_fraction(
        self,
        config: Configuration,
        cell_size: float,
        window: Optional[Window] = None,
        design: Optional[SampleDesign] = None,
    ) -> LocalFractionField:
        """Volume fraction estimated in each cell of a grid of subwindows."""
        window = self._window(config, window)
        if cell_size <= 0:
            raise ValidationFailure("cell size must be positive")
        edges = window.cells(cell_size)
        shape = tuple(len(e) - 1 for e in edges)
        if min(shape) < 1:
            raise ValidationFailure("cell size exceeds the window")
        points = sample_points(window, design or self.default_design)
        index = np.floor((points - window.lower) / cell_size).astype(int)
        keep = np.all((index >= 0) & (index < np.array(shape)), axis=1)
        flat = np.ravel_multi_index(tuple(index[keep].T), shape)
        solid = surface_distance(config, points[keep]) <= 0
        samples = np.bincount(flat, minlength=int(np.prod(shape)))
        hits = np.bincount(flat, weights=solid.astype(float), minlength=int(np.prod(shape)))
        with np.errstate(invalid="ignore", divide="ignore"):
            values = np.where(samples > 0, hits / samples, np.nan)
        high_variance = cell_size < 2.0 * float(config.radii.max()) if config.n else False
        if high_variance:
            logger.warning("subwindow_smaller_than_sphere", cell_size=cell_size)
        return LocalFractionField(
            edges=edges,
            values=values.reshape(shape),
            samples=samples.reshape(shape),
            cell_size=cell_size,
            high_variance=high_variance,
        )

    def covariance(
        self,
        config: Configuration,
        lags: Sequence[float],
        window: Optional[Window] = None,
        design: Optional[SampleDesign] = None,
        mixed: Sequence[Tuple[Sequence[float], Sequence[float]]] = (),
    ) -> CovarianceResult:
        """Two-point probability m2 at each lag, averaged over the axis directions.

        Sample points whose translate leaves the window are dropped (except in
        a periodic box observed whole). `mixed` lists lag-vector pairs (x, y)
        for m3 and m110 = m2(x) - m3(x, y), evaluated on shared sample points.
        """
        window = self._window(config, window)
        lags = np.asarray(lags, dtype=np.float64)
        if lags.ndim != 1 or np.any(lags < 0):
            raise ValidationFailure("lags must be a 1-d array of non-negative distances")
        wraps = point_pattern(config, window).periodic
        if not wraps and len(lags) and lags.max() >= 0.5 * window.extents.min():
            raise ValidationFailure("lag too large: must be shorter than half the window")

        points = sample_points(window, design or self.default_design)
        base = surface_distance(config, points) <= 0
        d = config.dimension
        values, counts = [], []
        for lag in lags:
            joint = total = 0
            for axis in range(d):
                shifted = points.copy()
                shifted[:, axis] += lag
                keep = np.ones(len(points), dtype=bool) if wraps else window.contains(shifted)
                both = base[keep] & (surface_distance(config, shifted[keep]) <= 0)
                joint += int(np.count_nonzero(both))
                total += int(np.count_nonzero(keep))
            values.append(joint / total if total else float("nan"))
            counts.append(total)
        values = np.array(values)
        counts = np.array(counts)
        with np.errstate(invalid="ignore", divide="ignore"):
            errors = np.sqrt(values * (1 - values) / counts)
        m2 = RadialFunction(
            r=lags,
            values=values,
            counts=counts,
            estimator="covariance",
            correction="periodic" if wraps else "translated-window",
            standard_errors=errors,
        )
        moments = [self._mixed(config, window, points, base, x, y, wraps) for x, y in mixed]
        m1 = float(np.count_nonzero(base)) / len(points)
        return CovarianceResult(m2=m2, volume_fraction=m1, mixed=moments)

    def _mixed(self, config, window, points, base, x, y, wraps) -> MixedMoment:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.shape != (config.dimension,) or y.shape != (config.dimension,):
            raise ValidationFailure("mixed-moment lags must be d-vectors")
        px, py = points + x, points + y
        keep = (
            np.ones(len(points), dtype=bool)
            if wraps
            else window.contains(px) & window.contains(py)
        )
        if not keep.any():
            raise ValidationFailure("lag too large: no sample point keeps both translates")
        ix = surface_distance(config, px[keep]) <= 0
        iy = surface_distance(config, py[keep]) <= 0
        i0 = base[keep]
        total = int(np.count_nonzero(keep))
        pair = int(np.count_nonzero(i0 & ix))
        triple = int(np.count_nonzero(i0 & ix & iy))
        return MixedMoment(
            x=tuple(float(v) for v in x),
            y=tuple(float(v) for v in y),
            m2=pair / total,
            m3=triple / total,
            m110=(pair - triple) / total,
            samples=total,
        )

    def spherical_contact(
        self,
        config: Configuration,
        r_grid: Sequence[float],
        window: Optional[Window] = None,
        design: Optional[SampleDesign] = None,
    ) -> RadialFunction:
        """S(r): distribution of the distance from a void point to the nearest sphere surface."""
        window = self._window(config, window)
        r_grid = _check_grid(r_grid)
        distance = surface_distance(config, sample_points(window, design or self.default_design))
        void = distance[distance > 0]
        if not len(void):
            raise ValidationFailure("no sample point falls in the void phase")
        void.sort()
        below = np.searchsorted(void, r_grid, side="right")
        return RadialFunction(
            r=r_grid,
            values=below / len(void),
            counts=np.full(len(r_grid), len(void)),
            estimator="spherical_contact",
        )

    def contact_distance_quantiles(
        self,
        config: Configuration,
        probabilities: Sequence[float] = (0.25, 0.5, 0.75),
        window: Optional[Window] = None,
        design: Optional[SampleDesign] = None,
    ) -> np.ndarray:
        """Quantiles of the void-point distance to the nearest sphere surface (inverse of S)."""
        window = self._window(config, window)
        distance = surface_distance(config, sample_points(window, design or self.default_design))
        void = distance[distance > 0]
        if not len(void):
            raise ValidationFailure("no sample point falls in the void phase")
        return np.quantile(void, np.asarray(probabilities, dtype=np.float64))

    # point-process functions

    def _pairs(self, pattern: PointPattern, reach: float) -> Tuple[np.ndarray, np.ndarray]:
        """Index pairs within `reach` and their displacements."""
        points = pattern.points
        if pattern.periodic:
            box = pattern.window.extents
            tree = cKDTree(np.mod(points - pattern.window.lower, box), boxsize=box)
        else:
            tree = cKDTree(points)
        pairs = tree.query_pairs(reach, output_type="ndarray")
        if not len(pairs):
            return np.empty((0, 2), dtype=np.int64), np.empty((0, pattern.dimension))
        delta = points[pairs[:, 1]] - points[pairs[:, 0]]
        if pattern.periodic:
            box = pattern.window.extents
            delta -= box * np.round(delta / box)
        return pairs, delta

    def _check_reach(self, pattern: PointPattern, reach: float) -> None:
        if pattern.n < 2:
            raise ValidationFailure("pattern needs at least 2 points")
        if reach >= 0.5 * pattern.window.extents.min():
            raise ValidationFailure("r too large: must be shorter than half the window")

    def k_function(
        self,
        pattern: PointPattern,
        r_grid: Sequence[float],
        correction: Correction = "minus",
    ) -> RadialFunction:
        """Edge-corrected estimate of Ripley's K.

        A periodic pattern needs no edge correction and reports "periodic".
        """
        r_grid = _check_grid(r_grid)
        self._check_reach(pattern, float(r_grid.max()))
        n, volume = pattern.n, pattern.window.volume()
        pairs, delta = self._pairs(pattern, float(r_grid.max()))
        distance = np.linalg.norm(delta, axis=1)
        order = np.argsort(distance)
        distance = distance[order]
        pairs = pairs[order]
        delta = delta[order]
        counts = np.searchsorted(distance, r_grid, side="right")

        if pattern.periodic:
            values = volume * 2.0 * counts / (n * (n - 1))
            label = "periodic"
        elif correction == "translation":
            weights = volume / pattern.window.overlap_volume(delta)
            cumulative = np.concatenate([[0.0], np.cumsum(weights)])
            values = volume * 2.0 * cumulative[counts] / (n * (n - 1))
            label = "translation"
        elif correction == "minus":
            border = pattern.window.border_distance(pattern.points)
            intensity = n / volume
            values = np.empty(len(r_grid))
            for k, r in enumerate(r_grid):
                close = slice(0, counts[k])
                inner = border >= r
                numerator = np.count_nonzero(inner[pairs[close, 0]]) + np.count_nonzero(
                    inner[pairs[close, 1]]
                )
                kept = np.count_nonzero(inner)
                values[k] = numerator / (kept * intensity) if kept else np.nan
            label = "minus"
        else:
            raise ValidationFailure(f"unknown edge correction {correction!r}")
        return RadialFunction(
            r=r_grid, values=values, counts=counts, estimator="k_function", correction=label
        )

    def l_function(self, k: RadialFunction, dimension: int) -> RadialFunction:
        """L(r) = (K(r) / b_d)^(1/d)."""
        values = (np.clip(k.values, 0.0, None) / ball_volume(dimension)) ** (1.0 / dimension)
        return k.model_copy(update={"values": values, "estimator": "l_function"})

    def pair_correlation(
        self,
        pattern: PointPattern,
        shell_width: Optional[float] = None,
        r_max: Optional[float] = None,
    ) -> Tuple[RadialFunction, RadialFunction]:
        """Shell-count estimates of g(r) and RDF(r) = lambda d b_d r^(d-1) g(r)."""
        width = self.shell_width if shell_width is None else shell_width
        if width <= 0:
            raise ValidationFailure("shell width must be positive")
        if pattern.n < 2:
            raise ValidationFailure("empty pattern")
        half = 0.5 * float(pattern.window.extents.min())
        r_max = min(half, 5.0) if r_max is None else r_max
        self._check_reach(pattern, r_max - 1e-12)
        bins = max(1, int(math.floor(r_max / width + 1e-9)))
        edges = width * np.arange(bins + 1)
        n, d, volume = pattern.n, pattern.dimension, pattern.window.volume()

        pairs, delta = self._pairs(pattern, float(edges[-1]))
        distance = np.linalg.norm(delta, axis=1)
        if pattern.periodic:
            weights = np.ones(len(distance))
            label = "periodic"
        else:
            weights = volume / pattern.window.overlap_volume(delta)
            label = "translation"
        counts, _ = np.histogram(distance, bins=edges)
        weighted, _ = np.histogram(distance, bins=edges, weights=weights)
        shell = ball_volume(d) * (edges[1:] ** d - edges[:-1] ** d)
        g = 2.0 * weighted / (n * (n - 1) * shell / volume)
        centres = 0.5 * (edges[:-1] + edges[1:])
        rdf = pattern.intensity * d * ball_volume(d) * centres ** (d - 1) * g
        common = dict(r=centres, counts=counts, edges=edges, correction=label)
        return (
            RadialFunction(values=g, estimator="pair_correlation", **common),
            RadialFunction(values=rdf, estimator="radial_distribution", **common),
        )

    def neighbour_functions(
        self,
        pattern: PointPattern,
        r_grid: Sequence[float],
        k_max: int = 1,
        design: Optional[SampleDesign] = None,
    ) -> NeighbourFunctions:
        """D_k, H_s and J with a fixed minus-sampling border of max(r_grid).

        Using one border for every r keeps each estimate nondecreasing and
        the D_k ordered.
        """
        r_grid = _check_grid(r_grid)
        r_max = float(r_grid.max())
        if k_max < 1:
            raise ValidationFailure("k_max must be at least 1")
        if pattern.n <= k_max:
            raise ValidationFailure(f"pattern of {pattern.n} points has no {k_max}-th neighbour")
        window = pattern.window
        if pattern.periodic:
            box = window.extents
            tree = cKDTree(np.mod(pattern.points - window.lower, box), boxsize=box)
            eligible = np.ones(pattern.n, dtype=bool)
            sample_window = window
        else:
            self._check_reach(pattern, r_max)
            tree = cKDTree(pattern.points)
            eligible = window.border_distance(pattern.points) >= r_max
            sample_window = window.eroded(r_max)
        if not eligible.any():
            raise ValidationFailure("no point lies farther than r_max from the window edge")

        query = pattern.points[eligible]
        if pattern.periodic:
            query = np.mod(query - window.lower, window.extents)
        distance, _ = tree.query(query, k=k_max + 1)
        distance = np.sort(distance, axis=1)[:, 1:]
        kept = len(query)
        d_k = {}
        for k in range(1, k_max + 1):
            column = np.sort(distance[:, k - 1])
            d_k[k] = RadialFunction(
                r=r_grid,
                values=np.searchsorted(column, r_grid, side="right") / kept,
                counts=np.full(len(r_grid), kept),
                estimator=f"nearest_neighbour_{k}",
                correction="periodic" if pattern.periodic else "minus",
            )

        samples = sample_points(sample_window, design or RandomDesign(count=10_000, seed=0))
        if pattern.periodic:
            samples = np.mod(samples - window.lower, window.extents)
        empty, _ = tree.query(samples, k=1)
        empty.sort()
        h_values = np.searchsorted(empty, r_grid, side="right") / len(empty)
        h_s = RadialFunction(
            r=r_grid,
            values=h_values,
            counts=np.full(len(r_grid), len(empty)),
            estimator="empty_space",
            correction="periodic" if pattern.periodic else "minus",
        )
        defined = h_values < 1.0
        with np.errstate(invalid="ignore", divide="ignore"):
            j_values = np.where(defined, (1.0 - d_k[1].values) / (1.0 - h_values), np.nan)
        j = RadialFunction(
            r=r_grid,
            values=j_values,
            counts=np.where(defined, kept, 0),
            estimator="j_function",
            correction=h_s.correction,
        )
        return NeighbourFunctions(d=d_k[1], h_s=h_s, j=j, d_k=d_k)

    def local_intensity_disorder(self, pattern: PointPattern, cell_size: float) -> QuadratCounts:
        """Quadrat counts over cells of side `cell_size`; variance/mean ratio."""
        if cell_size <= 0:
            raise ValidationFailure("cell size must be positive")
        edges = pattern.window.cells(cell_size)
        cells = int(np.prod([len(e) - 1 for e in edges]))
        if cells < MIN_QUADRATS:
            raise ValidationFailure(f"{cells} cells; at least {MIN_QUADRATS} are needed")
        counts, _ = np.histogramdd(pattern.points, bins=edges)
        counts = counts.astype(np.int64)
        mean = float(counts.mean())
        variance = float(counts.var(ddof=1))
        return QuadratCounts(
            counts=counts,
            cell_size=cell_size,
            mean=mean,
            variance=variance,
            ratio=variance / mean if mean > 0 else float("nan"),
        )


def ball_box_volume(
    center: np.ndarray, radius: float, lower: np.ndarray, upper: np.ndarray
) -> float:
    """Volume of a ball intersected with an axis-aligned box (2D or 3D)."""
    center = np.asarray(center, dtype=np.float64)
    d = len(center)
    if np.any(center + radius <= lower) or np.any(center - radius >= upper):
        return 0.0
    if np.all(center - radius >= lower) and np.all(center + radius <= upper):
        return ball_volume(d) * radius**d
    low = max(lower[0], center[0] - radius)
    high = min(upper[0], center[0] + radius)
    if high <= low:
        return 0.0

    if d == 2:

        def chord(x: float) -> float:
            h = math.sqrt(max(radius * radius - (x - center[0]) ** 2, 0.0))
            return max(0.0, min(upper[1], center[1] + h) - max(lower[1], center[1] - h))

        value, _ = quad(chord, low, high, epsabs=1e-12, epsrel=1e-10, limit=200)
        return value

    def slab(x: float) -> float:
        h = math.sqrt(max(radius * radius - (x - center[0]) ** 2, 0.0))
        if h <= 0:
            return 0.0
        return ball_box_volume(center[1:], h, lower[1:], upper[1:])

    value, _ = quad(slab, low, high, epsabs=1e-10, epsrel=1e-9, limit=200)
    return value


def _check_grid(r_grid: Sequence[float]) -> np.ndarray:
    r_grid = np.asarray(r_grid, dtype=np.float64)
    if r_grid.ndim != 1 or not len(r_grid):
        raise ValidationFailure("r grid must be a non-empty 1-d array")
    if np.any(r_grid < 0) or np.any(np.diff(r_grid) <= 0):
        raise ValidationFailure("r grid must be non-negative and strictly increasing")
    return r_grid


spatial_stats_service = SpatialStatsService()
