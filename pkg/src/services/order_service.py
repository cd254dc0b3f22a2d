"""Bond-orientational order (q4, q6) and planar topological defects."""

import math
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from src.core.exceptions import DimensionMismatchError, ValidationFailure
from src.core.geometry import minimum_image
from src.core.logging import get_logger
from src.models.network import ContactNetwork, SpherePartition
from src.models.order import BondSet, BondSource, OrderReport, PlanarDefects
from src.models.packing import Configuration
from src.models.tessellation import Triangulation

logger = get_logger(__name__)

MAX_DEGREE = 6
MIN_CONTACT_BONDS = 4


def associated_legendre(l: int, x: np.ndarray) -> np.ndarray:
    """P_l^m(x) for m = 0..l by the standard three-term recurrence; shape (l + 1, len(x))."""
    if not 0 <= l <= MAX_DEGREE:
        raise ValidationFailure(f"degree {l} outside 0..{MAX_DEGREE}")
    x = np.asarray(x, dtype=np.float64)
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    table = np.zeros((l + 1, len(x)))
    for m in range(l + 1):
        # P_m^m = (-1)^m (2m - 1)!! s^m
        p_mm = (-1.0) ** m * _double_factorial(2 * m - 1) * s**m
        if l == m:
            table[m] = p_mm
            continue
        p_prev, p = p_mm, x * (2 * m + 1) * p_mm
        for k in range(m + 2, l + 1):
            p_prev, p = p, ((2 * k - 1) * x * p - (k + m - 1) * p_prev) / (k - m)
        table[m] = p
    return table


def harmonic_sums(l: int, vectors: np.ndarray) -> np.ndarray:
    """sum over bonds of Y_lm for m = 0..l (negative m follow by symmetry)."""
    vectors = np.asarray(vectors, dtype=np.float64).reshape(-1, 3)
    cos_theta = np.clip(vectors[:, 2], -1.0, 1.0)
    phi = np.arctan2(vectors[:, 1], vectors[:, 0])
    legendre = associated_legendre(l, cos_theta)
    sums = np.empty(l + 1, dtype=np.complex128)
    for m in range(l + 1):
        ratio = math.factorial(l - m) / math.factorial(l + m)
        norm = math.sqrt((2 * l + 1) / (4 * math.pi) * ratio)
        sums[m] = norm * np.sum(legendre[m] * np.exp(1j * m * phi))
    return sums


def q_from_sums(l: int, sums: np.ndarray, count: int) -> float:
    """sqrt(4 pi / (2l + 1) sum_m |mean Y_lm|^2) from the m >= 0 sums."""
    means = np.abs(sums / count) ** 2
    total = means[0] + 2.0 * means[1:].sum()
    return float(math.sqrt(4 * math.pi / (2 * l + 1) * total))


def steinhardt_q(l: int, vectors: np.ndarray) -> float:
    """Rotation-invariant q_l of one set of bond directions."""
    vectors = np.asarray(vectors, dtype=np.float64).reshape(-1, 3)
    if not len(vectors):
        raise ValidationFailure("no bonds")
    return q_from_sums(l, harmonic_sums(l, vectors), len(vectors))


class OrderService:
    """Bond sets and order metrics."""

    def bond_set(
        self,
        config: Configuration,
        net: ContactNetwork,
        tri: Optional[Triangulation] = None,
        min_contacts: int = MIN_CONTACT_BONDS,
    ) -> BondSet:
        """Contact bonds, falling back to Delaunay neighbours below `min_contacts` contacts."""
        neighbours = tri.neighbors() if tri is not None else None
        vectors: List[np.ndarray] = []
        sources: List[BondSource] = []
        for i in range(config.n):
            others = net.contacts_of(i)
            source = BondSource.CONTACTS
            if len(others) < min_contacts and neighbours is not None:
                others = neighbours[i]
                source = BondSource.NEIGHBORS
            vectors.append(_unit_bonds(config, i, others))
            sources.append(source)
        return BondSet(vectors=tuple(vectors), sources=tuple(sources))

    def bond_orientational(
        self,
        config: Configuration,
        bonds: BondSet,
        degrees: Iterable[int] = (4, 6),
        spheres: Optional[Sequence[int]] = None,
    ) -> OrderReport:
        """Per-sphere q_l and both global averages for each requested degree."""
        if config.dimension != 3:
            raise DimensionMismatchError("bond-orientational order needs a 3D configuration")
        if bonds.n != config.n:
            raise ValidationFailure(f"{bonds.n} bond sets for {config.n} spheres")
        candidates = range(config.n) if spheres is None else spheres
        scored = [i for i in candidates if len(bonds.vectors[i]) >= 2]
        excluded = [i for i in candidates if len(bonds.vectors[i]) < 2]
        if excluded:
            logger.debug("spheres_excluded_from_order", count=len(excluded))
        degrees = tuple(degrees)
        per_sphere: Dict[int, np.ndarray] = {}
        local_mean: Dict[int, float] = {}
        bond_sum: Dict[int, float] = {}
        for l in degrees:
            values = np.full(config.n, np.nan)
            total = np.zeros(l + 1, dtype=np.complex128)
            count = 0
            for i in scored:
                sums = harmonic_sums(l, bonds.vectors[i])
                values[i] = q_from_sums(l, sums, len(bonds.vectors[i]))
                total += sums
                count += len(bonds.vectors[i])
            per_sphere[l] = values
            local_mean[l] = float(np.mean(values[scored])) if scored else float("nan")
            bond_sum[l] = q_from_sums(l, total, count) if count else float("nan")
        return OrderReport(
            per_sphere=per_sphere,
            local_mean=local_mean,
            bond_sum=bond_sum,
            scored=tuple(scored),
            excluded=tuple(excluded),
        )

    def planar_defect_count(
        self,
        tri: Triangulation,
        interior: Optional[Sequence[int] | SpherePartition] = None,
    ) -> PlanarDefects:
        """Count interior Delaunay vertices whose degree is not 6."""
        if tri.dimension != 2:
            raise DimensionMismatchError("planar defects need a 2D triangulation")
        if isinstance(interior, SpherePartition):
            interior = interior.interior
        spheres = list(range(tri.n_spheres)) if interior is None else list(interior)
        degrees = tri.degrees()
        by_degree: Dict[int, int] = {}
        for i in spheres:
            degree = int(degrees[i])
            by_degree[degree] = by_degree.get(degree, 0) + 1
        defects = sum(c for degree, c in by_degree.items() if degree != 6)
        return PlanarDefects(
            by_degree=dict(sorted(by_degree.items())),
            defects=defects,
            interior=len(spheres),
            fraction=defects / len(spheres) if spheres else float("nan"),
        )


def _unit_bonds(config: Configuration, index: int, others: Sequence[int]) -> np.ndarray:
    if not len(others):
        return np.empty((0, config.dimension))
    delta = minimum_image(config.centers[list(others)] - config.centers[index], config.boundary)
    return delta / np.linalg.norm(delta, axis=1)[:, None]


def _double_factorial(k: int) -> float:
    result = 1.0
    while k > 1:
        result *= k
        k -= 2
    return result


order_service = OrderService()
