"""Bulk resistance of the contact network between two electrode sphere sets."""

from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import LinearOperator, cg, spsolve

from src.core.config import settings
from src.core.exceptions import InferenceRefusal, ValidationFailure
from src.core.geometry import pair_search
from src.core.logging import get_logger
from src.core.rng import make_rng
from src.models.network import ContactNetwork
from src.models.packing import Configuration
from src.models.resistance import (
    AnisotropyResult,
    BulkResistance,
    ConductanceCurve,
    ElectrodeSpec,
    PotentialField,
    ResistorNetwork,
)

logger = get_logger(__name__)

RESIDUAL_TOL = 1e-10
ELECTRODE_QUANTILE = 0.05


class ResistanceService:
    """Resistor networks on contact graphs, solved with preconditioned CG."""

    def __init__(self, quantile: float = ELECTRODE_QUANTILE):
        self.quantile = quantile

    def auto_electrodes(
        self, config: Configuration, axis: Optional[int] = None, quantile: Optional[float] = None
    ) -> ElectrodeSpec:
        """Spheres below the lower and above the upper height quantile along `axis`.

        The axis defaults to the gravity axis, else the last axis.
        """
        axis = _electrode_axis(config, axis)
        q = self.quantile if quantile is None else quantile
        height = config.centers[:, axis]
        low, high = np.quantile(height, [q, 1.0 - q])
        source = tuple(int(i) for i in np.flatnonzero(height <= low))
        sink = tuple(int(i) for i in np.flatnonzero(height >= high))
        if not source or not sink or set(source) & set(sink):
            raise ValidationFailure(
                f"cannot split {config.n} spheres into electrodes along axis {axis}"
            )
        return ElectrodeSpec(source=source, sink=sink, axis=axis)

    def build_resistor_network(
        self,
        net: ContactNetwork,
        electrodes: ElectrodeSpec,
        conductances: Optional[np.ndarray] = None,
        config: Optional[Configuration] = None,
    ) -> ResistorNetwork:
        """Unit conductance per sphere-sphere contact.

        With `config` given and electrodes on a periodic axis, contacts that
        wrap across that axis are cut so current cannot bypass the electrodes.
        """
        members = set(electrodes.source) | set(electrodes.sink)
        if any(i < 0 or i >= net.n for i in members):
            raise ValidationFailure("electrode sphere outside the network")
        edges = net.edges.reshape(-1, 2).astype(np.int64)
        values = np.ones(len(edges)) if conductances is None else np.asarray(conductances, float)
        if len(values) != len(edges):
            raise ValidationFailure(f"{len(values)} conductances for {len(edges)} contacts")
        if config is not None and electrodes.axis is not None and len(edges):
            keep = ~_wraps(config, edges, electrodes.axis)
            edges, values = edges[keep], values[keep]
        return ResistorNetwork(
            n=net.n, edges=edges.reshape(-1, 2), conductances=values, electrodes=electrodes
        )

    def solve_bulk_resistance(self, rnet: ResistorNetwork) -> BulkResistance:
        """Potentials with source at 1 and sink at 0, edge currents and R = 1 / current."""
        n = rnet.n
        edges = rnet.edges.reshape(-1, 2)
        laplacian = _laplacian(n, edges, rnet.conductances)
        source = np.array(rnet.electrodes.source, dtype=np.int64)
        sink = np.array(rnet.electrodes.sink, dtype=np.int64)

        _, labels = connected_components(_adjacency(n, edges, rnet.conductances), directed=False)
        if not set(labels[source]) & set(labels[sink]):
            logger.info("electrodes_disconnected", n=n, edges=len(edges))
            return BulkResistance(resistance=float("inf"), connected=False, total_current=0.0)

        fixed = np.zeros(n, dtype=bool)
        fixed[source] = True
        fixed[sink] = True
        anchored = np.isin(labels, labels[fixed])
        free = np.flatnonzero(anchored & ~fixed)
        potentials = np.zeros(n)
        potentials[source] = 1.0

        solver = "direct"
        if len(free):
            block = laplacian[free][:, free].tocsr()
            rhs = -(laplacian[free][:, source] @ np.ones(len(source)))
            solution, solver = _solve(block, np.asarray(rhs).ravel())
            potentials[free] = solution

        flow = laplacian @ potentials
        residual = float(np.abs(flow[free]).max()) if len(free) else 0.0
        if residual >= RESIDUAL_TOL:
            logger.warning("kirchhoff_residual_high", residual=residual, solver=solver)
        total = float(flow[source].sum())
        currents = rnet.conductances * (potentials[edges[:, 0]] - potentials[edges[:, 1]])
        reported = potentials.copy()
        reported[~anchored] = np.nan
        return BulkResistance(
            resistance=1.0 / total if total > 0 else float("inf"),
            connected=total > 0,
            total_current=total,
            field=PotentialField(potentials=reported, residual=residual),
            currents=currents,
            solver=solver,
        )

    def random_walk_potential(
        self,
        rnet: ResistorNetwork,
        node: int,
        walks: int = 10_000,
        seed: int = 0,
        max_steps: int = 100_000,
    ) -> float:
        """Monte Carlo potential of `node`.

        The fraction of conductance-weighted walks from `node` that reach the
        source before the sink.
        """
        source = set(rnet.electrodes.source)
        sink = set(rnet.electrodes.sink)
        if node in source:
            return 1.0
        if node in sink:
            return 0.0
        neighbours: List[List[int]] = [[] for _ in range(rnet.n)]
        weights: List[List[float]] = [[] for _ in range(rnet.n)]
        for (i, j), c in zip(rnet.edges.reshape(-1, 2), rnet.conductances):
            if c > 0:
                neighbours[i].append(int(j))
                weights[i].append(float(c))
                neighbours[j].append(int(i))
                weights[j].append(float(c))
        cumulative = [np.cumsum(w) / sum(w) if w else np.empty(0) for w in weights]
        rng = make_rng(seed, "random_walk", node)
        hits = 0
        for _ in range(walks):
            current = node
            for _ in range(max_steps):
                if not neighbours[current]:
                    break
                step = int(np.searchsorted(cumulative[current], rng.random(), side="right"))
                current = neighbours[current][min(step, len(neighbours[current]) - 1)]
                if current in source:
                    hits += 1
                    break
                if current in sink:
                    break
        return hits / walks

    def resistance_along(
        self, config: Configuration, net: ContactNetwork, axis: Optional[int] = None
    ) -> BulkResistance:
        """Contact-network resistance between auto-selected electrodes along `axis`."""
        electrodes = self.auto_electrodes(config, axis)
        return self.solve_bulk_resistance(
            self.build_resistor_network(net, electrodes, config=config)
        )

    def conductance_vs_expansion(
        self,
        config: Configuration,
        expansions: Sequence[float],
        electrodes: Optional[ElectrodeSpec] = None,
    ) -> ConductanceCurve:
        """Bulk conductance with radii scaled by each factor.

        Each overlapping pair conducts with the radius of its intersection
        circle.
        """
        expansions = np.asarray(expansions, dtype=np.float64)
        if expansions.ndim != 1 or np.any(expansions < 1.0):
            raise ValidationFailure("expansion factors must be >= 1")
        electrodes = electrodes or self.auto_electrodes(config)
        reach = (
            2.0 * float(config.radii.max()) * float(expansions.max()) if len(expansions) else 0.0
        )
        pairs = pair_search(config, reach)
        edges_all = np.stack([pairs.i, pairs.j], axis=1)
        conductances, counts = [], []
        for f in expansions:
            a = f * config.radii[pairs.i]
            b = f * config.radii[pairs.j]
            d = pairs.distance
            overlapping = d < a + b
            along = (d**2 + a**2 - b**2) / (2.0 * d)
            disk = np.sqrt(np.clip(a**2 - along**2, 0.0, None))
            keep = overlapping & (disk > 0)
            edges = edges_all[keep]
            values = disk[keep]
            if electrodes.axis is not None and len(edges):
                cut = ~_wraps(config, edges, electrodes.axis)
                edges, values = edges[cut], values[cut]
            rnet = ResistorNetwork(
                n=config.n, edges=edges.reshape(-1, 2), conductances=values, electrodes=electrodes
            )
            conductances.append(self.solve_bulk_resistance(rnet).conductance)
            counts.append(len(edges))
        return ConductanceCurve(
            expansions=expansions,
            conductances=np.array(conductances),
            edge_counts=np.array(counts, dtype=np.int64),
        )

    def axis_resistances(
        self, packings: Sequence[Tuple[Configuration, ContactNetwork]], axes: Sequence[int]
    ) -> np.ndarray:
        """(realizations, axes) matrix of `resistance_along` values for `anisotropy_test`."""
        rows = [
            [self.resistance_along(config, net, int(axis)).resistance for axis in axes]
            for config, net in packings
        ]
        return np.array(rows, dtype=np.float64).reshape(len(rows), len(axes))

    def anisotropy_test(
        self,
        resistances: np.ndarray,
        axes: Sequence[int],
        n_permutations: Optional[int] = None,
        seed: int = 0,
    ) -> AnisotropyResult:
        """Permutation test that per-axis resistances share one distribution.

        `resistances` is (realizations, axes). The statistic is the spread of
        the per-axis means of log R; the null relabels axes within each
        realization. p uses the add-one convention, so identical columns give
        p = 1.
        """
        axes = tuple(int(a) for a in axes)
        if len(axes) < 2:
            raise ValidationFailure("anisotropy needs at least 2 axes")
        matrix = np.asarray(resistances, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] != len(axes):
            raise ValidationFailure(f"resistances must be (realizations, {len(axes)})")
        finite = np.all(np.isfinite(matrix) & (matrix > 0), axis=1)
        matrix = matrix[finite]
        if len(matrix) < 2:
            raise InferenceRefusal("fewer than 2 realizations with finite resistances")
        logs = np.log(matrix)
        observed = _spread(logs)
        n_perm = settings.n_permutations if n_permutations is None else n_permutations
        rng = make_rng(seed, "anisotropy")
        exceed = 0
        tolerance = 1e-12 * max(1.0, abs(observed))
        for _ in range(n_perm):
            if _spread(rng.permuted(logs, axis=1)) >= observed - tolerance:
                exceed += 1
        return AnisotropyResult(
            axes=axes,
            resistances=matrix,
            axis_means=logs.mean(axis=0),
            statistic=observed,
            p_value=(exceed + 1) / (n_perm + 1),
            n_permutations=n_perm,
        )


def _electrode_axis(config: Configuration, axis: Optional[int]) -> int:
    if axis is None:
        gravity = config.boundary.gravity_axis
        axis = gravity if gravity is not None else config.dimension - 1
    if not 0 <= axis < config.dimension:
        raise ValidationFailure(f"axis {axis} outside a {config.dimension}D configuration")
    return axis


def _wraps(config: Configuration, edges: np.ndarray, axis: int) -> np.ndarray:
    """Edges whose minimum-image link crosses the periodic boundary of `axis`."""
    period = config.boundary.periods[axis]
    if not np.isfinite(period):
        return np.zeros(len(edges), dtype=bool)
    raw = config.centers[edges[:, 1], axis] - config.centers[edges[:, 0], axis]
    return np.abs(raw) > 0.5 * period


def _adjacency(n: int, edges: np.ndarray, conductances: np.ndarray) -> sp.csr_matrix:
    live = conductances > 0
    e = edges[live]
    return sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n)).tocsr()


def _laplacian(n: int, edges: np.ndarray, conductances: np.ndarray) -> sp.csr_matrix:
    i, j = edges[:, 0], edges[:, 1]
    weights = sp.coo_matrix(
        (
            np.concatenate([conductances, conductances]),
            (np.concatenate([i, j]), np.concatenate([j, i])),
        ),
        shape=(n, n),
    ).tocsr()
    degree = np.asarray(weights.sum(axis=1)).ravel()
    return (sp.diags(degree) - weights).tocsr()


def _solve(block: sp.csr_matrix, rhs: np.ndarray):
    """Jacobi-preconditioned CG, falling back to a sparse direct solve."""
    diagonal = block.diagonal()
    inverse = np.where(diagonal > 0, 1.0 / np.where(diagonal > 0, diagonal, 1.0), 1.0)
    preconditioner = LinearOperator(block.shape, matvec=lambda x: inverse * x)
    solution, info = cg(
        block,
        rhs,
        rtol=1e-14,
        atol=0.0,
        maxiter=10 * block.shape[0] + 100,
        M=preconditioner,
    )
    if info == 0 and np.abs(block @ solution - rhs).max(initial=0.0) < 0.1 * RESIDUAL_TOL:
        return solution, "cg"
    logger.debug("cg_fallback_to_direct", info=info, size=block.shape[0])
    return np.asarray(spsolve(block.tocsc(), rhs)).ravel(), "direct"


def _spread(logs: np.ndarray) -> float:
    means = logs.mean(axis=0)
    return float(((means - means.mean()) ** 2).sum())


resistance_service = ResistanceService()
