"""Ensembles, two-sample model comparison and minimum-contrast fitting."""

import math
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError
from scipy.integrate import trapezoid
from scipy.spatial.distance import cdist
from scipy.stats import ks_2samp

from src.core.config import settings
from src.core.exceptions import (
    EnsembleAbortedError,
    GeneratorFailure,
    InferenceRefusal,
    ValidationFailure,
)
from src.core.logging import get_logger
from src.core.rng import derive_seed, make_rng
from src.generators import generate
from src.models.generator import GeneratorSpec
from src.models.inference import (
    ContrastFit,
    EnsembleFailure,
    KSBattery,
    KSDecision,
    ModelEnsemble,
    TestResult,
)
from src.models.network import ContactRule
from src.models.packing import Configuration
from src.services.analysis_service import DESCRIPTORS, columns_of, describe, resolve_descriptors

logger = get_logger(__name__)

MAX_FAILURE_RATE = 0.1
FLAT_TOL = 1e-12


def realization_seed(master_seed: int, index: int) -> int:
    return derive_seed(master_seed, "realization", index)


def _realize(task: Tuple[int, int, GeneratorSpec, List[str], Optional[ContactRule]]):
    """One ensemble row; module level so worker processes can import it."""
    index, seed, spec, names, rule = task
    try:
        config = generate(spec, seed)
        row = describe(config, names, rule)
    except (GeneratorFailure, ValidationFailure) as exc:
        return index, seed, None, type(exc).__name__, str(exc)
    if not np.all(np.isfinite(row)):
        return index, seed, None, "NonFiniteStatistic", "descriptor values are not all finite"
    return index, seed, row, None, None


def energy_statistic(distances: np.ndarray, labels: np.ndarray) -> float:
    """2 mean|a - b| - mean|a - a'| - mean|b - b'| over a pooled distance matrix."""
    a = labels
    b = ~labels
    cross = distances[np.ix_(a, b)].mean()
    within_a = distances[np.ix_(a, a)].mean()
    within_b = distances[np.ix_(b, b)].mean()
    return float(2.0 * cross - within_a - within_b)


def standardize(pooled: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Centre by the median and scale by the IQR (std when the IQR is 0).

    Returns the standardized matrix and a mask of non-constant columns.
    """
    median = np.median(pooled, axis=0)
    q75, q25 = np.percentile(pooled, [75, 25], axis=0)
    scale = q75 - q25
    std = pooled.std(axis=0)
    scale = np.where(scale > 0, scale, std)
    keep = scale > 0
    safe = np.where(keep, scale, 1.0)
    return (pooled - median) / safe, keep


def holm(p_values: Sequence[float]) -> np.ndarray:
    """Holm step-down adjusted p-values."""
    p = np.asarray(p_values, dtype=np.float64)
    m = len(p)
    order = np.argsort(p, kind="stable")
    adjusted = np.empty(m)
    running = 0.0
    for rank, k in enumerate(order):
        running = max(running, min(1.0, (m - rank) * p[k]))
        adjusted[k] = running
    return adjusted


class InferenceService:
    """Model assessment on ensembles of realizations."""

    def __init__(self, workers: Optional[int] = None, n_permutations: Optional[int] = None):
        self.workers = settings.workers if workers is None else workers
        self.n_permutations = settings.n_permutations if n_permutations is None else n_permutations

    def run_ensemble(
        self,
        spec: GeneratorSpec,
        size: int,
        master_seed: int,
        descriptors: Optional[Sequence[str]] = None,
        rule: Optional[ContactRule] = None,
        workers: Optional[int] = None,
    ) -> ModelEnsemble:
        """Generate and describe `size` realizations with seeds derived from `master_seed`."""
        if size < 2:
            raise ValidationFailure("an ensemble needs at least 2 realizations")
        names = resolve_descriptors(descriptors, spec.dimension)
        tasks = [(i, realization_seed(master_seed, i), spec, names, rule) for i in range(size)]
        workers = self.workers if workers is None else workers
        log = logger.bind(algorithm=spec.algorithm, size=size, master_seed=master_seed)
        log.info("ensemble_started", workers=workers, descriptors=len(names))
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_realize, tasks))
        else:
            results = [_realize(task) for task in tasks]
        results.sort(key=lambda r: r[0])

        rows, seeds, failures = [], [], []
        for index, seed, row, error, message in results:
            if row is None:
                log.error(
                    "realization_failed", index=index, seed=seed, error=error, message=message
                )
                failures.append(
                    EnsembleFailure(index=index, seed=seed, error=error, message=message)
                )
            else:
                rows.append(row)
                seeds.append(seed)
        if len(failures) > MAX_FAILURE_RATE * size:
            raise EnsembleAbortedError(
                f"{len(failures)} of {size} realizations failed; first seed {failures[0].seed}: "
                f"{failures[0].message}"
            )
        columns = columns_of(names)
        matrix = np.vstack(rows) if rows else np.empty((0, len(columns)))
        log.info("ensemble_finished", rows=len(rows), failures=len(failures))
        return ModelEnsemble(
            spec=spec,
            master_seed=master_seed,
            descriptors=tuple(names),
            columns=columns,
            matrix=matrix,
            seeds=tuple(seeds),
            failures=tuple(failures),
            version=settings.app_version,
        )

    def describe_configurations(
        self,
        configs: Sequence[Configuration],
        descriptors: Optional[Sequence[str]] = None,
        rule: Optional[ContactRule] = None,
    ) -> ModelEnsemble:
        """Ensemble matrix of given (e.g. imported) configurations; any failure is fatal."""
        if not configs:
            raise ValidationFailure("no configurations to describe")
        names = resolve_descriptors(descriptors, configs[0].dimension)
        rows = []
        for config in configs:
            row = describe(config, names, rule)
            if not np.all(np.isfinite(row)):
                raise InferenceRefusal("descriptor values are not all finite")
            rows.append(row)
        return ModelEnsemble(
            descriptors=tuple(names),
            columns=columns_of(names),
            matrix=np.vstack(rows),
            seeds=tuple(c.provenance.seed for c in configs),
            version=settings.app_version,
        )

    def energy_distance_test(
        self,
        a: ModelEnsemble,
        b: ModelEnsemble,
        n_permutations: Optional[int] = None,
        seed: int = 0,
        descriptors: Optional[Sequence[str]] = None,
    ) -> TestResult:
        """Permutation energy-distance test on pooled median/IQR standardized columns."""
        columns, x, y = _paired_columns(a, b, descriptors)
        if len(x) < 2 or len(y) < 2:
            raise InferenceRefusal("both ensembles need at least 2 rows")
        pooled = np.vstack([x, y])
        z, keep = standardize(pooled)
        dropped = tuple(c for c, k in zip(columns, keep) if not k)
        kept = tuple(c for c, k in zip(columns, keep) if k)
        if len(kept) < 2:
            raise InferenceRefusal(
                f"{len(kept)} non-constant columns; the energy test needs at least 2"
            )
        z = z[:, keep]
        distances = cdist(z, z)
        labels = np.zeros(len(z), dtype=bool)
        labels[: len(x)] = True
        observed = energy_statistic(distances, labels)

        n_perm = self.n_permutations if n_permutations is None else n_permutations
        tolerance = 1e-12 * max(1.0, float(distances.mean()))
        exceed = 0
        for k in range(n_perm):
            shuffled = make_rng(seed, "energy_permutation", k).permutation(labels)
            if energy_statistic(distances, shuffled) >= observed - tolerance:
                exceed += 1
        diagnostics = {
            c: float(z[: len(x), j].mean() - z[len(x) :, j].mean()) for j, c in enumerate(kept)
        }
        result = TestResult(
            statistic=observed,
            n_permutations=n_perm,
            p_value=(exceed + 1) / (n_perm + 1),
            columns=kept,
            dropped=dropped,
            diagnostics=diagnostics,
        )
        logger.info(
            "energy_test_finished", statistic=observed, p_value=result.p_value, columns=len(kept)
        )
        return result

    def ks_battery(
        self,
        a: ModelEnsemble,
        b: ModelEnsemble,
        alpha: float = 0.05,
        descriptors: Optional[Sequence[str]] = None,
    ) -> KSBattery:
        """Two-sample KS test per column with Holm correction."""
        if not 0.0 < alpha < 1.0:
            raise ValidationFailure("alpha must lie in (0, 1)")
        columns, x, y = _paired_columns(a, b, descriptors)
        results = [ks_2samp(x[:, j], y[:, j]) for j in range(len(columns))]
        raw = [float(r.pvalue) for r in results]
        adjusted = holm(raw) if raw else np.empty(0)
        decisions = tuple(
            KSDecision(
                column=c,
                statistic=float(r.statistic),
                p_value=p,
                adjusted_p=float(q),
                reject=bool(q <= alpha),
            )
            for c, r, p, q in zip(columns, results, raw, adjusted)
        )
        return KSBattery(alpha=alpha, decisions=decisions)

    def min_contrast_fit(
        self,
        base: GeneratorSpec,
        parameter: str,
        grid: Sequence[float],
        data: ModelEnsemble,
        descriptor: str = "g_curve",
        replications: int = 5,
        seed: int = 0,
        held_out: Optional[Sequence[str]] = None,
        rule: Optional[ContactRule] = None,
        n_permutations: Optional[int] = None,
    ) -> ContrastFit:
        """Grid search for the parameter whose mean descriptor is closest to the data mean.

        The contrast is the trapezoidal integral of the squared difference of
        mean curves over the descriptor grid (the squared difference for
        scalars). Held-out descriptors are then compared between the best fit
        and the data with the energy test. By default every other descriptor
        stored in `data` is held out; pass an empty list to skip the check.
        """
        if len(grid) < 2:
            raise ValidationFailure("minimum contrast needs at least 2 grid points")
        if replications < 5:
            raise ValidationFailure("minimum contrast needs at least 5 replications per grid point")
        if descriptor not in DESCRIPTORS:
            raise ValidationFailure(f"unknown descriptor {descriptor}")
        if parameter not in type(base).model_fields or parameter in ("algorithm", "dimension"):
            raise ValidationFailure(f"{base.algorithm} has no fittable parameter {parameter}")
        grid = tuple(sorted(float(v) for v in grid))
        _, data_matrix = data.select([descriptor])
        if not data_matrix.shape[1]:
            raise ValidationFailure(f"data ensemble has no {descriptor} columns")
        data_mean = data_matrix.mean(axis=0)
        info = DESCRIPTORS[descriptor]
        r = np.asarray(info.grid if info.grid is not None else (0.0,), dtype=np.float64)
        if held_out is None:
            held_out = [d for d in data.descriptors if d != descriptor and d in DESCRIPTORS]
        names = [descriptor, *[h for h in held_out if h != descriptor]]

        contrasts: List[float] = []
        profile: List[np.ndarray] = []
        ensembles: List[Optional[ModelEnsemble]] = []
        for k, value in enumerate(grid):
            spec = _with_parameter(base, parameter, value)
            try:
                ensemble = self.run_ensemble(
                    spec, replications, derive_seed(seed, "contrast", k), names, rule
                )
            except EnsembleAbortedError as exc:
                logger.warning(
                    "contrast_point_failed", parameter=parameter, value=value, error=str(exc)
                )
                contrasts.append(math.inf)
                profile.append(np.full(len(r), np.nan))
                ensembles.append(None)
                continue
            _, model = ensemble.select([descriptor])
            mean = model.mean(axis=0)
            squared = (mean - data_mean) ** 2
            contrast = float(trapezoid(squared, r)) if len(r) > 1 else float(squared.sum())
            contrasts.append(contrast)
            profile.append(mean)
            ensembles.append(ensemble)

        values = np.array(contrasts)
        finite = np.isfinite(values)
        if not finite.any():
            raise InferenceRefusal("every grid point failed; no contrast could be evaluated")
        best = float(values[finite].min())
        scale = max(1.0, abs(best))
        argmin = int(np.flatnonzero(finite & (values <= best + FLAT_TOL * scale))[0])
        spread = float(values[finite].max() - best)
        identifiable = bool(spread > FLAT_TOL * scale)
        if not identifiable:
            logger.warning("contrast_profile_flat", parameter=parameter, descriptor=descriptor)

        held_result, note = None, None
        extra = [h for h in held_out if h != descriptor]
        if extra:
            try:
                held_result = self.energy_distance_test(
                    ensembles[argmin], data, n_permutations, seed, descriptors=extra
                )
            except (InferenceRefusal, ValidationFailure) as exc:
                note = str(exc)
                logger.warning("held_out_test_refused", reason=note)

        logger.info(
            "contrast_fit_finished", parameter=parameter, best=grid[argmin], contrast=best
        )
        return ContrastFit(
            parameter=parameter,
            grid=grid,
            contrasts=tuple(contrasts),
            argmin=argmin,
            descriptor=descriptor,
            r=r,
            data_mean=data_mean,
            profile=tuple(profile),
            identifiable=identifiable,
            held_out=held_result,
            held_out_note=note,
        )


def _with_parameter(base: GeneratorSpec, parameter: str, value: float) -> GeneratorSpec:
    data = base.model_dump()
    data[parameter] = value
    try:
        return type(base).model_validate(data)
    except ValidationError as exc:
        raise ValidationFailure(f"{parameter}={value} is not valid for {base.algorithm}: {exc}")


def _paired_columns(
    a: ModelEnsemble, b: ModelEnsemble, descriptors: Optional[Sequence[str]]
) -> Tuple[Tuple[str, ...], np.ndarray, np.ndarray]:
    names = list(descriptors) if descriptors else list(a.descriptors)
    missing = [n for n in names if n not in a.descriptors or n not in b.descriptors]
    if missing:
        raise ValidationFailure(f"descriptors missing from an ensemble: {', '.join(missing)}")
    columns_a, x = a.select(names)
    columns_b, y = b.select(names)
    if columns_a != columns_b:
        raise ValidationFailure("ensembles disagree on descriptor columns")
    return columns_a, x, y


inference_service = InferenceService()
