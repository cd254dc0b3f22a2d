"""Descriptor, ensemble and test-result models for model assessment."""

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.models.arrays import FloatArray
from src.models.generator import GeneratorSpec

COLUMN_SEPARATOR = "@"


class StatisticDescriptor(BaseModel):
    """A named scalar or curve statistic of one configuration.

    Curve descriptors are scalarized on `grid`, one matrix column per point.
    """

    model_config = ConfigDict(frozen=True)

    name: str
    extractor: str
    units: str = "1"
    grid: Optional[Tuple[float, ...]] = None
    description: str = ""

    @property
    def is_curve(self) -> bool:
        return self.grid is not None

    def columns(self) -> Tuple[str, ...]:
        if self.grid is None:
            return (self.name,)
        return tuple(f"{self.name}{COLUMN_SEPARATOR}{r:.3f}" for r in self.grid)


def descriptor_of(column: str) -> str:
    """Descriptor name a matrix column belongs to."""
    return column.split(COLUMN_SEPARATOR, 1)[0]


class EnsembleFailure(BaseModel):
    """A realization that could not be generated or described."""

    model_config = ConfigDict(frozen=True)

    index: int
    seed: int
    error: str
    message: str


class ModelEnsemble(BaseModel):
    """Statistic matrix of N independent realizations, one row per seed.

    `spec` is None for ensembles described from imported configurations.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    spec: Optional[GeneratorSpec] = None
    master_seed: Optional[int] = None
    descriptors: Tuple[str, ...]
    columns: Tuple[str, ...]
    matrix: FloatArray
    seeds: Tuple[int, ...]
    failures: Tuple[EnsembleFailure, ...] = ()
    version: str = ""

    @model_validator(mode="after")
    def check_shape(self):
        rows = len(self.seeds)
        if self.matrix.shape != (rows, len(self.columns)):
            raise ValueError(
                f"matrix shape {self.matrix.shape} does not match {rows} rows x "
                f"{len(self.columns)} columns"
            )
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("ensemble matrix must be finite; failed rows are recorded separately")
        return self

    @property
    def n(self) -> int:
        return len(self.seeds)

    def column_indices(self, descriptors: Sequence[str]) -> List[int]:
        return [
            k
            for name in descriptors
            for k, c in enumerate(self.columns)
            if descriptor_of(c) == name
        ]

    def select(self, descriptors: Sequence[str]) -> Tuple[Tuple[str, ...], np.ndarray]:
        """Columns and sub-matrix belonging to `descriptors`."""
        indices = self.column_indices(descriptors)
        return tuple(self.columns[k] for k in indices), self.matrix[:, indices]

    def column(self, name: str) -> np.ndarray:
        return self.matrix[:, self.columns.index(name)]


class TestResult(BaseModel):
    """Two-sample permutation test outcome.

    `diagnostics` holds the standardized mean difference per column.
    """

    __test__ = False

    model_config = ConfigDict(frozen=True)

    statistic: float
    n_permutations: int
    p_value: float = Field(..., gt=0.0, le=1.0)
    columns: Tuple[str, ...]
    dropped: Tuple[str, ...] = ()
    diagnostics: Dict[str, float] = Field(default_factory=dict)


class KSDecision(BaseModel):
    """Two-sample Kolmogorov-Smirnov result for one column."""

    column: str
    statistic: float
    p_value: float
    adjusted_p: float
    reject: bool


class KSBattery(BaseModel):
    """Per-column KS tests with Holm family-wise control."""

    alpha: float
    decisions: Tuple[KSDecision, ...]

    @property
    def rejections(self) -> Tuple[str, ...]:
        return tuple(d.column for d in self.decisions if d.reject)


class ContrastFit(BaseModel):
    """Minimum-contrast fit of one generator parameter over a grid.

    `profile[k]` is the model mean of the descriptor at `grid[k]`, on the
    descriptor's own grid `r`. Ties go to the smaller parameter value.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    parameter: str
    grid: Tuple[float, ...]
    contrasts: Tuple[float, ...]
    argmin: int
    descriptor: str
    r: FloatArray
    data_mean: FloatArray
    profile: Tuple[FloatArray, ...]
    identifiable: bool = True
    held_out: Optional[TestResult] = None
    held_out_note: Optional[str] = None

    @property
    def best(self) -> float:
        return self.grid[self.argmin]

    @property
    def minimum(self) -> float:
        return self.contrasts[self.argmin]
