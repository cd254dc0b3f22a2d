"""Base class shared by every packing generator."""

from abc import ABC, abstractmethod
from typing import Any, Dict

import numpy as np

from src.core.config import settings
from src.core.exceptions import GeneratorFailure, PackingLabError
from src.core.geometry import min_gap
from src.core.logging import get_logger
from src.core.rng import make_rng
from src.models.generator import spec_parameters
from src.models.packing import BoundarySpec, Configuration, Provenance

logger = get_logger(__name__)


class PackingGenerator(ABC):
    """Turns a generator spec and a 64-bit seed into a Configuration."""

    def __init__(self, spec):
        self.spec = spec

    @property
    def algorithm(self) -> str:
        return self.spec.algorithm

    @abstractmethod
    def _build(self, rng: np.random.Generator, seed: int) -> Configuration:
        """Run the algorithm."""

    def generate(self, seed: int) -> Configuration:
        """Generate one configuration; identical (spec, seed) give identical output.

        Errors outside the packing-lab hierarchy come out as GeneratorFailure.
        """
        log = logger.bind(algorithm=self.algorithm, n=self.spec.n, seed=seed)
        log.info("generation_started")
        rng = make_rng(seed, self.algorithm)
        try:
            config = self._build(rng, seed)
        except PackingLabError:
            raise
        except Exception as exc:
            log.error("generation_failed", error=str(exc), error_type=type(exc).__name__)
            raise GeneratorFailure(
                f"{self.algorithm} failed: {exc}",
                seed=seed,
                diagnostics={"error_type": type(exc).__name__},
            ) from exc
        self.check_overlap(config, seed)
        log.info("generation_finished", **_loggable(config.provenance.diagnostics))
        return config

    def check_overlap(self, config: Configuration, seed: int) -> None:
        if config.n < 2:
            return
        gap = min_gap(config)
        if gap < -settings.overlap_tolerance:
            logger.error(
                "overlap_after_generation", algorithm=self.algorithm, seed=seed, min_gap=gap
            )
            raise GeneratorFailure(
                f"{self.algorithm} left overlapping spheres (min gap {gap:.3e})",
                seed=seed,
                diagnostics={"min_gap": gap},
            )

    def _configuration(
        self,
        centers: np.ndarray,
        radii: np.ndarray,
        boundary: BoundarySpec,
        seed: int,
        **diagnostics: Any,
    ) -> Configuration:
        return Configuration(
            centers=centers,
            radii=radii,
            boundary=boundary,
            provenance=Provenance(
                algorithm=self.algorithm,
                parameters=spec_parameters(self.spec),
                seed=seed,
                diagnostics=diagnostics,
            ),
        )


def _loggable(diagnostics: Dict[str, Any]) -> Dict[str, Any]:
    return {k: v for k, v in diagnostics.items() if isinstance(v, (int, float, str, bool))}
