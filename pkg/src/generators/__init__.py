"""Packing generators and the algorithm registry."""

from typing import Dict, Type

from pydantic import TypeAdapter

from src.generators.base import PackingGenerator
from src.generators.central import CentralPlacementGenerator
from src.generators.deposition import (
    ShakeRedepositGenerator,
    VisscherBolsterliGenerator,
    VoldGenerator,
    redeposit,
    shake_redeposit,
)
from src.generators.jodrey_tory import JodreyToryGenerator, recycle_jodrey_tory
from src.generators.lubachevsky_stillinger import LubachevskyStillingerGenerator
from src.generators.rsa import RSAGenerator
from src.models.generator import Algorithm, GeneratorSpec
from src.models.packing import Configuration

GENERATORS: Dict[Algorithm, Type[PackingGenerator]] = {
    Algorithm.RSA: RSAGenerator,
    Algorithm.VOLD: VoldGenerator,
    Algorithm.VISSCHER_BOLSTERLI: VisscherBolsterliGenerator,
    Algorithm.BENNETT: CentralPlacementGenerator,
    Algorithm.JODREY_TORY: JodreyToryGenerator,
    Algorithm.LUBACHEVSKY_STILLINGER: LubachevskyStillingerGenerator,
    Algorithm.SHAKE_REDEPOSIT: ShakeRedepositGenerator,
}

_spec_adapter = TypeAdapter(GeneratorSpec)


def parse_generator_spec(data: dict) -> GeneratorSpec:
    """Validate a mapping with an `algorithm` key into its spec class."""
    return _spec_adapter.validate_python(data)


def get_generator(spec: GeneratorSpec) -> PackingGenerator:
    """Generator instance for a spec."""
    return GENERATORS[Algorithm(spec.algorithm)](spec)


def generate(spec: GeneratorSpec, seed: int) -> Configuration:
    """Generate one realization of `spec`."""
    return get_generator(spec).generate(seed)


__all__ = [
    "GENERATORS",
    "PackingGenerator",
    "generate",
    "get_generator",
    "parse_generator_spec",
    "recycle_jodrey_tory",
    "redeposit",
    "shake_redeposit",
]
