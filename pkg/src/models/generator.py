"""Generator specifications for every packing algorithm."""

from enum import Enum
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator


class Algorithm(str, Enum):
    """Registered packing algorithms."""

    RSA = "rsa"
    VOLD = "vold"
    VISSCHER_BOLSTERLI = "visscher_bolsterli"
    BENNETT = "bennett"
    JODREY_TORY = "jodrey_tory"
    LUBACHEVSKY_STILLINGER = "lubachevsky_stillinger"
    SHAKE_REDEPOSIT = "shake_redeposit"


class _SpecBase(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n: int = Field(..., ge=1)
    dimension: int = Field(default=3, ge=2, le=3)
    radius: float = Field(default=0.5, gt=0.0)


class RSAInit(_SpecBase):
    """Random sequential adsorption (simple sequential inhibition) in a periodic box."""

    algorithm: Literal["rsa"] = "rsa"
    box_edge: Optional[float] = Field(default=None, gt=0.0)
    target_fraction: float = Field(default=0.3, gt=0.0, le=0.3)
    max_attempts_per_sphere: int = Field(default=5000, ge=1)


class VoldBallistic(_SpecBase):
    """Vold deposition: stick at first contact with probability p_stick, else roll."""

    algorithm: Literal["vold"] = "vold"
    p_stick: float = Field(default=1.0, ge=0.0, le=1.0)
    lateral_extent: Optional[float] = Field(default=None, gt=0.0)


class VisscherBolsterli(_SpecBase):
    """Visscher-Bolsterli deposition with k trial drops per sphere."""

    algorithm: Literal["visscher_bolsterli"] = "visscher_bolsterli"
    k_drops: int = Field(default=4, ge=1)
    lateral_extent: Optional[float] = Field(default=None, gt=0.0)
    first_layer_size_jitter: float = Field(default=0.02, ge=0.0, lt=0.5)


class BennettCentral(_SpecBase):
    """Greedy central placement closest to the origin.

    With `outward_pockets` a sphere may only enter a pocket from the side facing
    away from the origin, so covered depressions are not refilled from behind.
    """

    algorithm: Literal["bennett"] = "bennett"
    seed_cluster: Literal["simplex", "square"] = "simplex"
    candidate_pool: int = Field(default=0, ge=0)
    outward_pockets: bool = True


class JodreyTory(_SpecBase):
    """Jodrey-Tory shrink-and-separate rearrangement in a periodic box.

    `shrink` and `grow` are in units of the initial nominal sphere radius.
    """

    algorithm: Literal["jodrey_tory"] = "jodrey_tory"
    shrink: float = Field(default=1e-4, gt=0.0)
    grow: float = Field(default=2e-4, gt=0.0)
    cycles: int = Field(default=2000, ge=1)
    stop_gap: float = Field(default=1e-5, gt=0.0)
    initial_fraction: float = Field(default=0.9, gt=0.0)
    cleanup_sweeps: int = Field(default=20000, ge=1)


class LubachevskyStillinger(_SpecBase):
    """Event-driven growth of hard spheres in a periodic box.

    Without `max_events` the run may process 5000 events per sphere.
    """

    algorithm: Literal["lubachevsky_stillinger"] = "lubachevsky_stillinger"
    dimension: int = Field(default=2, ge=2, le=3)
    growth_rate: float = Field(default=0.01, gt=0.0)
    max_events: Optional[int] = Field(default=None, ge=1)
    box_edge: Optional[float] = Field(default=None, gt=0.0)
    jam_interval: float = Field(default=1e-9, gt=0.0)
    max_queue: int = Field(default=5_000_000, ge=1)


class ShakeRedeposit(_SpecBase):
    """Shake a VB packing and collapse it again with VB rules.

    `base` is generated first; its n and dimension take precedence. Without a
    `collision_threshold` the jiggling stops after 20 collisions per sphere.
    """

    algorithm: Literal["shake_redeposit"] = "shake_redeposit"
    base: VisscherBolsterli
    sigma_up: float = Field(default=0.02, ge=0.0)
    sigma_move: float = Field(default=0.01, ge=0.0)
    collision_threshold: Optional[int] = Field(default=None, ge=1)
    sweeps: int = Field(default=200, ge=0)

    @model_validator(mode="before")
    @classmethod
    def inherit_size(cls, data):
        if isinstance(data, dict) and "base" in data:
            base = data["base"]
            base_n = base.n if isinstance(base, BaseModel) else base.get("n")
            base_d = base.dimension if isinstance(base, BaseModel) else base.get("dimension", 3)
            data = {**data, "n": base_n, "dimension": base_d}
        return data


GeneratorSpec = Annotated[
    Union[
        RSAInit,
        VoldBallistic,
        VisscherBolsterli,
        BennettCentral,
        JodreyTory,
        LubachevskyStillinger,
        ShakeRedeposit,
    ],
    Field(discriminator="algorithm"),
]


def default_lateral_extent(n: int, dimension: int) -> float:
    """Default lateral box edge, (4n)^(1/d) diameters."""
    return float((4 * n) ** (1.0 / dimension))


def spec_parameters(spec: BaseModel) -> dict:
    """Parameter record for provenance."""
    return spec.model_dump(mode="json")


