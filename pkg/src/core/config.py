"""Core configuration for the packing laboratory."""

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.models.generator import GeneratorSpec
from src.models.network import ContactRule, HardTolerance


class Environment(str, Enum):
    """Application environment."""

    DEVELOPMENT = "development"
    TEST = "test"
    PRODUCTION = "production"


class LogFormat(str, Enum):
    """Supported log renderers."""

    CONSOLE = "console"
    JSON = "json"


class Settings(BaseSettings):
    """Process-wide settings, overridable through PACKLAB_* variables."""

    model_config = SettingsConfigDict(
        env_prefix="PACKLAB_",
        env_file=".env",
        env_ignore_empty=True,
        case_sensitive=False,
    )

    # Application
    app_name: str = Field(default="packing-lab")
    app_version: str = Field(default="0.1.0")
    environment: Environment = Field(default=Environment.DEVELOPMENT)
    debug: bool = Field(default=False)
    log_level: str = Field(default="INFO")
    log_format: LogFormat = Field(default=LogFormat.CONSOLE)

    # Execution
    workers: int = Field(default=1, ge=1)
    output_dir: Path = Field(default=Path("runs"))

    # Geometry tolerances (diameters)
    contact_tolerance: float = Field(default=1e-6, ge=0.0)
    overlap_tolerance: float = Field(default=1e-9, ge=0.0)
    ghost_margin: float = Field(default=3.0, gt=0.0)
    hull_scale: float = Field(default=10.0, gt=1.0)

    # Statistics
    n_permutations: int = Field(default=999, ge=1)
    default_shell_width: float = Field(default=0.02, gt=0.0)

    @field_validator("log_level", mode="before")
    @classmethod
    def normalize_log_level(cls, v):
        """Accept log levels in any case."""
        if isinstance(v, str):
            return v.strip().upper()
        return v

    @property
    def is_production(self) -> bool:
        """Check if running in production."""
        return self.environment == Environment.PRODUCTION


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


# Global settings instance
settings = get_settings()


class FitConfig(BaseModel):
    """Minimum-contrast block of a run configuration."""

    model_config = ConfigDict(extra="forbid")

    parameter: str = Field(..., min_length=1)
    grid: List[float] = Field(..., min_length=2)
    replications: int = Field(default=5, ge=5)
    descriptor: str = Field(default="g_curve")
    held_out: Optional[List[str]] = None


class RunConfig(BaseModel):
    """A reproducible run: generator, ensemble size, seed and panel."""

    model_config = ConfigDict(extra="forbid")

    generator: GeneratorSpec
    ensemble_size: int = Field(default=20, ge=2)
    seed: int = Field(default=0, ge=0, lt=2**64)
    descriptors: Optional[List[str]] = None
    output_dir: Path = Field(default_factory=lambda: settings.output_dir)
    workers: int = Field(default_factory=lambda: settings.workers, ge=1)
    contact_rule: ContactRule = Field(
        default_factory=lambda: HardTolerance(epsilon=settings.contact_tolerance)
    )
    fit: Optional[FitConfig] = None


def load_run_config(path: Path, overrides: Optional[dict] = None) -> RunConfig:
    """Load a TOML run configuration; explicit overrides win over the file."""
    with open(path, "rb") as handle:
        data = tomllib.load(handle)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return RunConfig.model_validate(data)
