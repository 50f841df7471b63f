# agepop/config.py
"""
TOML model configs.

    [age]       a_max, K, infinite, decay_margin
    [space]     n, L, D, boundary
    [rates]     mu, beta          (number or list of [age, value] pairs)
    [initial]   profile           (number or list of [age, value] pairs)
    [numerics]  substeps, tol, tail_tol, eps_band
"""

from __future__ import annotations

import sys
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .constants.defaults import DEFAULT_SUBSTEPS, EPS_BAND, LAMBDA0_TOL, TAIL_TOL
from .errors import ConfigError
from .model import AgeGridSpec, SpatialSpec, as_profile, build_diffusion_model
from .semigroup import density_from_profile
from .serializers import ModelSpec, PopulationDensity
from .services.logging_service import LoggingUtility

logging_utility = LoggingUtility()

RateValue = Union[float, List[Tuple[float, float]]]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class AgeSection(_Section):
    a_max: Optional[float] = Field(None, gt=0)
    K: int = Field(200, ge=1)
    infinite: bool = False
    decay_margin: Optional[float] = Field(None, gt=0)


class SpaceSection(_Section):
    n: int = Field(1, ge=1)
    L: float = Field(1.0, gt=0)
    D: float = Field(0.0, ge=0)
    boundary: Literal["dirichlet", "neumann"] = "dirichlet"


class RatesSection(_Section):
    mu: RateValue = 0.0
    beta: RateValue = 1.0


class InitialSection(_Section):
    profile: RateValue = 1.0


class NumericsSection(_Section):
    substeps: int = Field(DEFAULT_SUBSTEPS, ge=1)
    tol: float = Field(LAMBDA0_TOL, gt=0)
    tail_tol: float = Field(TAIL_TOL, gt=0, lt=1)
    eps_band: float = Field(EPS_BAND, ge=0)


class ModelConfig(_Section):
    age: AgeSection = Field(default_factory=AgeSection)
    space: SpaceSection = Field(default_factory=SpaceSection)
    rates: RatesSection = Field(default_factory=RatesSection)
    initial: InitialSection = Field(default_factory=InitialSection)
    numerics: NumericsSection = Field(default_factory=NumericsSection)

    def build_model(self) -> ModelSpec:
        grid = AgeGridSpec(
            a_max=self.age.a_max,
            K=self.age.K,
            infinite=self.age.infinite,
            decay_margin=self.age.decay_margin,
            tail_tol=self.numerics.tail_tol,
        )
        spatial = SpatialSpec(
            L=self.space.L, n=self.space.n, D=self.space.D, boundary=self.space.boundary
        )
        return build_diffusion_model(spatial, self.rates.mu, self.rates.beta, grid)

    def initial_density(self, m: ModelSpec) -> PopulationDensity:
        return density_from_profile(m.grid, m.n, as_profile(self.initial.profile).at)


def _field_name(error: ValidationError) -> str:
    first = error.errors()[0]
    return ".".join(str(part) for part in first["loc"])


def parse_config(data: dict) -> ModelConfig:
    try:
        return ModelConfig.model_validate(data)
    except ValidationError as e:
        field = _field_name(e)
        raise ConfigError(
            f"invalid config field '{field}': {e.errors()[0]['msg']}", field=field
        ) from e


def load_config(path: Union[str, Path]) -> ModelConfig:
    """Read and validate a TOML model config."""
    source = Path(path)
    try:
        with source.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {source}", field="config") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"malformed TOML in {source}: {e}", field="config") from e

    config = parse_config(data)
    logging_utility.debug("Loaded config %s", source)
    return config
