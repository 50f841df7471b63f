# agepop/serializers.py
"""
Shared pydantic schemas.

Domain objects (grids, generator families, propagators, densities) carry numpy
arrays; they are validated and frozen on construction and serialize to nested
lists in ``model_dump(mode="json")``.
"""

from __future__ import annotations

import threading
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PlainSerializer,
    PrivateAttr,
    field_validator,
    model_validator,
)
from typing_extensions import Annotated


def _as_list(arr: np.ndarray) -> list:
    return np.asarray(arr).tolist()


Array = Annotated[
    np.ndarray, PlainSerializer(_as_list, return_type=list, when_used="json")
]


def frozen_array(value: Any, dtype=float) -> np.ndarray:
    """Copy ``value`` into a read-only array."""
    arr = np.array(value, dtype=dtype)
    arr.setflags(write=False)
    return arr


class _ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


# --------------------------------------------------------------------------- #
#  Model definition
# --------------------------------------------------------------------------- #
def trapezoid_weights(count: int, da: float) -> np.ndarray:
    """Composite trapezoid weights on ``count`` equally spaced nodes."""
    if count <= 1:
        return np.zeros(max(count, 0))
    w = np.full(count, da)
    w[0] = w[-1] = 0.5 * da
    return w


class AgeGrid(_ArrayModel):
    a_max: float
    K: int

    @model_validator(mode="after")
    def _check(self) -> "AgeGrid":
        if not np.isfinite(self.a_max) or self.a_max <= 0:
            raise ValueError(f"a_max must be finite and positive, got {self.a_max}")
        if self.K < 1:
            raise ValueError(f"K must be at least 1, got {self.K}")
        return self

    @property
    def da(self) -> float:
        return self.a_max / self.K

    @property
    def nodes(self) -> np.ndarray:
        # linspace pins the last node to a_max exactly
        return np.linspace(0.0, self.a_max, self.K + 1)

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.K + 1, self.da)


class GeneratorFamily(_ArrayModel):
    """Node values A_k = A0_k + mu_k·I of the age-dependent generator."""

    A: Array
    A0: Array
    mu: Array

    @field_validator("A", "A0", "mu", mode="before")
    @classmethod
    def _freeze(cls, v):
        return frozen_array(v)

    @model_validator(mode="after")
    def _check(self) -> "GeneratorFamily":
        if self.A.ndim != 3 or self.A.shape[1] != self.A.shape[2]:
            raise ValueError(f"A must have shape (K+1, n, n), got {self.A.shape}")
        if self.A0.shape != self.A.shape or self.mu.shape != self.A.shape[:1]:
            raise ValueError("A0, mu and A disagree in shape")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.mu))):
            raise ValueError("generator entries must be finite")
        eye = np.eye(self.n)
        recon = self.A0 + self.mu[:, None, None] * eye
        if not np.allclose(recon, self.A, rtol=1e-12, atol=1e-12):
            raise ValueError("A must equal A0 + mu·I at every node")
        return self

    @property
    def n(self) -> int:
        return int(self.A.shape[1])

    @property
    def node_count(self) -> int:
        return int(self.A.shape[0])


class BirthKernel(_ArrayModel):
    b: Array

    @field_validator("b", mode="before")
    @classmethod
    def _freeze(cls, v):
        return frozen_array(v)

    @model_validator(mode="after")
    def _check(self) -> "BirthKernel":
        if self.b.ndim != 3 or self.b.shape[1] != self.b.shape[2]:
            raise ValueError(f"b must have shape (K+1, n, n), got {self.b.shape}")
        if not np.all(np.isfinite(self.b)):
            raise ValueError("birth kernel entries must be finite")
        return self

    @property
    def n(self) -> int:
        return int(self.b.shape[1])


class ModelSpec(_ArrayModel):
    grid: AgeGrid
    gen: GeneratorFamily
    birth: BirthKernel
    infinite_age: bool = False
    decay_margin: Optional[float] = None
    tail_tol: float = 1e-10

    @model_validator(mode="after")
    def _check(self) -> "ModelSpec":
        nodes = self.grid.K + 1
        if self.gen.node_count != nodes or self.birth.b.shape[0] != nodes:
            raise ValueError(
                f"generator/birth kernel must have {nodes} age nodes, got "
                f"{self.gen.node_count}/{self.birth.b.shape[0]}"
            )
        if self.gen.n != self.birth.n:
            raise ValueError(
                f"state dimensions disagree: A is {self.gen.n}, b is {self.birth.n}"
            )
        if self.infinite_age and (self.decay_margin is None or self.decay_margin <= 0):
            raise ValueError("an infinite maximal age needs decay_margin > 0")
        return self

    @property
    def n(self) -> int:
        return self.gen.n

    @property
    def K(self) -> int:
        return self.grid.K


class ValidationReport(BaseModel):
    metzler_ok: bool
    birth_nonneg_ok: bool
    irreducible_ok: bool
    messages: List[str] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.metzler_ok and self.birth_nonneg_ok and self.irreducible_ok


# --------------------------------------------------------------------------- #
#  Evolution
# --------------------------------------------------------------------------- #
class Propagator(_ArrayModel):
    """Step operators S_k ≈ Π(a_{k+1}, a_k) and prefixes P_k = Π(a_k, 0)."""

    steps: Array
    prefix: Array
    dt: float

    _block_cache: Dict[Tuple[int, int], np.ndarray] = PrivateAttr(default_factory=dict)
    _lock: Any = PrivateAttr(default_factory=threading.Lock)

    @field_validator("steps", "prefix", mode="before")
    @classmethod
    def _freeze(cls, v):
        return frozen_array(v)

    @model_validator(mode="after")
    def _check(self) -> "Propagator":
        if self.prefix.shape[0] != self.steps.shape[0] + 1:
            raise ValueError("prefix must hold one more matrix than steps")
        return self

    @property
    def K(self) -> int:
        return int(self.steps.shape[0])

    @property
    def n(self) -> int:
        return int(self.prefix.shape[1])


class DecayEstimate(BaseModel):
    M_hat: float
    varpi_hat: float


# --------------------------------------------------------------------------- #
#  Semigroup
# --------------------------------------------------------------------------- #
class PopulationDensity(_ArrayModel):
    """Age-indexed family of state vectors, ``values[k]`` = φ(a_k)."""

    values: Array
    grid: AgeGrid

    @field_validator("values", mode="before")
    @classmethod
    def _freeze(cls, v):
        arr = np.array(v, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _check(self) -> "PopulationDensity":
        if self.values.ndim != 2 or self.values.shape[0] != self.grid.K + 1:
            raise ValueError(
                f"density needs {self.grid.K + 1} age nodes, got shape {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("density entries must be finite")
        return self

    @property
    def n(self) -> int:
        return int(self.values.shape[1])


class BirthTrajectory(_ArrayModel):
    times: Array
    values: Array
    dt: float

    @field_validator("times", "values", mode="before")
    @classmethod
    def _freeze(cls, v):
        return frozen_array(v)

    @property
    def steps(self) -> int:
        return int(self.times.shape[0]) - 1


class GrowthEnvelope(BaseModel):
    envelope: float
    envelope_doubled: float
    zeta_hat: float
    varpi_hat: float
    horizon: float
    bounded: bool


# --------------------------------------------------------------------------- #
#  Spectral
# --------------------------------------------------------------------------- #
class SpectralReport(_ArrayModel):
    lam: float = Field(serialization_alias="lambda")
    Q: Array
    r: float
    phi0: Array
    wstar: Array
    gap: float
    iterations: int
    simple: bool


class MalthusianResult(BaseModel):
    lambda0: float
    residual: float
    bracket: Tuple[float, float]
    evaluations: int


class StabilityVerdict(str, Enum):
    STABLE = "Stable"
    CRITICAL = "Critical"
    ASYNCHRONOUS_GROWTH = "AsynchronousGrowth"


class StabilityResult(BaseModel):
    verdict: StabilityVerdict
    r_q0: float


class CurvePoint(BaseModel):
    lam: float = Field(serialization_alias="lambda")
    r: float


class EigenfunctionResult(_ArrayModel):
    density: PopulationDensity
    bc_residual: float
    pde_residual: float


# --------------------------------------------------------------------------- #
#  Resolvent
# --------------------------------------------------------------------------- #
class ResolventResult(_ArrayModel):
    psi: PopulationDensity
    v: PopulationDensity
    w: PopulationDensity
    condition: float


class DomainResiduals(BaseModel):
    pde_residual: float
    bc_residual: float


# --------------------------------------------------------------------------- #
#  Asymptotics
# --------------------------------------------------------------------------- #
class ProjectionSample(BaseModel):
    idempotence: float
    collinearity: float
    commutation: float


class ProjectionCheckReport(BaseModel):
    samples: List[ProjectionSample]
    max_idempotence: float
    max_collinearity: float
    max_commutation: float
    passed: bool


class AsyncGrowthReport(_ArrayModel):
    lambda0: float
    times: Array
    errors: Array
    fitted_rate: Optional[float] = None
    transient_cutoff: float
    converged: bool


class ResidueLimitPoint(BaseModel):
    delta: float
    error: float
    relative_error: float


class ResidueLimitReport(BaseModel):
    points: List[ResidueLimitPoint]
    skipped: List[float] = Field(default_factory=list)
    decreasing: bool
    passed: bool


# --------------------------------------------------------------------------- #
#  Verification battery
# --------------------------------------------------------------------------- #
class CheckOutcome(BaseModel):
    name: str
    passed: bool
    detail: Dict[str, Any] = Field(default_factory=dict)


# --------------------------------------------------------------------------- #
#  Oracle
# --------------------------------------------------------------------------- #
class OracleMatrix(_ArrayModel):
    """Method-of-lines generator on (u_1, …, u_K) with u_0 = slave·(u_1, …, u_K)."""

    G: Any
    slave: Array
    grid: AgeGrid
    n: int

    @field_validator("slave", mode="before")
    @classmethod
    def _freeze(cls, v):
        return frozen_array(v)

    @property
    def size(self) -> int:
        return int(self.G.shape[0])
