# agepop/model.py
"""
Finite-dimensional model data: age grid, generator family A(a) = A0(a) + μ(a),
birth kernel b(a), plus the presets used throughout the package (scalar Lotka
model, 1-D diffusion with Dirichlet/Neumann boundary).
"""

from __future__ import annotations

import math
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .constants.defaults import TAIL_TOL
from .errors import ModelValidationError
from .serializers import (
    AgeGrid,
    BirthKernel,
    GeneratorFamily,
    ModelSpec,
    ValidationReport,
    trapezoid_weights,
)
from .services.logging_service import LoggingUtility

logging_utility = LoggingUtility()


# --------------------------------------------------------------------------- #
#  Input schemas
# --------------------------------------------------------------------------- #
class RateProfile(BaseModel):
    """Piecewise-linear rate given as (age, value) pairs.

    Values between breakpoints are linearly interpolated, values outside the
    breakpoint range are held constant.
    """

    model_config = ConfigDict(frozen=True)

    points: Tuple[Tuple[float, float], ...]

    @field_validator("points", mode="before")
    @classmethod
    def _coerce(cls, v):
        if isinstance(v, (int, float)):
            return ((0.0, float(v)),)
        pts = tuple((float(a), float(x)) for a, x in v)
        if not pts:
            raise ValueError("a rate profile needs at least one (age, value) pair")
        ages = [a for a, _ in pts]
        if any(b <= a for a, b in zip(ages, ages[1:])):
            raise ValueError("rate profile ages must be strictly increasing")
        return pts

    @classmethod
    def constant(cls, value: float) -> "RateProfile":
        return cls(points=((0.0, float(value)),))

    def at(self, ages: np.ndarray) -> np.ndarray:
        xs = np.array([a for a, _ in self.points])
        ys = np.array([x for _, x in self.points])
        return np.interp(np.asarray(ages, dtype=float), xs, ys)


class SpatialSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    L: float = 1.0
    n: int = 1
    D: float = 0.0
    boundary: Literal["dirichlet", "neumann"] = "dirichlet"


class AgeGridSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    a_max: Optional[float] = None
    K: int = Field(200, ge=1)
    infinite: bool = False
    decay_margin: Optional[float] = None
    tail_tol: float = TAIL_TOL

    def build(self) -> AgeGrid:
        a_max = self.a_max
        if self.infinite:
            if self.decay_margin is None or self.decay_margin <= 0:
                raise ModelValidationError(
                    "an infinite maximal age needs a positive decay_margin"
                )
            cut = truncation_age(self.decay_margin, self.tail_tol)
            if a_max is None or a_max < cut:
                if a_max is not None:
                    logging_utility.warning(
                        "a_max=%s too short for tail_tol=%s; truncating at %s",
                        a_max,
                        self.tail_tol,
                        cut,
                    )
                a_max = cut
        if a_max is None:
            raise ModelValidationError("a_max is required for a finite maximal age")
        try:
            return AgeGrid(a_max=a_max, K=self.K)
        except ValidationError as e:
            raise ModelValidationError(f"Invalid age grid: {e}") from e


RateLike = Union[RateProfile, float, Sequence[Tuple[float, float]]]


def as_profile(rate: RateLike) -> RateProfile:
    if isinstance(rate, RateProfile):
        return rate
    try:
        return RateProfile(points=rate)
    except ValidationError as e:
        raise ModelValidationError(f"Invalid rate profile: {e}") from e


# --------------------------------------------------------------------------- #
#  Helpers
# --------------------------------------------------------------------------- #
def truncation_age(decay_margin: float, tail_tol: float = TAIL_TOL) -> float:
    """Age where e^{−ϖ̂·a} drops to ``tail_tol``."""
    if decay_margin <= 0:
        raise ModelValidationError(f"decay_margin must be positive, got {decay_margin}")
    return -math.log(tail_tol) / decay_margin



def system_condition(M: np.ndarray) -> float:
    """max(1, σ_max)/σ_min of a square system matrix.

    Unlike the plain condition number this still grows for 1×1 systems as the
    entry approaches zero.
    """
    sigma = np.linalg.svd(np.atleast_2d(M), compute_uv=False)
    if not np.all(np.isfinite(sigma)) or sigma[-1] == 0.0:
        return float("inf")
    return float(max(1.0, sigma[0]) / sigma[-1])


def laplacian_1d(n: int, L: float, boundary: str) -> Tuple[np.ndarray, float]:
    """−Δ_h on ``n`` unknowns; returns (matrix, h).

    Dirichlet uses interior nodes with h = L/(n+1); Neumann uses cell centres
    with h = L/n and the mirrored corner rows (diagonal 1/h²).
    """
    if boundary == "dirichlet":
        h = L / (n + 1)
    elif boundary == "neumann":
        h = L / n
    else:
        raise ModelValidationError(f"unknown boundary '{boundary}'")

    main = np.full(n, 2.0)
    if boundary == "neumann":
        main[0] = main[-1] = 1.0
        if n == 1:
            main[0] = 0.0
    off = -np.ones(max(n - 1, 0))
    if n == 1:
        lap = np.diag(main)
    else:
        lap = sparse.diags([off, main, off], [-1, 0, 1]).toarray()
    return lap / h**2, h


def _reject_negative(name: str, ages: np.ndarray, values: np.ndarray) -> None:
    bad = np.flatnonzero(values < 0)
    if bad.size:
        k = int(bad[0])
        raise ModelValidationError(
            f"{name} rate is negative at node {k} (a={ages[k]:.6g}): {values[k]:.6g}"
        )


# --------------------------------------------------------------------------- #
#  Builders
# --------------------------------------------------------------------------- #
def build_model(
    A0_nodes: np.ndarray,
    b_nodes: np.ndarray,
    grid: AgeGrid,
    mu_nodes: Optional[np.ndarray] = None,
    *,
    infinite_age: bool = False,
    decay_margin: Optional[float] = None,
    tail_tol: float = TAIL_TOL,
) -> ModelSpec:
    """Assemble a ModelSpec from raw node arrays."""
    A0 = np.asarray(A0_nodes, dtype=float)
    if A0.ndim == 2:
        A0 = np.broadcast_to(A0, (grid.K + 1,) + A0.shape)
    b = np.asarray(b_nodes, dtype=float)
    if b.ndim == 2:
        b = np.broadcast_to(b, (grid.K + 1,) + b.shape)
    mu = np.zeros(grid.K + 1) if mu_nodes is None else np.asarray(mu_nodes, float)
    try:
        n = A0.shape[-1]
        gen = GeneratorFamily(A=A0 + mu[:, None, None] * np.eye(n), A0=A0, mu=mu)
        return ModelSpec(
            grid=grid,
            gen=gen,
            birth=BirthKernel(b=b),
            infinite_age=infinite_age,
            decay_margin=decay_margin,
            tail_tol=tail_tol,
        )
    except ValueError as e:
        raise ModelValidationError(f"Invalid model data: {e}") from e


def build_diffusion_model(
    spatial: SpatialSpec,
    mortality: RateLike,
    birth: RateLike,
    grid: AgeGridSpec,
) -> ModelSpec:
    """A0 = −D·Δ_h, A(a_k) = A0 + μ(a_k)·I, b(a_k) = β(a_k)·I."""
    if spatial.L <= 0:
        raise ModelValidationError(f"interval length L must be positive, got {spatial.L}")
    if spatial.n < 1:
        raise ModelValidationError(f"need at least one spatial point, got {spatial.n}")
    if spatial.D < 0:
        raise ModelValidationError(f"diffusivity D must be nonnegative, got {spatial.D}")

    age_grid = grid.build()
    ages = age_grid.nodes
    mu = as_profile(mortality).at(ages)
    beta = as_profile(birth).at(ages)
    _reject_negative("mortality", ages, mu)
    _reject_negative("birth", ages, beta)

    lap, h = laplacian_1d(spatial.n, spatial.L, spatial.boundary)
    A0 = spatial.D * lap
    b = beta[:, None, None] * np.eye(spatial.n)

    logging_utility.info(
        "Built diffusion model: n=%d, h=%.4g, D=%.4g, boundary=%s, a_max=%.4g, K=%d",
        spatial.n,
        h,
        spatial.D,
        spatial.boundary,
        age_grid.a_max,
        age_grid.K,
    )
    return build_model(
        A0,
        b,
        age_grid,
        mu,
        infinite_age=grid.infinite,
        decay_margin=grid.decay_margin,
        tail_tol=grid.tail_tol,
    )


def scalar_lotka_model(
    mu: RateLike = 0.0, beta: RateLike = 1.0, a_max: float = 1.0, K: int = 200
) -> ModelSpec:
    """Diffusion-free scalar model (n = 1, D = 0)."""
    return build_diffusion_model(
        SpatialSpec(n=1, D=0.0),
        mu,
        beta,
        AgeGridSpec(a_max=a_max, K=K),
    )


def diffusion_preset(
    n: int = 20,
    D: float = 1.0,
    L: float = 1.0,
    boundary: str = "dirichlet",
    mu: RateLike = 0.0,
    beta: RateLike = 15.0,
    a_max: float = 1.0,
    K: int = 200,
) -> ModelSpec:
    return build_diffusion_model(
        SpatialSpec(n=n, D=D, L=L, boundary=boundary),
        mu,
        beta,
        AgeGridSpec(a_max=a_max, K=K),
    )


def random_valid_model(
    rng: np.random.Generator, n: int = 3, K: int = 40, a_max: float = 1.0
) -> ModelSpec:
    """Random model with Metzler-compatible A(a) and an entrywise positive b(a)."""
    grid = AgeGrid(a_max=a_max, K=K)
    ages = grid.nodes
    coupling = rng.uniform(0.0, 1.0, size=(n, n))
    np.fill_diagonal(coupling, 0.0)
    modulation = 1.0 + 0.5 * np.sin(2.0 * np.pi * ages / a_max)

    off = -modulation[:, None, None] * coupling
    diag = -off.sum(axis=2) + rng.uniform(0.0, 1.0, size=n)
    A0 = off.copy()
    idx = np.arange(n)
    A0[:, idx, idx] = diag

    mu = rng.uniform(0.0, 0.5) + 0.3 * ages / a_max
    shape = 4.0 * (ages / a_max) * (1.0 - ages / a_max) + 0.05
    B = rng.uniform(0.1, 1.0, size=(n, n))
    b = rng.uniform(0.5, 3.0) * shape[:, None, None] * B
    return build_model(A0, b, grid, mu)


def scale_birth(m: ModelSpec, factor: float) -> ModelSpec:
    """Same model with birth kernel factor·b."""
    if factor < 0:
        raise ModelValidationError(f"birth scaling must be nonnegative, got {factor}")
    return m.model_copy(update={"birth": BirthKernel(b=factor * m.birth.b)})


# --------------------------------------------------------------------------- #
#  Checks
# --------------------------------------------------------------------------- #
def irreducibility_check(M: np.ndarray) -> bool:
    """True iff the graph with edge i→j when M[j, i] > 0 is strongly connected.

    A 1×1 matrix counts as irreducible only when its entry is positive.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ModelValidationError(f"expected a square matrix, got shape {M.shape}")
    if np.any(M < 0):
        i, j = np.argwhere(M < 0)[0]
        raise ModelValidationError(
            f"irreducibility needs a nonnegative matrix; entry ({i}, {j}) is {M[i, j]:.6g}"
        )
    if M.shape[0] == 1:
        return bool(M[0, 0] > 0)
    adjacency = sparse.csr_matrix((M.T > 0).astype(float))
    n_components, _ = connected_components(
        adjacency, directed=True, connection="strong"
    )
    return n_components == 1


def validate_model(m: ModelSpec) -> ValidationReport:
    """Exact finite checks of the sign structure and irreducibility assumptions."""
    from .evolution import build_propagator  # local import, avoids a cycle

    messages: List[str] = []
    n = m.n
    off_mask = ~np.eye(n, dtype=bool)
    off = m.gen.A[:, off_mask]
    metzler_ok = bool(np.all(off <= 0))
    if not metzler_ok:
        k = int(np.argwhere(off > 0)[0][0])
        messages.append(
            f"A has a positive off-diagonal entry at node {k} (a={m.grid.nodes[k]:.6g})"
        )

    birth_nonneg_ok = bool(np.all(m.birth.b >= 0))
    if not birth_nonneg_ok:
        k = int(np.argwhere(m.birth.b < 0)[0][0])
        messages.append(
            f"b has a negative entry at node {k} (a={m.grid.nodes[k]:.6g})"
        )

    irreducible_ok = False
    if metzler_ok and birth_nonneg_ok:
        prop = build_propagator(m, substeps=1)
        w = m.grid.weights
        kernel = np.einsum("k,kij,kjl->il", w, m.birth.b, prop.prefix)
        irreducible_ok = irreducibility_check(np.clip(kernel, 0.0, None))
        if not irreducible_ok:
            messages.append("Σ Δa·b(a_k)·Π(a_k, 0) is reducible")
    else:
        messages.append("irreducibility not checked: sign conditions fail")

    return ValidationReport(
        metzler_ok=metzler_ok,
        birth_nonneg_ok=birth_nonneg_ok,
        irreducible_ok=irreducible_ok,
        messages=messages,
    )
