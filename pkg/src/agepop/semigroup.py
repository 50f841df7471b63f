# agepop/semigroup.py
"""
Renewal (Volterra) equation for the birth function and the semigroup S(t) built
from it by the characteristics formula.

The time step equals the age step, so characteristics a − t land on grid nodes
and no interpolation is ever needed.
"""

from __future__ import annotations

from typing import Iterator, Tuple

import numpy as np

from .constants.defaults import CONDITION_LIMIT
from .errors import ModelValidationError
from .evolution import advance_characteristics, decay_estimate
from .model import system_condition, trapezoid_weights
from .serializers import (
    AgeGrid,
    BirthTrajectory,
    GrowthEnvelope,
    ModelSpec,
    PopulationDensity,
    Propagator,
)
from .services.logging_service import LoggingUtility

logging_utility = LoggingUtility()


# --------------------------------------------------------------------------- #
#  Densities
# --------------------------------------------------------------------------- #
def make_density(grid: AgeGrid, values: np.ndarray) -> PopulationDensity:
    try:
        return PopulationDensity(values=values, grid=grid)
    except ValueError as e:
        raise ModelValidationError(f"Invalid population density: {e}") from e


def constant_density(grid: AgeGrid, n: int, value: float = 1.0) -> PopulationDensity:
    return make_density(grid, np.full((grid.K + 1, n), float(value)))


def density_from_profile(grid: AgeGrid, n: int, profile) -> PopulationDensity:
    """profile(a)·(1, …, 1) for a callable or array ``profile``."""
    ages = grid.nodes
    g = profile(ages) if callable(profile) else np.asarray(profile, dtype=float)
    return make_density(grid, np.outer(np.broadcast_to(g, ages.shape), np.ones(n)))


def weighted_norm(grid: AgeGrid, values: np.ndarray, p: float = 2.0) -> float:
    """Discrete L_p norm of node values with trapezoid weights in age."""
    if np.isinf(p):
        return float(np.max(np.abs(values))) if values.size else 0.0
    pointwise = np.sum(np.abs(values) ** p, axis=1)
    return float(np.dot(grid.weights, pointwise) ** (1.0 / p))


def density_norm(phi: PopulationDensity, p: float = 2.0) -> float:
    return weighted_norm(phi.grid, phi.values, p)


def total_population(phi: PopulationDensity) -> float:
    return float(np.dot(phi.grid.weights, phi.values.sum(axis=1)))


def check_density(m: ModelSpec, phi: PopulationDensity) -> None:
    if phi.grid != m.grid:
        raise ModelValidationError("density and model live on different age grids")
    if phi.n != m.n:
        raise ModelValidationError(
            f"density has state dimension {phi.n}, model has {m.n}"
        )


def time_steps(T: float, dt: float) -> int:
    """Number of age steps in ``T``; rejects horizons off the grid."""
    if T < 0:
        raise ModelValidationError(f"time must be nonnegative, got {T}")
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * max(1.0, abs(T)):
        raise ModelValidationError(
            f"time {T} is not a multiple of the age step {dt}"
        )
    return steps


# --------------------------------------------------------------------------- #
#  Volterra equation
# --------------------------------------------------------------------------- #
def solve_birth(
    m: ModelSpec, p: Propagator, phi: PopulationDensity, T: float
) -> BirthTrajectory:
    """Trapezoid-discretized renewal equation solved by forward substitution."""
    check_density(m, phi)
    da = m.grid.da
    steps = time_steps(T, da)
    K, n = m.K, m.n
    b = m.birth.b
    G = np.matmul(b, p.prefix)

    B = np.zeros((steps + 1, n))
    B[0] = np.einsum("k,kij,kj->i", m.grid.weights, b, phi.values)

    implicit = np.eye(n) - 0.5 * da * G[0]
    condition = system_condition(implicit)
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        raise ModelValidationError(
            f"implicit renewal diagonal is singular (cond={condition:.3g}); refine the age grid"
        )
    # I − Δa/2·G₀ is an M-matrix only while ρ(Δa/2·G₀) < 1
    radius = float(np.max(np.abs(np.linalg.eigvals(0.5 * da * G[0]))))
    if radius >= 1.0:
        raise ModelValidationError(
            f"implicit renewal step too coarse: spectral radius of Δa/2·b(0) is "
            f"{radius:.3g} >= 1; refine the age grid"
        )
    inverse = np.linalg.inv(implicit)
    scale = float(np.abs(inverse).max())
    if inverse.min() < -1e-12 * scale:
        raise ModelValidationError(
            f"implicit renewal inverse has negative entries ({inverse.min():.3g}); "
            "refine the age grid"
        )
    # round-off only
    inverse = np.clip(inverse, 0.0, None)

    X = phi.values
    for mm in range(1, steps + 1):
        if mm <= K:
            X = advance_characteristics(p, X, mm)
            initial = np.einsum(
                "k,kij,kj->i", trapezoid_weights(K - mm + 1, da), b[mm:], X
            )
            c = trapezoid_weights(mm + 1, da)
        else:
            initial = np.zeros(n)
            c = m.grid.weights
        jmax = min(mm, K)
        history = np.einsum(
            "j,jab,jb->a",
            c[1 : jmax + 1],
            G[1 : jmax + 1],
            B[mm - jmax : mm][::-1],
        )
        B[mm] = inverse @ (history + initial)

    logging_utility.debug("Birth trajectory solved: %d steps, n=%d", steps, n)
    return BirthTrajectory(times=np.arange(steps + 1) * da, values=B, dt=da)


# --------------------------------------------------------------------------- #
#  Semigroup
# --------------------------------------------------------------------------- #
def iter_semigroup(
    m: ModelSpec, p: Propagator, B: BirthTrajectory, phi: PopulationDensity
) -> Iterator[Tuple[int, float, np.ndarray]]:
    """Yield (m, t_m, values of S(t_m)φ) for every node of ``B``'s time grid."""
    check_density(m, phi)
    if not np.isclose(B.dt, m.grid.da, rtol=1e-12, atol=0.0):
        raise ModelValidationError(
            f"birth trajectory step {B.dt} does not match age step {m.grid.da}"
        )
    K = m.K
    X = phi.values
    for mm in range(B.steps + 1):
        values = np.empty((K + 1, m.n))
        if 0 < mm <= K:
            X = advance_characteristics(p, X, mm)
        if mm <= K:
            values[mm:] = X
        born = np.arange(min(mm, K + 1))
        if born.size:
            values[born] = np.einsum(
                "kij,kj->ki", p.prefix[born], B.values[mm - born]
            )
        yield mm, mm * B.dt, values


def apply_semigroup(
    m: ModelSpec,
    p: Propagator,
    B: BirthTrajectory,
    phi: PopulationDensity,
    t: float,
) -> PopulationDensity:
    """S(t)φ by the characteristics formula."""
    target = time_steps(t, m.grid.da)
    if target > B.steps:
        raise ModelValidationError(
            f"t={t} lies beyond the birth trajectory horizon {B.times[-1]}"
        )
    for mm, _, values in iter_semigroup(m, p, B, phi):
        if mm == target:
            return make_density(m.grid, values)
    raise AssertionError("unreachable")


def birth_consistency(
    m: ModelSpec,
    p: Propagator,
    B: BirthTrajectory,
    phi: PopulationDensity,
    t: float,
) -> float:
    """‖B(t) − Σ w_k b_k [S(t)φ](a_k)‖.

    At the characteristic node a = t the integrand may jump; that node takes
    the mean of its one-sided values (the left value alone at a = a_max).
    """
    mm = time_steps(t, m.grid.da)
    values = np.array(apply_semigroup(m, p, B, phi, t).values)
    if 0 < mm <= m.K:
        left = p.prefix[mm] @ B.values[0]
        values[mm] = left if mm == m.K else 0.5 * (values[mm] + left)
    integral = np.einsum("k,kij,kj->i", m.grid.weights, m.birth.b, values)
    return float(np.linalg.norm(B.values[mm] - integral))


def growth_envelope_check(
    m: ModelSpec, p: Propagator, phi: PopulationDensity, T: float
) -> GrowthEnvelope:
    """sup_m ‖B_m‖·e^{(ϖ̂−ζ̂)t_m} over [0, T] and over [0, 2T]."""
    decay = decay_estimate(p)
    b_norm = float(np.max(np.linalg.norm(m.birth.b, ord=2, axis=(1, 2))))
    zeta = decay.M_hat * b_norm

    steps = time_steps(T, m.grid.da)
    B = solve_birth(m, p, phi, 2 * steps * m.grid.da)
    weighted = np.linalg.norm(B.values, axis=1) * np.exp(
        (decay.varpi_hat - zeta) * B.times
    )
    envelope = float(np.max(weighted[: steps + 1]))
    doubled = float(np.max(weighted))
    bounded = bool(doubled <= envelope * (1.0 + 1e-9) + 1e-300)
    if not bounded:
        logging_utility.warning(
            "Growth envelope grew under horizon doubling: %.6g -> %.6g", envelope, doubled
        )
    return GrowthEnvelope(
        envelope=envelope,
        envelope_doubled=doubled,
        zeta_hat=zeta,
        varpi_hat=decay.varpi_hat,
        horizon=steps * m.grid.da,
        bounded=bounded,
    )
