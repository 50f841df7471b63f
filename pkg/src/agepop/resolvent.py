# agepop/resolvent.py
"""
Resolvent (λ + 𝔸)^{−1} by its closed formula, split as ψ = v + w:

    v(a) = ∫_0^a Π_λ(a, σ) φ(σ) dσ
    w(a) = Π_λ(a, 0) (1 − Q_λ)^{−1} ∫ b(s) v(s) ds

and two independent checks: the domain residuals and the Laplace transform of
the simulated trajectory.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .constants.defaults import CONDITION_LIMIT
from .errors import (
    LaplaceDivergenceError,
    NoMalthusianParameterError,
    ResolventSingularError,
)
from .evolution import decay_estimate
from .model import system_condition, trapezoid_weights
from .semigroup import (
    check_density,
    iter_semigroup,
    make_density,
    solve_birth,
    time_steps,
)
from .serializers import (
    DomainResiduals,
    ModelSpec,
    PopulationDensity,
    Propagator,
    ResolventResult,
)
from .services.logging_service import LoggingUtility
from .spectral import RenewalFamily, find_lambda0

logging_utility = LoggingUtility()


def convolution_part(p: Propagator, lam: float, values: np.ndarray) -> np.ndarray:
    """v(a_k) = ∫_0^{a_k} Π_λ(a_k, σ)φ(σ)dσ by the trapezoid rule on [0, a_k].

    Marches v_{k+1} = e^{−λΔa}S_k v_k + Δa/2·(e^{−λΔa}S_kφ_k + φ_{k+1}) from v_0 = 0.
    """
    da = p.dt
    decay = np.exp(-lam * da)
    v = np.zeros_like(values, dtype=float)
    for k in range(p.K):
        carried = decay * (p.steps[k] @ (v[k] + 0.5 * da * values[k]))
        v[k + 1] = carried + 0.5 * da * values[k + 1]
    return v


def _birth_integral(m: ModelSpec, values: np.ndarray) -> np.ndarray:
    return np.einsum("k,kij,kj->i", m.grid.weights, m.birth.b, values)


def resolvent_apply(
    m: ModelSpec,
    p: Propagator,
    lam: float,
    phi: PopulationDensity,
    family: Optional[RenewalFamily] = None,
) -> ResolventResult:
    check_density(m, phi)
    family = family or RenewalFamily(m, p)
    family.check_admissible(lam)

    v = convolution_part(p, lam, phi.values)
    system = np.eye(m.n) - family.at(lam)
    condition = system_condition(system)
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        logging_utility.error(
            "1 − Q_λ singular at λ=%.12g (cond=%.3g)", lam, condition
        )
        raise ResolventSingularError(
            f"λ={lam} is numerically an eigenvalue of −𝔸: cond(1 − Q_λ) = {condition:.3g}",
            condition=condition,
        )
    c = lu_solve(lu_factor(system), _birth_integral(m, v))
    w = np.exp(-lam * m.grid.nodes)[:, None] * np.einsum("kij,j->ki", p.prefix, c)

    logging_utility.debug("Resolvent at λ=%.6g: cond(1 − Q_λ)=%.3g", lam, condition)
    return ResolventResult(
        psi=make_density(m.grid, v + w),
        v=make_density(m.grid, v),
        w=make_density(m.grid, w),
        condition=condition,
    )


def domain_check(
    m: ModelSpec,
    p: Propagator,
    lam: float,
    phi: PopulationDensity,
    psi: PopulationDensity,
) -> DomainResiduals:
    """Backward-difference residual of (λ + 𝔸)ψ = φ and of the renewal condition."""
    check_density(m, phi)
    check_density(m, psi)
    values = psi.values
    diff = (values[1:] - values[:-1]) / m.grid.da
    drift = lam * values[1:] + np.einsum("kij,kj->ki", m.gen.A[1:], values[1:])
    pde = float(np.max(np.linalg.norm(diff + drift - phi.values[1:], axis=1)))
    bc = float(np.linalg.norm(values[0] - _birth_integral(m, values)))
    return DomainResiduals(pde_residual=pde, bc_residual=bc)


def trajectory_growth_rate(
    m: ModelSpec, p: Propagator, family: Optional[RenewalFamily] = None
) -> float:
    """λ₀ when it exists, otherwise the fitted decay rate −ϖ̂ of Π."""
    try:
        return find_lambda0(m, p, family=family).lambda0
    except NoMalthusianParameterError:
        return -decay_estimate(p).varpi_hat


def laplace_oracle(
    m: ModelSpec,
    p: Propagator,
    lam: float,
    phi: PopulationDensity,
    T: float,
    quad_tol: float = 1e-8,
    growth_rate: Optional[float] = None,
) -> PopulationDensity:
    """ψ̂ = ∫_0^T e^{−λt} S(t)φ dt, trapezoid in t.

    At t = a_k the integrand may jump along the characteristic through the
    origin; that node takes the mean of the one-sided values.
    """
    check_density(m, phi)
    growth = trajectory_growth_rate(m, p) if growth_rate is None else growth_rate
    if lam <= growth:
        raise LaplaceDivergenceError(
            f"Laplace integral diverges: λ={lam} does not exceed the growth rate {growth:.6g}"
        )

    da = m.grid.da
    steps = time_steps(T, da)
    B = solve_birth(m, p, phi, T)
    tw = trapezoid_weights(steps + 1, da)
    acc = np.zeros((m.K + 1, m.n))
    last = acc
    for mm, t, values in iter_semigroup(m, p, B, phi):
        if 0 < mm <= m.K:
            values[mm] = 0.5 * (values[mm] + p.prefix[mm] @ B.values[0])
        acc += tw[mm] * np.exp(-lam * t) * values
        last = values

    tail = float(np.exp(-lam * steps * da) * np.max(np.abs(last)))
    if tail > quad_tol:
        logging_utility.warning(
            "Laplace tail e^{−λT}‖S(T)φ‖ = %.3g exceeds quad_tol %.3g; lengthen T",
            tail,
            quad_tol,
        )
    return make_density(m.grid, acc)
