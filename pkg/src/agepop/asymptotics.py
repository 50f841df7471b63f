# agepop/asymptotics.py
"""
Rank-one spectral projection P_λ₀ onto the Malthusian eigenmode and the
long-time checks built on it: e^{−λ₀t}S(t) → P_λ₀, and P_λ₀ as the residue of
the resolvent at λ₀.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence

import numpy as np

from .constants.defaults import (
    CONVERGED_TOL,
    DENOMINATOR_FLOOR,
    MAX_WORKERS,
    NOISE_FLOOR,
    RESIDUE_DELTAS,
)
from .errors import (
    AsyncGrowthError,
    PreconditionError,
    ProjectionError,
    ResolventSingularError,
)
from .resolvent import convolution_part, resolvent_apply
from .semigroup import (
    check_density,
    density_norm,
    iter_semigroup,
    make_density,
    solve_birth,
    time_steps,
    weighted_norm,
)
from .serializers import (
    AsyncGrowthReport,
    MalthusianResult,
    ModelSpec,
    PopulationDensity,
    ProjectionCheckReport,
    ProjectionSample,
    Propagator,
    ResidueLimitPoint,
    ResidueLimitReport,
    SpectralReport,
)
from .services.logging_service import LoggingUtility
from .spectral import RenewalFamily, eigenprofile

logging_utility = LoggingUtility()


def h_lambda(
    m: ModelSpec, p: Propagator, lam: float, phi: PopulationDensity
) -> np.ndarray:
    """H_λφ = ∫ b(s) ∫_0^s Π_λ(s, σ)φ(σ) dσ ds."""
    check_density(m, phi)
    v = convolution_part(p, lam, phi.values)
    return np.einsum("k,kij,kj->i", m.grid.weights, m.birth.b, v)


class SpectralProjection:
    """P_λ₀φ = ⟨w*, H_λ₀φ⟩ / ⟨w*, Σ w_k a_k b_k e^{−λ₀a_k} P_k Φ₀⟩ · e^{−λ₀a}P(a)Φ₀."""

    def __init__(
        self,
        m: ModelSpec,
        p: Propagator,
        mal: MalthusianResult,
        family: Optional[RenewalFamily] = None,
        tol: float = 1e-8,
    ):
        if mal.residual > tol:
            raise PreconditionError(
                f"λ₀={mal.lambda0} has residual {mal.residual:.3g} above {tol:.3g}"
            )
        self.model = m
        self.propagator = p
        self.lambda0 = mal.lambda0
        family = family or RenewalFamily(m, p)

        report = family.report(mal.lambda0)
        if not report.gap > 0:
            raise PreconditionError(
                f"Perron root at λ₀ has no spectral gap (gap={report.gap:.3g})"
            )
        self.report: SpectralReport = report

        profile = eigenprofile(p, mal.lambda0, report.phi0, m.grid.nodes)
        profile.setflags(write=False)
        self.profile = profile

        denominator = float(report.wstar @ family.first_moment(mal.lambda0) @ report.phi0)
        if not np.isfinite(denominator) or denominator <= DENOMINATOR_FLOOR:
            logging_utility.error("Projection denominator %.3g at λ₀", denominator)
            raise ProjectionError(
                f"projection denominator {denominator:.3g} is below {DENOMINATOR_FLOOR:g}; "
                "Φ₀ and w* are inconsistent"
            )
        self.denominator = denominator
        logging_utility.info(
            "Spectral projection ready at λ₀=%.12g (denominator %.6g)",
            mal.lambda0,
            denominator,
        )

    def coefficient(self, phi: PopulationDensity) -> float:
        h = h_lambda(self.model, self.propagator, self.lambda0, phi)
        return float(self.report.wstar @ h) / self.denominator

    def apply(self, phi: PopulationDensity) -> PopulationDensity:
        return make_density(self.model.grid, self.coefficient(phi) * self.profile)

    def eigenfunction(self) -> PopulationDensity:
        return make_density(self.model.grid, self.profile)


def projection_apply(
    m: ModelSpec, p: Propagator, mal: MalthusianResult, phi: PopulationDensity
) -> PopulationDensity:
    return SpectralProjection(m, p, mal).apply(phi)


def _grid_times(m: ModelSpec, times: Sequence[float]) -> List[float]:
    da = m.grid.da
    return sorted({max(1, int(round(t / da))) * da for t in times})


def projection_properties_check(
    m: ModelSpec,
    p: Propagator,
    mal: MalthusianResult,
    samples: Sequence[PopulationDensity],
    tol: float = 1e-8,
    times: Sequence[float] = (0.5, 1.0, 2.0, 3.0),
    commutation_constant: float = 20.0,
    projection: Optional[SpectralProjection] = None,
    max_workers: Optional[int] = None,
) -> ProjectionCheckReport:
    """Idempotence, collinearity with the eigenmode and commutation with S(t)."""
    proj = projection or SpectralProjection(m, p, mal)
    grid = m.grid
    lam0 = mal.lambda0
    profile = proj.profile
    profile_sq = float(np.sum(profile * profile))
    check_times = _grid_times(m, times)
    horizon = check_times[-1]

    def check_one(phi: PopulationDensity) -> ProjectionSample:
        size = density_norm(phi) or 1.0
        Pphi = proj.apply(phi)
        idem = weighted_norm(grid, proj.apply(Pphi).values - Pphi.values) / size
        along = float(np.sum(Pphi.values * profile)) / profile_sq
        coll = weighted_norm(grid, Pphi.values - along * profile) / size

        B = solve_birth(m, p, phi, horizon)
        targets = {time_steps(t, grid.da) for t in check_times}
        worst = 0.0
        for mm, t, values in iter_semigroup(m, p, B, phi):
            if mm not in targets:
                continue
            moved = proj.apply(make_density(grid, values)).values
            gap = weighted_norm(grid, moved - np.exp(lam0 * t) * Pphi.values)
            worst = max(worst, gap / (np.exp(lam0 * t) * size))
        return ProjectionSample(idempotence=idem, collinearity=coll, commutation=worst)

    workers = max_workers or MAX_WORKERS
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(check_one, samples))

    max_idem = max((s.idempotence for s in results), default=0.0)
    max_coll = max((s.collinearity for s in results), default=0.0)
    max_comm = max((s.commutation for s in results), default=0.0)
    passed = (
        max_idem <= tol
        and max_coll <= tol
        and max_comm <= commutation_constant * grid.da
    )
    return ProjectionCheckReport(
        samples=results,
        max_idempotence=max_idem,
        max_collinearity=max_coll,
        max_commutation=max_comm,
        passed=passed,
    )


def async_growth_verify(
    m: ModelSpec,
    p: Propagator,
    mal: MalthusianResult,
    phi: PopulationDensity,
    T: float,
    projection: Optional[SpectralProjection] = None,
) -> AsyncGrowthReport:
    """Track e(t) = ‖e^{−λ₀t}S(t)φ − P_λ₀φ‖ and fit its decay rate."""
    check_density(m, phi)
    size = density_norm(phi)
    if size == 0:
        raise PreconditionError("asynchronous growth needs a nonzero initial density")
    proj = projection or SpectralProjection(m, p, mal)
    target = proj.apply(phi).values
    lam0 = mal.lambda0

    B = solve_birth(m, p, phi, T)
    times = np.asarray(B.times)
    errors = np.empty(B.steps + 1)
    for mm, t, values in iter_semigroup(m, p, B, phi):
        errors[mm] = weighted_norm(m.grid, np.exp(-lam0 * t) * values - target)

    def report(rate: Optional[float], cutoff: float, converged: bool) -> AsyncGrowthReport:
        return AsyncGrowthReport(
            lambda0=lam0,
            times=times,
            errors=errors,
            fitted_rate=rate,
            transient_cutoff=cutoff,
            converged=converged,
        )

    if np.max(errors) <= CONVERGED_TOL * size:
        # already on the eigenmode
        return report(None, 0.0, True)

    below = np.flatnonzero(errors < 0.5 * errors[0])
    if below.size == 0:
        failed = report(None, float(times[-1]), False)
        logging_utility.error("e(t) never fell below e(0)/2 on [0, %.6g]", T)
        raise AsyncGrowthError("no transient cutoff: e(t) never halved", report=failed)
    start = int(below[0])
    cutoff = float(times[start])

    floor = NOISE_FLOOR * max(size, 1.0)
    tail = np.flatnonzero(errors[start:] > floor) + start
    if tail.size < 2:
        return report(None, cutoff, True)
    fit = tail[tail.size // 2 :] if tail.size >= 4 else tail
    slope = float(np.polyfit(times[fit], np.log(errors[fit]), 1)[0])
    rate = -slope
    if rate <= 0:
        failed = report(rate, cutoff, False)
        logging_utility.error("No decay of e(t) beyond t=%.6g (rate %.3g)", cutoff, rate)
        raise AsyncGrowthError(
            f"fitted decay rate {rate:.3g} is not positive beyond t={cutoff:.6g}",
            report=failed,
        )
    logging_utility.info("e(t) decays at rate %.6g after t=%.6g", rate, cutoff)
    return report(rate, cutoff, True)


def residue_limit_check(
    m: ModelSpec,
    p: Propagator,
    mal: MalthusianResult,
    phi: PopulationDensity,
    deltas: Sequence[float] = RESIDUE_DELTAS,
    projection: Optional[SpectralProjection] = None,
) -> ResidueLimitReport:
    """Compare (λ − λ₀)·Π_λ(·,0)(1 − Q_λ)^{−1}H_λφ with P_λ₀φ as λ ↓ λ₀."""
    proj = projection or SpectralProjection(m, p, mal)
    family = RenewalFamily(m, p)
    target = proj.apply(phi).values
    scale = weighted_norm(m.grid, target)

    points: List[ResidueLimitPoint] = []
    skipped: List[float] = []
    for delta in sorted(deltas, reverse=True):
        try:
            res = resolvent_apply(m, p, mal.lambda0 + delta, phi, family=family)
        except ResolventSingularError as e:
            logging_utility.warning("Skipping δ=%g: %s", delta, e)
            skipped.append(delta)
            continue
        error = weighted_norm(m.grid, delta * res.w.values - target)
        points.append(
            ResidueLimitPoint(
                delta=delta,
                error=error,
                relative_error=error / scale if scale > 0 else error,
            )
        )

    decreasing = all(b.error < a.error for a, b in zip(points, points[1:]))
    fine = [pt for pt in points if pt.delta <= 1e-3]
    passed = bool(fine) and decreasing and min(pt.relative_error for pt in fine) <= 1e-2
    return ResidueLimitReport(
        points=points, skipped=skipped, decreasing=decreasing, passed=passed
    )


def empirical_growth_rate(
    m: ModelSpec, p: Propagator, phi: PopulationDensity, T: float
) -> float:
    """Least-squares slope of log‖S(t)φ‖ over the second half of [0, T]."""
    check_density(m, phi)
    B = solve_birth(m, p, phi, T)
    norms = np.empty(B.steps + 1)
    for mm, _, values in iter_semigroup(m, p, B, phi):
        norms[mm] = weighted_norm(m.grid, values)
    half = slice(B.steps // 2, B.steps + 1)
    usable = norms[half] > 0
    if np.count_nonzero(usable) < 2:
        raise PreconditionError("trajectory vanishes; no growth rate to fit")
    return float(
        np.polyfit(np.asarray(B.times)[half][usable], np.log(norms[half][usable]), 1)[0]
    )
