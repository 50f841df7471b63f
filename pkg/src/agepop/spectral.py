# agepop/spectral.py
"""
Renewal operator Q_λ = ∫ b(a) e^{−λa} Π(a, 0) da, its Perron data, the
Malthusian parameter λ₀ with r(Q_λ₀) = 1, and the stability verdict.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .constants.defaults import (
    BRACKET_EXPANSIONS,
    EPS_BAND,
    LAMBDA0_TOL,
    MAX_WORKERS,
    PERRON_MAX_ITER,
    PERRON_TOL,
    SIMPLICITY_GAP,
)
from .errors import (
    AdmissibilityError,
    ModelValidationError,
    MonotonicityViolation,
    NoMalthusianParameterError,
    PerronConvergenceError,
    PreconditionError,
)
from .semigroup import make_density, total_population
from .serializers import (
    CurvePoint,
    EigenfunctionResult,
    MalthusianResult,
    ModelSpec,
    PopulationDensity,
    Propagator,
    SpectralReport,
    StabilityResult,
    StabilityVerdict,
)
from .services.logging_service import LoggingUtility

logging_utility = LoggingUtility()

_GAP_ITERATIONS = 500


# --------------------------------------------------------------------------- #
#  Q_λ
# --------------------------------------------------------------------------- #
class RenewalFamily:
    """The λ-family Q_λ with the products b_k·P_k computed once."""

    def __init__(self, m: ModelSpec, p: Propagator):
        if p.K != m.K or p.n != m.n:
            raise ModelValidationError("propagator does not belong to this model")
        self.model = m
        self.propagator = p
        self._kernel = np.matmul(m.birth.b, p.prefix)
        self._weights = m.grid.weights
        self._ages = m.grid.nodes
        logging_utility.info("Renewal family ready: K=%d, n=%d", m.K, m.n)

    @property
    def kernel(self) -> np.ndarray:
        """b_k·P_k for k = 0..K."""
        return self._kernel

    def check_admissible(self, lam: float) -> None:
        m = self.model
        if m.infinite_age and lam <= -m.decay_margin:
            raise AdmissibilityError(
                f"λ={lam} is at or below the decay margin −{m.decay_margin} "
                "of an infinite maximal age"
            )

    def at(self, lam: float) -> np.ndarray:
        self.check_admissible(lam)
        with np.errstate(over="ignore", invalid="ignore"):
            coeff = self._weights * np.exp(-lam * self._ages)
            return np.einsum("k,kij->ij", coeff, self._kernel)

    def first_moment(self, lam: float) -> np.ndarray:
        """Σ_k w_k·a_k·e^{−λa_k}·b_k·P_k."""
        self.check_admissible(lam)
        coeff = self._weights * self._ages * np.exp(-lam * self._ages)
        return np.einsum("k,kij->ij", coeff, self._kernel)

    def radius(self, lam: float) -> float:
        return spectral_radius(self.at(lam))

    def report(self, lam: float, tol: float = PERRON_TOL) -> SpectralReport:
        return perron_root(self.at(lam), tol=tol, lam=lam)


def renewal_operator(m: ModelSpec, p: Propagator, lam: float) -> np.ndarray:
    """Q_λ = Σ_k w_k·e^{−λa_k}·b_k·P_k."""
    return RenewalFamily(m, p).at(lam)


# --------------------------------------------------------------------------- #
#  Perron data
# --------------------------------------------------------------------------- #
def _start_vector(n: int) -> np.ndarray:
    # strictly positive and non-uniform, so symmetric cancellations are unlikely
    x = 1.0 + np.arange(n) / n
    return x / x.sum()


def _power_iteration(
    M: np.ndarray, tol: float, max_iter: int
) -> Tuple[np.ndarray, float, int]:
    x = _start_vector(M.shape[0])
    trail: List[np.ndarray] = [x]
    for it in range(1, max_iter + 1):
        y = M @ x
        r = float(y.sum())
        if r <= 0.0 or not np.isfinite(r):
            raise PerronConvergenceError(
                f"power iteration collapsed at step {it} (r={r}); the matrix is nilpotent on the cone"
            )
        x_new = y / r
        if np.abs(x_new - x).sum() <= tol:
            if np.abs(M @ x_new - r * x_new).sum() <= tol * max(1.0, r) * 10:
                return x_new, r, it
        x = x_new
        trail = (trail + [x])[-3:]

    x0, x1, x2 = trail
    step = np.abs(x1 - x0).sum()
    diagnostic = float(np.abs(x2 - x0).sum() / step) if step > 0 else float("nan")
    logging_utility.error(
        "Power iteration did not converge in %d steps (oscillation ratio %.3g)",
        max_iter,
        diagnostic,
    )
    raise PerronConvergenceError(
        f"power iteration did not converge in {max_iter} steps; oscillation ratio "
        f"{diagnostic:.3g} (near 0 means period-2 or reducible structure)",
        diagnostic=diagnostic,
    )


def _second_modulus(Q: np.ndarray, r: float, phi0: np.ndarray, wstar: np.ndarray) -> float:
    """Largest modulus of the spectrum of Q with r removed (2-D subspace iteration)."""
    deflated = Q - r * np.outer(phi0, wstar)
    n = Q.shape[0]
    V, _ = np.linalg.qr(np.stack([_start_vector(n), np.cos(np.arange(n) + 0.5)], axis=1))
    floor = np.finfo(float).eps * max(r, 1.0)
    estimate = np.inf
    for _ in range(_GAP_ITERATIONS):
        W = deflated @ V
        if np.linalg.norm(W) <= floor:
            return 0.0
        V, _ = np.linalg.qr(W)
        ritz = np.linalg.eigvals(V.T @ deflated @ V)
        current = float(np.max(np.abs(ritz)))
        if abs(current - estimate) <= 1e-14 * max(r, 1.0):
            return current
        estimate = current
    return estimate


def perron_root(
    Q: np.ndarray,
    tol: float = PERRON_TOL,
    max_iter: Optional[int] = None,
    lam: float = 0.0,
) -> SpectralReport:
    """Perron root and vectors of a nonnegative matrix by power iteration."""
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ModelValidationError(f"Q must be square, got shape {Q.shape}")
    if not np.all(np.isfinite(Q)) or Q.min() < 0:
        raise ModelValidationError("Q must be finite and entrywise nonnegative")
    if not np.any(Q > 0):
        raise ModelValidationError("Q is the zero matrix; it has no Perron vector")
    n = Q.shape[0]
    cap = max_iter or PERRON_MAX_ITER

    if n == 1:
        r = float(Q[0, 0])
        one = np.ones(1)
        return SpectralReport(
            lam=lam, Q=Q, r=r, phi0=one, wstar=one, gap=r, iterations=0, simple=True
        )

    phi0, r, iterations = _power_iteration(Q, tol, cap)
    wstar, _, dual_iterations = _power_iteration(Q.T, tol, cap)
    wstar = wstar / float(wstar @ phi0)
    gap = r - _second_modulus(Q, r, phi0, wstar)
    logging_utility.debug(
        "Perron root r=%.12g after %d/%d iterations, gap=%.3g",
        r,
        iterations,
        dual_iterations,
        gap,
    )
    return SpectralReport(
        lam=lam,
        Q=Q,
        r=r,
        phi0=phi0,
        wstar=wstar,
        gap=gap,
        iterations=iterations,
        simple=bool(gap > SIMPLICITY_GAP * r),
    )


def spectral_radius(Q: np.ndarray) -> float:
    """r(Q), with r(0) = 0."""
    Q = np.asarray(Q, dtype=float)
    if Q.size and not np.any(Q > 0):
        return 0.0
    return perron_root(Q).r


# --------------------------------------------------------------------------- #
#  λ scans
# --------------------------------------------------------------------------- #
def spectral_radius_curve(
    m: ModelSpec,
    p: Propagator,
    lambdas: Sequence[float],
    family: Optional[RenewalFamily] = None,
    max_workers: Optional[int] = None,
) -> List[CurvePoint]:
    lams = [float(x) for x in lambdas]
    if any(b < a for a, b in zip(lams, lams[1:])):
        raise ModelValidationError("λ list must be sorted ascending")
    family = family or RenewalFamily(m, p)
    for lam in lams:
        family.check_admissible(lam)

    workers = max_workers or MAX_WORKERS
    with ThreadPoolExecutor(max_workers=workers) as pool:
        radii = list(pool.map(family.radius, lams))

    curve = [CurvePoint(lam=lam, r=r) for lam, r in zip(lams, radii)]
    for prev, cur in zip(curve, curve[1:]):
        if cur.lam > prev.lam and not cur.r < prev.r:
            logging_utility.error(
                "r(Q_λ) not decreasing: r(%.6g)=%.12g, r(%.6g)=%.12g",
                prev.lam,
                prev.r,
                cur.lam,
                cur.r,
            )
            raise MonotonicityViolation(
                f"r(Q_λ) failed to decrease between λ={prev.lam} and λ={cur.lam}",
                pair=((prev.lam, prev.r), (cur.lam, cur.r)),
            )
    return curve


def _expansion_points(m: ModelSpec, upward: bool):
    for j in range(BRACKET_EXPANSIONS):
        step = 2.0**j
        if upward:
            yield step
        elif m.infinite_age:
            point = max(-step, -m.decay_margin * (1.0 - 2.0 ** -(j + 1)))
            # 1 − 2^{−j} rounds to 1 once j passes the mantissa width
            if point <= -m.decay_margin:
                return
            yield point
        else:
            yield -step


def find_lambda0(
    m: ModelSpec,
    p: Propagator,
    tol: float = LAMBDA0_TOL,
    family: Optional[RenewalFamily] = None,
) -> MalthusianResult:
    """Bisection on g(λ) = r(Q_λ) − 1 after geometric bracket expansion from 0."""
    family = family or RenewalFamily(m, p)
    evaluations = 0

    def g(lam: float) -> float:
        nonlocal evaluations
        evaluations += 1
        Q = family.at(lam)
        if not np.all(np.isfinite(Q)):
            return np.nan
        return spectral_radius(Q) - 1.0

    upward = g(0.0) >= 0
    lo = hi = searched = 0.0
    found = False
    for point in _expansion_points(m, upward):
        value = g(point)
        searched = point
        if np.isnan(value):
            break
        if upward and value < 0:
            hi, found = point, True
            break
        if not upward and value > 0:
            lo, found = point, True
            break
    if not found:
        span = (0.0, searched) if upward else (searched, 0.0)
        logging_utility.warning("No sign change of r(Q_λ) − 1 on %s", span)
        raise NoMalthusianParameterError(
            f"no λ with r(Q_λ) = 1 in the admissible range searched {span}",
            searched=span,
        )

    while True:
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if abs(gm) <= tol or hi - lo <= 1e-14 * max(1.0, abs(mid)):
            break
        if gm > 0:
            lo = mid
        else:
            hi = mid

    if abs(gm) > tol:
        logging_utility.warning(
            "Bracket collapsed with |r − 1| = %.3g above tol %.3g", abs(gm), tol
        )
    logging_utility.info("λ₀ = %.12g after %d evaluations", mid, evaluations)
    return MalthusianResult(
        lambda0=mid, residual=abs(gm), bracket=(lo, hi), evaluations=evaluations
    )


# --------------------------------------------------------------------------- #
#  Verdicts and eigenfunctions
# --------------------------------------------------------------------------- #
def classify_stability(
    m: ModelSpec,
    p: Propagator,
    eps_band: float = EPS_BAND,
    family: Optional[RenewalFamily] = None,
) -> StabilityResult:
    family = family or RenewalFamily(m, p)
    r0 = family.radius(0.0)
    if r0 < 1.0 - eps_band:
        verdict = StabilityVerdict.STABLE
    elif r0 > 1.0 + eps_band:
        verdict = StabilityVerdict.ASYNCHRONOUS_GROWTH
    else:
        verdict = StabilityVerdict.CRITICAL
    return StabilityResult(verdict=verdict, r_q0=r0)


def birth_scaling_for_zero_growth(m: ModelSpec, p: Propagator) -> float:
    """Factor c such that birth kernel c·b gives λ₀ = 0."""
    r0 = spectral_radius(renewal_operator(m, p, 0.0))
    if r0 <= 0:
        raise PreconditionError("r(Q_0) = 0; no birth scaling reaches criticality")
    return 1.0 / r0


def eigenprofile(p: Propagator, lam: float, phi0: np.ndarray, ages: np.ndarray) -> np.ndarray:
    """e^{−λa_k}·P_k·Φ₀ for every node."""
    return np.exp(-lam * ages)[:, None] * np.einsum("kij,j->ki", p.prefix, phi0)


def generator_eigenfunction(
    m: ModelSpec, p: Propagator, lam: float, tol: float = 1e-8
) -> EigenfunctionResult:
    report = RenewalFamily(m, p).report(lam)
    if abs(report.r - 1.0) > tol:
        raise PreconditionError(
            f"1 is not an eigenvalue of Q_λ at λ={lam}: r(Q_λ) = {report.r:.12g}"
        )
    values = eigenprofile(p, lam, report.phi0, m.grid.nodes)

    birth = np.einsum("k,kij,kj->i", m.grid.weights, m.birth.b, values)
    bc = float(np.linalg.norm(values[0] - birth))
    diff = (values[1:] - values[:-1]) / m.grid.da
    drift = lam * values[1:] + np.einsum("kij,kj->ki", m.gen.A[1:], values[1:])
    pde = float(np.max(np.linalg.norm(diff + drift, axis=1)))

    return EigenfunctionResult(
        density=make_density(m.grid, values), bc_residual=bc, pde_residual=pde
    )


def stable_age_density(
    m: ModelSpec, p: Propagator, mal: MalthusianResult
) -> PopulationDensity:
    """Eigenfunction at λ₀ scaled to unit total population."""
    eig = generator_eigenfunction(m, p, mal.lambda0, tol=max(1e-8, 10 * mal.residual))
    total = total_population(eig.density)
    return make_density(m.grid, eig.density.values / total)
