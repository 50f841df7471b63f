from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from ..asymptotics import async_growth_verify, projection_properties_check, residue_limit_check
from ..constants.defaults import ORACLE_DENSE_CAP
from ..errors import (
    AgePopError,
    AsyncGrowthError,
    NoMalthusianParameterError,
    NumericalError,
)
from ..oracle import assemble_oracle, oracle_evolve, rightmost_eigenvalue
from ..resolvent import domain_check, laplace_oracle, resolvent_apply
from ..semigroup import (
    birth_consistency,
    iter_semigroup,
    make_density,
    solve_birth,
    weighted_norm,
)
from ..serializers import CheckOutcome, MalthusianResult, PopulationDensity, StabilityVerdict
from ..services.logging_service import LoggingUtility
from ..spectral import (
    generator_eigenfunction,
    spectral_radius_curve,
    stable_age_density,
)
from ..toolkit import AgePopulation

logging_utility = LoggingUtility()

# Oracle agreement and eigenvalue tolerances in units of Δa.
ORACLE_CONSTANT = 50.0
POSITIVITY_FLOOR = -1e-12


class VerificationBattery:
    """Cross-validation checks for one model and one initial density."""

    def __init__(
        self,
        app: AgePopulation,
        phi: PopulationDensity,
        *,
        seed: int = 0,
        horizon: float = 5.0,
        samples: int = 3,
        on_pass: Optional[Callable[[CheckOutcome], None]] = None,
        on_fail: Optional[Callable[[CheckOutcome], None]] = None,
    ):
        self.app = app
        self.phi = phi
        self.seed = seed
        self.samples = samples
        da = app.model.grid.da
        self.horizon = max(1, int(round(horizon / da))) * da

        # --- Default handlers ---
        def default_pass(outcome: CheckOutcome):
            logging_utility.info(f"[VERIFY PASS] {outcome.name}")

        def default_fail(outcome: CheckOutcome):
            logging_utility.warning(f"[VERIFY FAIL] {outcome.name}: {outcome.detail}")

        self.on_pass = on_pass or default_pass
        self.on_fail = on_fail or default_fail

        self.checks: List[Tuple[str, Callable[[], CheckOutcome]]] = [
            ("model_validation", self.check_validation),
            ("birth_consistency", self.check_birth_consistency),
            ("positivity", self.check_positivity),
            ("monotone_radius", self.check_monotone_radius),
            ("eigenfunction", self.check_eigenfunction),
            ("resolvent", self.check_resolvent),
            ("projection", self.check_projection),
            ("async_growth", self.check_async_growth),
            ("residue_limit", self.check_residue_limit),
            ("oracle", self.check_oracle),
        ]

    # ------------------------------------------------------------------ #
    #  helpers
    # ------------------------------------------------------------------ #
    @property
    def model(self):
        return self.app.model

    @property
    def propagator(self):
        return self.app.propagator

    def _grid_times(self, times) -> List[float]:
        da = self.model.grid.da
        steps = {max(1, int(round(t / da))) for t in times}
        return [s * da for s in sorted(steps) if s * da <= self.horizon + 1e-12]

    def _malthusian(self) -> Optional[MalthusianResult]:
        try:
            return self.app.malthusian
        except NoMalthusianParameterError:
            return None

    def _random_densities(self, count: int, offset: int) -> List[PopulationDensity]:
        rng = np.random.default_rng(self.seed + offset)
        shape = (self.model.K + 1, self.model.n)
        return [make_density(self.model.grid, rng.uniform(0.0, 1.0, shape)) for _ in range(count)]

    def _growth_rate(self) -> float:
        mal = self._malthusian()
        if mal is not None:
            return mal.lambda0
        return 0.0

    # ------------------------------------------------------------------ #
    #  checks
    # ------------------------------------------------------------------ #
    def check_validation(self) -> CheckOutcome:
        report = self.app.validate()
        return CheckOutcome(
            name="model_validation", passed=report.ok, detail={"messages": report.messages}
        )

    def check_birth_consistency(self) -> CheckOutcome:
        B = solve_birth(self.model, self.propagator, self.phi, self.horizon)
        worst = 0.0
        for t in self._grid_times((0.5, 1.0, 2.0, self.horizon)):
            m = int(round(t / self.model.grid.da))
            residual = birth_consistency(self.model, self.propagator, B, self.phi, t)
            worst = max(worst, residual / max(float(np.linalg.norm(B.values[m])), 1e-300))
        return CheckOutcome(
            name="birth_consistency", passed=worst <= 1e-8, detail={"relative_residual": worst}
        )

    def check_positivity(self) -> CheckOutcome:
        worst_birth = np.inf
        worst_density = np.inf
        for phi in self._random_densities(self.samples, offset=1):
            B = solve_birth(self.model, self.propagator, phi, self.horizon)
            worst_birth = min(worst_birth, float(B.values.min()))
            for _, _, values in iter_semigroup(self.model, self.propagator, B, phi):
                worst_density = min(worst_density, float(values.min()))
        return CheckOutcome(
            name="positivity",
            passed=worst_birth >= 0.0 and worst_density >= POSITIVITY_FLOOR,
            detail={"min_birth": worst_birth, "min_density": worst_density},
        )

    def check_monotone_radius(self) -> CheckOutcome:
        center = self._growth_rate()
        lams = np.linspace(center - 1.0, center + 4.0, 10)
        if self.model.infinite_age:
            lams = lams[lams > -self.model.decay_margin]
        curve = spectral_radius_curve(
            self.model, self.propagator, lams, family=self.app.renewal
        )
        return CheckOutcome(
            name="monotone_radius",
            passed=True,
            detail={"lambda": [pt.lam for pt in curve], "r": [pt.r for pt in curve]},
        )

    def check_eigenfunction(self) -> CheckOutcome:
        mal = self._malthusian()
        if mal is None:
            return CheckOutcome(name="eigenfunction", passed=True, detail={"skipped": "no λ₀"})
        eig = generator_eigenfunction(self.model, self.propagator, mal.lambda0)
        values = eig.density.values
        shift = mal.lambda0 * np.eye(self.model.n)
        generator = max(np.linalg.norm(A + shift, 2) for A in self.model.gen.A)
        pde_bound = self.model.grid.da * max(generator, 1.0) ** 2 * float(np.abs(values).max())
        bc_bound = 1e-6 * float(np.abs(values).max())
        return CheckOutcome(
            name="eigenfunction",
            passed=eig.bc_residual <= bc_bound and eig.pde_residual <= pde_bound,
            detail={"bc_residual": eig.bc_residual, "pde_residual": eig.pde_residual},
        )

    def check_resolvent(self) -> CheckOutcome:
        growth = self._growth_rate()
        lam = growth + 2.0
        res = resolvent_apply(self.model, self.propagator, lam, self.phi, family=self.app.renewal)
        residuals = domain_check(self.model, self.propagator, lam, self.phi, res.psi)
        T = max(10.0, self.horizon)
        T = int(round(T / self.model.grid.da)) * self.model.grid.da
        laplace = laplace_oracle(
            self.model, self.propagator, lam, self.phi, T, growth_rate=growth
        )
        size = weighted_norm(self.model.grid, res.psi.values)
        relative = weighted_norm(self.model.grid, laplace.values - res.psi.values) / size
        passed = relative <= 1e-3 and residuals.bc_residual <= 1e-8 * max(
            float(np.abs(res.psi.values).max()), 1.0
        )
        return CheckOutcome(
            name="resolvent",
            passed=passed,
            detail={
                "lambda": lam,
                "laplace_relative_error": relative,
                "pde_residual": residuals.pde_residual,
                "bc_residual": residuals.bc_residual,
                "condition": res.condition,
            },
        )

    def check_projection(self) -> CheckOutcome:
        mal = self._malthusian()
        if mal is None:
            return CheckOutcome(name="projection", passed=True, detail={"skipped": "no λ₀"})
        report = projection_properties_check(
            self.model,
            self.propagator,
            mal,
            self._random_densities(self.samples, offset=2),
            projection=self.app.projection,
            max_workers=1,
        )
        return CheckOutcome(
            name="projection",
            passed=report.passed,
            detail={
                "max_idempotence": report.max_idempotence,
                "max_collinearity": report.max_collinearity,
                "max_commutation": report.max_commutation,
            },
        )

    def check_async_growth(self) -> CheckOutcome:
        mal = self._malthusian()
        verdict = self.app.classify().verdict
        if mal is None or verdict == StabilityVerdict.STABLE:
            return CheckOutcome(
                name="async_growth", passed=True, detail={"skipped": verdict.value}
            )
        try:
            report = async_growth_verify(
                self.model,
                self.propagator,
                mal,
                self.phi,
                self.horizon,
                projection=self.app.projection,
            )
        except AsyncGrowthError as e:
            report = e.report
        return CheckOutcome(
            name="async_growth",
            passed=report.converged,
            detail={
                "fitted_rate": report.fitted_rate,
                "transient_cutoff": report.transient_cutoff,
                "final_error": float(report.errors[-1]),
            },
        )

    def check_residue_limit(self) -> CheckOutcome:
        mal = self._malthusian()
        if mal is None:
            return CheckOutcome(name="residue_limit", passed=True, detail={"skipped": "no λ₀"})
        report = residue_limit_check(
            self.model, self.propagator, mal, self.phi, projection=self.app.projection
        )
        return CheckOutcome(
            name="residue_limit",
            passed=report.passed,
            detail={
                "delta": [pt.delta for pt in report.points],
                "relative_error": [pt.relative_error for pt in report.points],
                "skipped": report.skipped,
            },
        )

    def _oracle_density(self) -> PopulationDensity:
        # upwind smears the jump of an incompatible density along a = t
        mal = self._malthusian()
        if mal is None:
            return self.phi
        try:
            return stable_age_density(self.model, self.propagator, mal)
        except AgePopError:
            return self.phi

    def check_oracle(self) -> CheckOutcome:
        da = self.model.grid.da
        oracle = assemble_oracle(self.model)
        phi = self._oracle_density()
        B = solve_birth(self.model, self.propagator, phi, self.horizon)
        targets = {int(round(t / da)): t for t in self._grid_times((0.5, 1.0, 2.0))}
        errors: Dict[str, float] = {}
        for m, t, values in iter_semigroup(self.model, self.propagator, B, phi):
            if m in targets:
                reference = oracle_evolve(oracle, phi, t).values
                size = weighted_norm(self.model.grid, values) or 1.0
                errors[format(t, ".6g")] = weighted_norm(self.model.grid, reference - values) / size
        passed = all(e <= ORACLE_CONSTANT * da for e in errors.values())
        detail: Dict[str, object] = {"relative_error": errors}

        mal = self._malthusian()
        if mal is not None and oracle.size <= ORACLE_DENSE_CAP:
            rightmost = rightmost_eigenvalue(oracle)
            detail["rightmost_eigenvalue"] = rightmost
            passed = passed and abs(rightmost - mal.lambda0) <= ORACLE_CONSTANT * da * max(
                1.0, abs(mal.lambda0)
            )
        return CheckOutcome(name="oracle", passed=passed, detail=detail)

    # ------------------------------------------------------------------ #
    #  runner
    # ------------------------------------------------------------------ #
    def _run_one(self, entry: Tuple[str, Callable[[], CheckOutcome]]) -> CheckOutcome:
        name, check = entry
        try:
            outcome = check()
        except AgePopError as e:
            kind = "numerical" if isinstance(e, NumericalError) else "validation"
            outcome = CheckOutcome(
                name=name, passed=False, detail={"error": str(e), "kind": kind}
            )
        (self.on_pass if outcome.passed else self.on_fail)(outcome)
        return outcome

    def run(self, max_workers: Optional[int] = None) -> List[CheckOutcome]:
        # build the shared lazy state once, before the checks fan out
        _ = self.app.renewal
        if self._malthusian() is not None:
            try:
                _ = self.app.projection
            except AgePopError as e:
                logging_utility.warning(f"Projection unavailable: {e}")
        workers = max_workers or self.app.max_workers
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(self._run_one, self.checks))
