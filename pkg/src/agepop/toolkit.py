from typing import List, Optional, Sequence, Tuple

from dotenv import load_dotenv

from .asymptotics import SpectralProjection
from .constants.defaults import DEFAULT_SUBSTEPS, EPS_BAND, LAMBDA0_TOL, MAX_WORKERS
from .evolution import build_propagator
from .model import validate_model
from .resolvent import domain_check, resolvent_apply
from .semigroup import apply_semigroup, solve_birth
from .serializers import (
    BirthTrajectory,
    CurvePoint,
    DomainResiduals,
    MalthusianResult,
    ModelSpec,
    PopulationDensity,
    Propagator,
    ResolventResult,
    StabilityResult,
    ValidationReport,
)
from .services.logging_service import LoggingUtility
from .spectral import (
    RenewalFamily,
    classify_stability,
    find_lambda0,
    spectral_radius_curve,
)

# Load environment variables from .env file.
load_dotenv()

logging_utility = LoggingUtility()


class AgePopulation:
    """One model with its propagator, renewal family and projection built on demand."""

    def __init__(
        self,
        model: ModelSpec,
        substeps: int = DEFAULT_SUBSTEPS,
        max_workers: Optional[int] = None,
        tol: float = LAMBDA0_TOL,
    ):
        self.model = model
        self.substeps = substeps
        self.max_workers = max_workers or MAX_WORKERS
        self.tol = tol

        logging_utility.info(
            "AgePopulation initialized: n=%d, K=%d, substeps=%d",
            model.n,
            model.K,
            substeps,
        )

        # Lazy initialization caches.
        self._propagator: Optional[Propagator] = None
        self._renewal: Optional[RenewalFamily] = None
        self._malthusian: Optional[MalthusianResult] = None
        self._projection: Optional[SpectralProjection] = None

    @property
    def propagator(self) -> Propagator:
        if self._propagator is None:
            self._propagator = build_propagator(
                self.model, substeps=self.substeps, max_workers=self.max_workers
            )
        return self._propagator

    @property
    def renewal(self) -> RenewalFamily:
        if self._renewal is None:
            self._renewal = RenewalFamily(self.model, self.propagator)
        return self._renewal

    @property
    def malthusian(self) -> MalthusianResult:
        if self._malthusian is None:
            self._malthusian = find_lambda0(
                self.model, self.propagator, tol=self.tol, family=self.renewal
            )
        return self._malthusian

    @property
    def projection(self) -> SpectralProjection:
        if self._projection is None:
            self._projection = SpectralProjection(
                self.model,
                self.propagator,
                self.malthusian,
                family=self.renewal,
                tol=max(1e-8, self.tol),
            )
        return self._projection

    def validate(self) -> ValidationReport:
        return validate_model(self.model)

    def birth(self, phi: PopulationDensity, T: float) -> BirthTrajectory:
        return solve_birth(self.model, self.propagator, phi, T)

    def evolve(self, phi: PopulationDensity, t: float) -> PopulationDensity:
        B = self.birth(phi, t)
        return apply_semigroup(self.model, self.propagator, B, phi, t)

    def classify(self, eps_band: float = EPS_BAND) -> StabilityResult:
        return classify_stability(
            self.model, self.propagator, eps_band=eps_band, family=self.renewal
        )

    def spectrum(self, lambdas: Sequence[float]) -> List[CurvePoint]:
        return spectral_radius_curve(
            self.model,
            self.propagator,
            lambdas,
            family=self.renewal,
            max_workers=self.max_workers,
        )

    def resolvent(
        self, lam: float, phi: PopulationDensity
    ) -> Tuple[ResolventResult, DomainResiduals]:
        result = resolvent_apply(
            self.model, self.propagator, lam, phi, family=self.renewal
        )
        return result, domain_check(self.model, self.propagator, lam, phi, result.psi)

    def project(self, phi: PopulationDensity) -> PopulationDensity:
        return self.projection.apply(phi)
