from typing import Any, Optional, Tuple


class AgePopError(Exception):
    """Base exception for all agepop operations."""

    pass


# --------------------------------------------------------------------------- #
#  Rejections of inputs
# --------------------------------------------------------------------------- #
class ModelValidationError(AgePopError, ValueError):
    """Raised when a model, density or parameter is rejected."""

    pass


class ConfigError(ModelValidationError):
    """Raised when a config file is malformed. ``field`` names the culprit."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class AdmissibilityError(ModelValidationError):
    """Raised when λ lies outside the admissible interval of the model."""

    pass


class PreconditionError(ModelValidationError):
    """Raised when an operation is called outside its precondition."""

    pass


class LaplaceDivergenceError(ModelValidationError):
    """Raised when the Laplace integral of the trajectory cannot converge."""

    pass


class OracleSizeError(ModelValidationError):
    """Raised when a dense oracle solve exceeds the size cap."""

    pass


# --------------------------------------------------------------------------- #
#  Numerical failures
# --------------------------------------------------------------------------- #
class NumericalError(AgePopError, RuntimeError):
    """Base class for failures of the numerics themselves."""

    pass


class PropagatorError(NumericalError):
    """Raised when a step exponential is non-finite or loses positivity."""

    def __init__(self, message: str, interval: Optional[Tuple[float, float]] = None):
        super().__init__(message)
        self.interval = interval


class PerronConvergenceError(NumericalError):
    """Raised when power iteration fails to settle.

    ``diagnostic`` is the ratio ‖x_{k+2} − x_k‖ / ‖x_{k+1} − x_k‖ at the cap;
    values near zero signal period-2 oscillation.
    """

    def __init__(self, message: str, diagnostic: Optional[float] = None):
        super().__init__(message)
        self.diagnostic = diagnostic


class MonotonicityViolation(NumericalError):
    """Raised when r(Q_λ) fails to decrease along an increasing λ list."""

    def __init__(self, message: str, pair: Tuple[Any, Any]):
        super().__init__(message)
        self.pair = pair


class ResolventSingularError(NumericalError):
    """Raised when 1 − Q_λ is numerically singular (λ is an eigenvalue of −𝔸)."""

    def __init__(self, message: str, condition: Optional[float] = None):
        super().__init__(message)
        self.condition = condition


class ProjectionError(NumericalError):
    """Raised when the projection denominator degenerates."""

    pass


class AsyncGrowthError(NumericalError):
    """Raised when no convergence to the projection is detected."""

    def __init__(self, message: str, report: Any = None):
        super().__init__(message)
        self.report = report


# --------------------------------------------------------------------------- #
#  Distinct outcome
# --------------------------------------------------------------------------- #
class NoMalthusianParameterError(AgePopError):
    """No λ₀ with r(Q_λ₀) = 1 exists in the admissible range."""

    def __init__(self, message: str, searched: Optional[Tuple[float, float]] = None):
        super().__init__(message)
        self.searched = searched
