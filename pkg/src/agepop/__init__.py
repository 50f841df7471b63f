from agepop._version import PACKAGE_VERSION, SCHEMA_VERSION

from .errors import AgePopError, ModelValidationError, NoMalthusianParameterError, NumericalError
from .model import build_diffusion_model, diffusion_preset, scalar_lotka_model, validate_model
from .toolkit import AgePopulation

__version__ = PACKAGE_VERSION

__all__ = [
    "AgePopulation",
    "AgePopError",
    "ModelValidationError",
    "NumericalError",
    "NoMalthusianParameterError",
    "build_diffusion_model",
    "diffusion_preset",
    "scalar_lotka_model",
    "validate_model",
    "PACKAGE_VERSION",
    "SCHEMA_VERSION",
]
