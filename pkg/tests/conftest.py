# tests/conftest.py
import math

import numpy as np
import pytest
from scipy.optimize import brentq

from agepop.evolution import build_propagator
from agepop.model import diffusion_preset, scalar_lotka_model
from agepop.semigroup import constant_density, density_from_profile


def euler_lotka_root(beta: float, mu: float = 0.0, a_max: float = 1.0) -> float:
    """Root of β∫₀^{a_max} e^{−(λ+μ)a} da = 1 from the closed form."""

    def g(lam):
        c = lam + mu
        if abs(c) < 1e-14:
            return beta * a_max - 1.0
        return beta * (1.0 - math.exp(-c * a_max)) / c - 1.0

    return brentq(g, -50.0, 50.0, xtol=1e-14)


def sine_mode(n: int) -> np.ndarray:
    """Principal eigenvector of the Dirichlet second-difference matrix."""
    h = 1.0 / (n + 1)
    return np.sin(np.pi * h * np.arange(1, n + 1))


def compatible_slope(beta: float) -> float:
    """s with φ(a) = 1 + s·a satisfying φ(0) = β∫₀¹φ(a)da."""
    return 2.0 * (1.0 / beta - 1.0)


class Case:
    """A model with its propagator, built once per session."""

    def __init__(self, model, substeps: int = 4):
        self.model = model
        self.propagator = build_propagator(model, substeps=substeps, max_workers=1)

    @property
    def grid(self):
        return self.model.grid

    def ones(self):
        return constant_density(self.model.grid, self.model.n)

    def profile(self, fn):
        return density_from_profile(self.model.grid, self.model.n, fn)


@pytest.fixture(scope="session")
def scalar_sub():
    return Case(scalar_lotka_model(beta=0.5))


@pytest.fixture(scope="session")
def scalar_crit():
    return Case(scalar_lotka_model(beta=1.0))


@pytest.fixture(scope="session")
def scalar_super():
    return Case(scalar_lotka_model(beta=2.0))


@pytest.fixture(scope="session")
def scalar_no_birth():
    return Case(scalar_lotka_model(beta=0.0))


@pytest.fixture(scope="session")
def scalar_decay():
    """b ≡ 0, μ ≡ 1."""
    return Case(scalar_lotka_model(mu=1.0, beta=0.0))


@pytest.fixture(scope="session")
def diffusion():
    return Case(diffusion_preset(n=20, K=200))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
