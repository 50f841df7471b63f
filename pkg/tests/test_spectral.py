# tests/test_spectral.py
import math

import numpy as np
import pytest
from scipy.optimize import brentq

from agepop.errors import (
    AdmissibilityError,
    ModelValidationError,
    NoMalthusianParameterError,
    PerronConvergenceError,
    PreconditionError,
)
from agepop.evolution import build_propagator
from agepop.model import (
    AgeGridSpec,
    SpatialSpec,
    build_diffusion_model,
    diffusion_preset,
    random_valid_model,
    scalar_lotka_model,
    scale_birth,
)
from agepop.semigroup import apply_semigroup, solve_birth, total_population
from agepop.serializers import StabilityVerdict
from agepop.spectral import (
    RenewalFamily,
    birth_scaling_for_zero_growth,
    classify_stability,
    find_lambda0,
    generator_eigenfunction,
    perron_root,
    renewal_operator,
    spectral_radius,
    spectral_radius_curve,
    stable_age_density,
)

from conftest import euler_lotka_root, sine_mode


def _infinite_age_model(beta: float, K: int = 500):
    return build_diffusion_model(
        SpatialSpec(n=1, D=0.0),
        1.0,
        beta,
        AgeGridSpec(K=K, infinite=True, decay_margin=1.0),
    )


# --------------------------------------------------------------------------- #
#  Q_λ
# --------------------------------------------------------------------------- #
def test_critical_renewal_operator_is_one(scalar_crit):
    Q = renewal_operator(scalar_crit.model, scalar_crit.propagator, 0.0)
    assert Q.shape == (1, 1)
    assert Q[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_renewal_operator_with_mortality():
    m = scalar_lotka_model(mu=1.0, beta=2.0, a_max=10.0, K=4000)
    p = build_propagator(m, substeps=1, max_workers=1)
    assert renewal_operator(m, p, 1.0)[0, 0] == pytest.approx(1.0, abs=5e-6)


def test_renewal_operator_without_births_is_zero(scalar_no_birth):
    Q = renewal_operator(scalar_no_birth.model, scalar_no_birth.propagator, 0.3)
    assert np.all(Q == 0.0)
    assert spectral_radius(Q) == 0.0


def test_renewal_family_rejects_foreign_propagator(scalar_crit, diffusion):
    with pytest.raises(ModelValidationError):
        RenewalFamily(scalar_crit.model, diffusion.propagator)


def test_first_moment_closed_form(scalar_crit):
    family = RenewalFamily(scalar_crit.model, scalar_crit.propagator)
    assert family.first_moment(0.0)[0, 0] == pytest.approx(0.5, abs=1e-12)


# --------------------------------------------------------------------------- #
#  Perron data
# --------------------------------------------------------------------------- #
def test_perron_root_scalar():
    report = perron_root(np.array([[2.0]]))
    assert report.r == 2.0
    assert report.phi0.tolist() == [1.0]
    assert report.simple


def test_perron_root_period_two_does_not_converge():
    with pytest.raises(PerronConvergenceError) as info:
        perron_root(np.array([[0.0, 1.0], [1.0, 0.0]]), max_iter=200)
    assert info.value.diagnostic == pytest.approx(0.0, abs=1e-12)


def test_perron_root_symmetric_pair():
    report = perron_root(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert report.r == pytest.approx(3.0, rel=1e-12)
    assert np.allclose(report.phi0, [0.5, 0.5], atol=1e-12)
    assert report.wstar @ report.phi0 == pytest.approx(1.0, rel=1e-12)
    assert report.gap == pytest.approx(2.0, rel=1e-8)
    assert report.simple


def test_perron_vectors_are_positive_and_unique(rng):
    for _ in range(10):
        Q = rng.uniform(0.05, 1.0, size=(5, 5))
        report = perron_root(Q)
        values, vectors = np.linalg.eig(Q)
        top = np.argmax(values.real)
        reference = np.abs(vectors[:, top].real)
        reference /= reference.sum()
        assert report.r == pytest.approx(values[top].real, rel=1e-10)
        assert np.all(report.phi0 > 0) and np.all(report.wstar > 0)
        assert report.phi0.sum() == pytest.approx(1.0)
        assert np.allclose(report.phi0, reference, atol=1e-10)
        assert report.wstar @ report.phi0 == pytest.approx(1.0, rel=1e-12)


def test_perron_root_rejects_bad_matrices():
    with pytest.raises(ModelValidationError):
        perron_root(np.array([[1.0, -0.1], [0.0, 1.0]]))
    with pytest.raises(ModelValidationError):
        perron_root(np.zeros((2, 2)))
    with pytest.raises(ModelValidationError):
        perron_root(np.ones((2, 3)))


# --------------------------------------------------------------------------- #
#  r(Q_λ) curve
# --------------------------------------------------------------------------- #
def test_spectral_radius_curve_closed_form(scalar_crit):
    curve = spectral_radius_curve(
        scalar_crit.model, scalar_crit.propagator, [0.0, 1.0, 2.0], max_workers=1
    )
    expected = [1.0, 1.0 - math.exp(-1.0), (1.0 - math.exp(-2.0)) / 2.0]
    assert [pt.r for pt in curve] == pytest.approx(expected, abs=1e-5)


def test_spectral_radius_curve_large_lambda(scalar_crit):
    (point,) = spectral_radius_curve(scalar_crit.model, scalar_crit.propagator, [50.0])
    assert point.r < 0.05


def test_spectral_radius_curve_allows_duplicates(scalar_crit):
    curve = spectral_radius_curve(scalar_crit.model, scalar_crit.propagator, [0.5, 0.5, 1.0])
    assert curve[0].r == curve[1].r


def test_spectral_radius_curve_rejects_unsorted(scalar_crit):
    with pytest.raises(ModelValidationError):
        spectral_radius_curve(scalar_crit.model, scalar_crit.propagator, [1.0, 0.0])


def test_spectral_radius_decreases_on_random_models(rng):
    lams = np.linspace(-1.0, 3.0, 10)
    for _ in range(25):
        m = random_valid_model(rng, n=3, K=40)
        p = build_propagator(m, max_workers=1)
        curve = spectral_radius_curve(m, p, lams, max_workers=1)
        radii = [pt.r for pt in curve]
        assert all(b < a for a, b in zip(radii, radii[1:]))


# --------------------------------------------------------------------------- #
#  λ₀
# --------------------------------------------------------------------------- #
@pytest.mark.parametrize("beta", [2.0, 0.5])
def test_lambda0_matches_euler_lotka(beta):
    m = scalar_lotka_model(beta=beta)
    result = find_lambda0(m, build_propagator(m, max_workers=1))
    assert result.lambda0 == pytest.approx(euler_lotka_root(beta), abs=1e-4)
    assert result.residual <= 1e-10
    lo, hi = result.bracket
    assert lo <= result.lambda0 <= hi


def test_lambda0_known_values(scalar_super, scalar_sub):
    assert find_lambda0(scalar_super.model, scalar_super.propagator).lambda0 == pytest.approx(
        1.5936, abs=1e-4
    )
    assert find_lambda0(scalar_sub.model, scalar_sub.propagator).lambda0 == pytest.approx(
        -1.2564, abs=1e-4
    )


def test_lambda0_critical_is_zero(scalar_crit):
    result = find_lambda0(scalar_crit.model, scalar_crit.propagator)
    assert result.lambda0 == pytest.approx(0.0, abs=1e-6)


def test_lambda0_without_births(scalar_no_birth):
    with pytest.raises(NoMalthusianParameterError) as info:
        find_lambda0(scalar_no_birth.model, scalar_no_birth.propagator)
    assert info.value.searched is not None


def test_lambda0_infinite_age():
    m = _infinite_age_model(0.5)
    result = find_lambda0(m, build_propagator(m, max_workers=1))
    assert result.lambda0 == pytest.approx(-0.5, abs=1e-3)


def test_infinite_age_admissibility():
    m = _infinite_age_model(0.5)
    family = RenewalFamily(m, build_propagator(m, max_workers=1))
    with pytest.raises(AdmissibilityError):
        family.at(-1.0)
    with pytest.raises(AdmissibilityError):
        spectral_radius_curve(m, family.propagator, [-1.5, 0.0], family=family)


def test_infinite_age_weak_births_have_no_root():
    m = _infinite_age_model(0.01)
    with pytest.raises(NoMalthusianParameterError):
        find_lambda0(m, build_propagator(m, max_workers=1))


def test_lambda0_diffusion_matches_modal_root():
    """
    A commutes with b = βI, so λ₀ is the root of the scalar renewal equation in
    the principal mode κ₁ of the assembled A.

    * Agreement to 1e-6 holds against the same trapezoid quadrature the solver uses.
    * Against the exact integral the gap is the trapezoid error, O(Δa²).
    """
    m = diffusion_preset(n=50, beta=15.0, K=200)
    p = build_propagator(m, max_workers=1)
    kappa = np.linalg.eigvalsh(m.gen.A[0])[0]
    ages, weights = m.grid.nodes, m.grid.weights
    da = m.grid.da

    def discrete(lam):
        return 15.0 * np.dot(weights, np.exp(-(lam + kappa) * ages)) - 1.0

    def continuous(lam):
        c = lam + kappa
        return 15.0 * (1.0 - math.exp(-c)) / c - 1.0

    result = find_lambda0(m, p)
    assert result.lambda0 == pytest.approx(brentq(discrete, -20.0, 20.0, xtol=1e-14), abs=1e-6)

    exact = brentq(continuous, 1e-6 - kappa, 20.0, xtol=1e-14)
    c = exact + kappa
    # trapezoid error c²Δa²/12 relative, over a mean age of about 1/c
    assert abs(result.lambda0 - exact) <= c**3 * da**2 / 6.0


# --------------------------------------------------------------------------- #
#  Verdicts and eigenfunctions
# --------------------------------------------------------------------------- #
def test_classify_stability(scalar_sub, scalar_crit, scalar_super):
    sub = classify_stability(scalar_sub.model, scalar_sub.propagator)
    assert sub.verdict == StabilityVerdict.STABLE
    assert sub.r_q0 == pytest.approx(0.5, abs=1e-12)
    assert (
        classify_stability(scalar_crit.model, scalar_crit.propagator).verdict
        == StabilityVerdict.CRITICAL
    )
    assert (
        classify_stability(scalar_super.model, scalar_super.propagator).verdict
        == StabilityVerdict.ASYNCHRONOUS_GROWTH
    )


def test_classify_band_is_configurable(scalar_sub):
    wide = classify_stability(scalar_sub.model, scalar_sub.propagator, eps_band=0.6)
    assert wide.verdict == StabilityVerdict.CRITICAL


def test_critical_eigenfunction_is_constant(scalar_crit):
    eig = generator_eigenfunction(scalar_crit.model, scalar_crit.propagator, 0.0)
    assert np.allclose(eig.density.values, 1.0, atol=1e-12)
    assert eig.bc_residual <= 1e-12
    assert eig.pde_residual <= 1e-12


def test_supercritical_eigenfunction(scalar_super):
    lam0 = find_lambda0(scalar_super.model, scalar_super.propagator).lambda0
    eig = generator_eigenfunction(scalar_super.model, scalar_super.propagator, lam0)
    ages = scalar_super.grid.nodes
    assert np.allclose(eig.density.values[:, 0], np.exp(-lam0 * ages), rtol=1e-12)
    assert eig.bc_residual <= 1e-9


def test_eigenfunction_requires_unit_radius(scalar_super):
    with pytest.raises(PreconditionError):
        generator_eigenfunction(scalar_super.model, scalar_super.propagator, 0.0)


def test_diffusion_eigenfunction_at_zero_growth(diffusion):
    scaling = birth_scaling_for_zero_growth(diffusion.model, diffusion.propagator)
    tuned = scale_birth(diffusion.model, scaling)
    eig = generator_eigenfunction(tuned, diffusion.propagator, 0.0)
    kappa = np.linalg.eigvalsh(diffusion.model.gen.A[0])[0]
    ages = diffusion.grid.nodes
    mode = sine_mode(20)
    mode /= mode.sum()
    expected = np.exp(-kappa * ages)[:, None] * mode[None, :]
    assert np.allclose(eig.density.values, expected, atol=1e-9)


def test_zero_growth_scaling_needs_births(scalar_no_birth):
    with pytest.raises(PreconditionError):
        birth_scaling_for_zero_growth(scalar_no_birth.model, scalar_no_birth.propagator)


def test_stable_age_density_has_unit_mass(scalar_super):
    mal = find_lambda0(scalar_super.model, scalar_super.propagator)
    density = stable_age_density(scalar_super.model, scalar_super.propagator, mal)
    assert total_population(density) == pytest.approx(1.0, rel=1e-12)
    assert np.all(np.diff(density.values[:, 0]) < 0)


@pytest.mark.parametrize("seed", [3, 11])
def test_eigenfunction_grows_exponentially(seed):
    m = random_valid_model(np.random.default_rng(seed), n=3, K=40)
    p = build_propagator(m, max_workers=1)
    mal = find_lambda0(m, p)
    phi = stable_age_density(m, p, mal)
    B = solve_birth(m, p, phi, 1.5)
    for t in (0.5, 1.5):
        evolved = apply_semigroup(m, p, B, phi, t).values
        assert np.allclose(evolved, math.exp(mal.lambda0 * t) * phi.values, rtol=1e-7, atol=1e-12)
