# tests/test_model.py
import math

import numpy as np
import pytest
from scipy.linalg import expm

from agepop.errors import ModelValidationError
from agepop.model import (
    AgeGridSpec,
    RateProfile,
    SpatialSpec,
    build_diffusion_model,
    build_model,
    diffusion_preset,
    irreducibility_check,
    laplacian_1d,
    random_valid_model,
    scalar_lotka_model,
    scale_birth,
    system_condition,
    trapezoid_weights,
    truncation_age,
    validate_model,
)
from agepop.serializers import AgeGrid


def _brute_force_irreducible(M: np.ndarray) -> bool:
    n = M.shape[0]
    adj = (M > 0).astype(int)
    reach = np.eye(n, dtype=int)
    power = np.eye(n, dtype=int)
    for _ in range(n - 1):
        power = np.minimum(power @ adj, 1)
        reach = np.minimum(reach + power, 1)
    if n == 1:
        return bool(M[0, 0] > 0)
    return bool(np.all(reach > 0))


# --------------------------------------------------------------------------- #
#  grid and rates
# --------------------------------------------------------------------------- #
def test_age_grid_nodes_end_exactly_at_a_max():
    grid = AgeGrid(a_max=0.7, K=37)
    assert grid.nodes[-1] == 0.7
    assert np.all(np.diff(grid.nodes) > 0)
    assert grid.weights.sum() == pytest.approx(0.7, rel=1e-14)


def test_trapezoid_weights_degenerate_counts():
    assert trapezoid_weights(1, 0.1).tolist() == [0.0]
    assert trapezoid_weights(0, 0.1).size == 0
    assert trapezoid_weights(3, 0.1).tolist() == pytest.approx([0.05, 0.1, 0.05])


def test_grid_weights_share_the_trapezoid_rule():
    grid = AgeGrid(a_max=2.0, K=8)
    assert np.array_equal(grid.weights, trapezoid_weights(grid.K + 1, grid.da))


def test_rate_profile_interpolates_and_holds_ends():
    profile = RateProfile(points=[(0.0, 0.0), (1.0, 2.0)])
    assert profile.at(np.array([-1.0, 0.25, 3.0])).tolist() == pytest.approx([0.0, 0.5, 2.0])
    assert RateProfile(points=3.0).at(np.array([0.0, 9.0])).tolist() == [3.0, 3.0]


def test_rate_profile_rejects_unsorted_ages():
    with pytest.raises(ValueError):
        RateProfile(points=[(1.0, 0.0), (0.5, 1.0)])


def test_truncation_age_hits_tail_tolerance():
    a = truncation_age(2.0, 1e-10)
    assert math.exp(-2.0 * a) == pytest.approx(1e-10, rel=1e-12)


def test_infinite_age_grid_is_truncated():
    grid = AgeGridSpec(K=100, infinite=True, decay_margin=2.0).build()
    assert grid.a_max == pytest.approx(truncation_age(2.0, 1e-10))


def test_infinite_age_without_margin_is_rejected():
    with pytest.raises(ModelValidationError):
        AgeGridSpec(K=100, infinite=True).build()


def test_finite_age_needs_a_max():
    with pytest.raises(ModelValidationError, match="a_max"):
        AgeGridSpec(K=10).build()


# --------------------------------------------------------------------------- #
#  builders
# --------------------------------------------------------------------------- #
def test_scalar_reduction():
    m = build_diffusion_model(
        SpatialSpec(n=1, D=0.0), 0.0, 1.0, AgeGridSpec(a_max=1.0, K=100)
    )
    assert m.n == 1 and m.K == 100
    assert np.all(m.gen.A == 0.0)
    assert np.all(m.birth.b == 1.0)


def test_dirichlet_stencil_n3():
    m = diffusion_preset(n=3, D=1.0, L=1.0, mu=0.0, beta=1.0, K=10)
    A = m.gen.A[0]
    assert np.diag(A).tolist() == pytest.approx([32.0, 32.0, 32.0])
    assert A[0, 1] == pytest.approx(-16.0) and A[1, 2] == pytest.approx(-16.0)
    assert A[0, 2] == 0.0
    off = m.gen.A[:, ~np.eye(3, dtype=bool)]
    assert np.all(off <= 0)


def test_dirichlet_principal_eigenvalue_n50():
    m = diffusion_preset(n=50, D=1.0, L=1.0, K=10)
    kappa = np.linalg.eigvalsh(m.gen.A0[0])[0]
    h = 1.0 / 51
    assert kappa == pytest.approx(4.0 / h**2 * math.sin(math.pi * h / 2) ** 2, rel=1e-10)
    assert kappa == pytest.approx(math.pi**2, rel=5e-3)


def test_neumann_rows_sum_to_zero():
    lap, h = laplacian_1d(6, 1.0, "neumann")
    assert h == pytest.approx(1.0 / 6)
    assert np.allclose(lap.sum(axis=1), 0.0)
    assert lap[0, 0] == pytest.approx(1.0 / h**2)


def test_age_dependent_rates_land_on_nodes():
    m = scalar_lotka_model(mu=[(0.0, 0.0), (1.0, 2.0)], beta=[(0.0, 1.0), (1.0, 3.0)], K=4)
    assert m.gen.mu.tolist() == pytest.approx([0.0, 0.5, 1.0, 1.5, 2.0])
    assert m.birth.b[:, 0, 0].tolist() == pytest.approx([1.0, 1.5, 2.0, 2.5, 3.0])
    assert np.allclose(m.gen.A, m.gen.A0 + m.gen.mu[:, None, None])


def test_negative_rate_names_node():
    with pytest.raises(ModelValidationError, match="node"):
        scalar_lotka_model(mu=[(0.0, 1.0), (1.0, -1.0)], K=10)


def test_negative_diffusivity_rejected():
    with pytest.raises(ModelValidationError, match="D"):
        diffusion_preset(n=5, D=-1.0, K=10)


def test_mismatched_node_counts_rejected():
    grid = AgeGrid(a_max=1.0, K=5)
    with pytest.raises(ModelValidationError):
        build_model(np.zeros((4, 1, 1)), np.ones((1, 1)), grid)


def test_scale_birth():
    m = scalar_lotka_model(beta=2.0, K=10)
    scaled = scale_birth(m, 0.25)
    assert np.allclose(scaled.birth.b, 0.5)
    assert scaled.gen is m.gen
    with pytest.raises(ModelValidationError):
        scale_birth(m, -1.0)


def test_random_valid_model_is_valid(rng):
    for _ in range(5):
        m = random_valid_model(rng)
        report = validate_model(m)
        assert report.ok, report.messages


# --------------------------------------------------------------------------- #
#  checks
# --------------------------------------------------------------------------- #
def test_validate_scalar_model():
    report = validate_model(scalar_lotka_model(beta=1.0, K=50))
    assert report.metzler_ok and report.birth_nonneg_ok and report.irreducible_ok
    assert report.messages == []


def test_validate_without_births_is_reducible():
    report = validate_model(scalar_lotka_model(beta=0.0, K=50))
    assert report.metzler_ok and report.birth_nonneg_ok
    assert not report.irreducible_ok
    assert not report.ok


def test_validate_uncoupled_pair_is_reducible():
    m = build_model(np.zeros((2, 2)), np.eye(2), AgeGrid(a_max=1.0, K=20))
    report = validate_model(m)
    assert not report.irreducible_ok
    assert any("reducible" in msg for msg in report.messages)


def test_validate_reports_sign_violations():
    grid = AgeGrid(a_max=1.0, K=10)
    m = build_model(np.array([[1.0, 0.5], [0.0, 1.0]]), np.ones((2, 2)), grid)
    report = validate_model(m)
    assert not report.metzler_ok
    assert not report.irreducible_ok

    m = build_model(np.zeros((2, 2)), -np.ones((2, 2)), grid)
    assert not validate_model(m).birth_nonneg_ok


def test_validate_is_pure():
    m = scalar_lotka_model(beta=1.0, K=20)
    assert validate_model(m) == validate_model(m)


def test_irreducibility_examples():
    assert not irreducibility_check(np.eye(2))
    assert irreducibility_check(np.array([[0.0, 1.0], [1.0, 0.0]]))
    tri = np.diag(np.full(5, 2.0)) - np.diag(np.ones(4), 1) - np.diag(np.ones(4), -1)
    assert irreducibility_check(expm(-0.1 * tri))


def test_irreducibility_rejects_negative_entries():
    with pytest.raises(ModelValidationError):
        irreducibility_check(np.array([[1.0, -0.1], [0.0, 1.0]]))


def test_irreducibility_matches_reachability(rng):
    for _ in range(40):
        n = int(rng.integers(1, 6))
        M = rng.uniform(0.0, 1.0, (n, n)) * (rng.uniform(size=(n, n)) < 0.35)
        assert irreducibility_check(M) == _brute_force_irreducible(M)


def test_system_condition_detects_scalar_singularity():
    assert system_condition(np.array([[1e-14]])) > 1e12
    assert system_condition(np.array([[0.0]])) == float("inf")
    assert system_condition(np.eye(3)) == pytest.approx(1.0)
