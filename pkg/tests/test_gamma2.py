import math

import numpy as np
import pytest

from curvlab.entropy import make_entropy
from curvlab.gamma2 import (
    FinitenessError, WeightedOperator, be_check, be_inequality_margin, dual_energy, gamma2_form,
    gamma2_forms, gamma2_pointwise, hamiltonian_residual, monte_carlo_be, nonlinear_be_check,
    optimal_curvature, optimal_dimension, weighted_poisson,
)
from curvlab.space import (
    circle_space, complete_space, disjoint_union, erdos_renyi_space, gamma, laplacian,
    two_point_space,
)

S2 = two_point_space()


def test_two_point_gamma2():
    assert gamma2_form(S2, [0, 1], None, [1, 1]) == pytest.approx(2.0)


def test_literal_and_leibniz_forms_agree():
    rng = np.random.default_rng(0)
    for seed in range(5):
        space = erdos_renyi_space(10, 0.4, seed=seed)
        f, g, phi = rng.standard_normal(10), rng.standard_normal(10), rng.random(10)
        forms = gamma2_forms(space, f, g, phi)
        assert abs(forms.gap) <= 1e-12 * max(1.0, abs(forms.literal))


def test_gamma2_is_symmetric_and_bilinear():
    space = erdos_renyi_space(8, 0.5, seed=3)
    rng = np.random.default_rng(1)
    f, g, h, phi = (rng.standard_normal(8) for _ in range(4))
    phi = np.abs(phi)
    assert gamma2_form(space, f, g, phi) == pytest.approx(gamma2_form(space, g, f, phi), abs=1e-12)
    lhs = gamma2_form(space, f + 2 * h, g, phi)
    rhs = gamma2_form(space, f, g, phi) + 2 * gamma2_form(space, h, g, phi)
    assert lhs == pytest.approx(rhs, abs=1e-10)
    # polarization
    quad = lambda u: gamma2_form(space, u, u, phi)  # noqa: E731
    assert 0.25 * (quad(f + g) - quad(f - g)) == pytest.approx(gamma2_form(space, f, g, phi), abs=1e-10)


def test_pointwise_density_integrates_to_form():
    space = erdos_renyi_space(9, 0.4, seed=4)
    rng = np.random.default_rng(2)
    f, phi = rng.standard_normal(9), rng.random(9)
    dens = gamma2_pointwise(space, f)
    assert np.dot(dens * phi, space.m) == pytest.approx(gamma2_form(space, f, f, phi), abs=1e-10)


def test_gamma2_constant_weight_is_laplacian_square():
    space = erdos_renyi_space(9, 0.4, seed=6)
    f = np.random.default_rng(3).standard_normal(9)
    Df = laplacian(space, f)
    assert gamma2_form(space, f, f, np.ones(9)) == pytest.approx(np.dot(Df * Df, space.m), abs=1e-10)


def test_two_point_optimal_curvature():
    assert abs(optimal_curvature(S2) - 2.0) <= 1e-9
    assert optimal_curvature(S2, 2.0) == pytest.approx(1.0, abs=1e-8)
    assert optimal_dimension(S2, 1.0) == pytest.approx(2.0, abs=1e-6)
    assert optimal_dimension(S2, 2.0) == math.inf
    assert math.isnan(optimal_dimension(S2, 3.0))


def test_known_curvatures():
    # complete graph K_n with unit weights: curvature 1 + n/2
    assert optimal_curvature(complete_space(3)) == pytest.approx(2.5, abs=1e-8)
    assert optimal_curvature(complete_space(5)) == pytest.approx(3.5, abs=1e-8)
    # cycles of length at least 6 are flat
    assert optimal_curvature(circle_space(8)) == pytest.approx(0.0, abs=1e-6)


def test_be_check_huge_negative_curvature_passes():
    for seed in range(3):
        assert be_check(erdos_renyi_space(8, 0.4, seed=seed), -1e6).holds


def test_be_check_witness_violates_inequality():
    space = erdos_renyi_space(7, 0.5, seed=9)
    K = optimal_curvature(space) + 0.1
    rep = be_check(space, K)
    assert not rep.holds
    phi = np.zeros(7)
    phi[rep.worst_point] = 1 / space.m[rep.worst_point]
    assert be_inequality_margin(space, rep.witness, phi, K, math.inf) < 0
    assert len(rep.pointwise_margins) == 7


def test_be_check_agrees_with_monte_carlo():
    space = erdos_renyi_space(6, 0.5, seed=1)
    K = optimal_curvature(space, 4.0)
    assert be_check(space, K - 1e-6, 4.0).holds
    assert monte_carlo_be(space, K - 1e-6, 4.0, 5000, seed=3) >= -1e-10


def test_be_check_rejects_bad_dimension():
    with pytest.raises(ValueError):
        be_check(S2, 0.0, 0.0)


def test_disconnected_space_curvature_is_minimum():
    a, b = two_point_space(), complete_space(3)
    u = disjoint_union(a, b)
    assert optimal_curvature(u) == pytest.approx(min(optimal_curvature(a), optimal_curvature(b)), abs=1e-8)


def test_nonlinear_be_reduces_to_linear_for_linear_pressure():
    space = erdos_renyi_space(7, 0.5, seed=2)
    rng = np.random.default_rng(5)
    f, phi = rng.standard_normal(7), rng.random(7)
    K = optimal_curvature(space) - 1e-6
    rep = nonlinear_be_check(space, make_entropy("linear"), K, math.inf, f, phi)
    assert rep.holds
    assert rep.margin == pytest.approx(be_inequality_margin(space, f, phi, K, math.inf), abs=1e-10)
    with pytest.raises(ValueError):
        nonlinear_be_check(space, make_entropy("linear"), K, math.inf, f, -phi)


def test_weighted_poisson_two_point():
    np.testing.assert_allclose(weighted_poisson(S2, [1, 1], [0.5, -0.5]), [0.25, -0.25])
    assert dual_energy(S2, [1, 1], [0.5, -0.5]) == pytest.approx(0.25)
    # edge weight (2 + 0) / 2 keeps the energy; normalization is w.r.t. rho m
    np.testing.assert_allclose(weighted_poisson(S2, [2, 0], [0.5, -0.5]), [0.0, -0.5], atol=1e-14)


def test_weighted_poisson_incompatible_functional():
    with pytest.raises(FinitenessError):
        weighted_poisson(S2, [1, 1], [1.0, 0.0])


def test_weighted_operator_solves_its_equation():
    space = erdos_renyi_space(12, 0.3, seed=8)
    rng = np.random.default_rng(4)
    rho = rng.random(12) + 0.1
    ell = rng.standard_normal(12)
    ell -= np.dot(ell, space.m) / space.m.sum()
    op = WeightedOperator(space, rho)
    phi = op.solve(ell)
    psi = rng.standard_normal(12)
    assert op.energy(phi, psi) == pytest.approx(np.dot(ell * psi, space.m), abs=1e-9)
    assert op.dual_energy(ell) == pytest.approx(op.energy(phi, phi), rel=1e-9)
    assert np.dot(op.carre(phi, phi), space.m) == pytest.approx(op.energy(phi, phi), rel=1e-9)


def test_weighted_operator_with_vanishing_density():
    space = circle_space(8)
    rho = np.array([1, 1, 0, 0, 0, 1, 1, 1], float)
    op = WeightedOperator(space, rho)
    ell = np.array([1, -1, 0, 0, 0, 0, 0, 0], float)
    assert op.is_compatible(ell)
    phi = op.solve(ell)
    assert np.isfinite(op.energy(phi, phi))


def test_hamiltonian_identity_linear_is_exact():
    rng = np.random.default_rng(6)
    space = erdos_renyi_space(12, 0.4, seed=12)
    rep = hamiltonian_residual(space, make_entropy("linear"), rng.random(12) + 0.1, rng.standard_normal(12))
    assert rep.holds and abs(rep.details["residual"]) <= 1e-12


def test_hamiltonian_identity_converges_on_grids():
    model = make_entropy("regularized", N=2, eps=0.01, M=100)
    res = []
    for n in (16, 32, 64):
        space = circle_space(n)
        x = space.coords
        rep = hamiltonian_residual(space, model, 1 + 0.5 * np.cos(2 * np.pi * x), np.sin(2 * np.pi * x))
        res.append(abs(rep.details["residual"]))
    assert res[0] > res[1] > res[2]


def test_gamma_symmetry_used_by_forms():
    space = erdos_renyi_space(6, 0.5, seed=0)
    f, g = np.arange(6.0), np.sin(np.arange(6.0))
    np.testing.assert_allclose(gamma(space, f, g), gamma(space, g, f))
