import numpy as np
import pytest

from curvlab.diffusion import evolve
from curvlab.entropy import make_entropy
from curvlab.linearized import (
    backward_solve, energy_identity_residual, forward_adjoint_solve, forward_linearized_solve,
    frozen_coefficients, pairing_check, perturbation_derivative_check, time_derivative_residual,
)
from curvlab.space import circle_space

REG2 = make_entropy("regularized", N=2, eps=0.01, M=100)
LINEAR = make_entropy("linear")


@pytest.fixture(scope="module")
def traj():
    space = circle_space(12)
    return evolve(space, REG2, 1 + 0.5 * np.cos(2 * np.pi * space.coords), 0.05, 50)


def test_frozen_coefficients(traj):
    dP = REG2.dP(traj.rho)
    np.testing.assert_allclose(frozen_coefficients(traj, "average"), 0.5 * (dP[1:] + dP[:-1]))
    np.testing.assert_allclose(frozen_coefficients(traj, "implicit"), dP[1:])
    np.testing.assert_allclose(frozen_coefficients(traj, "explicit"), dP[:-1])
    with pytest.raises(ValueError):
        frozen_coefficients(traj, "midpoint")


@pytest.mark.parametrize("rule", ["average", "implicit", "explicit"])
def test_pairing_is_conserved(traj, rule):
    rng = np.random.default_rng(3)
    fwd = forward_linearized_solve(traj, rng.standard_normal(12), rule)
    bwd = backward_solve(traj, rng.standard_normal(12), rule=rule)
    assert pairing_check(fwd, bwd).holds


def test_pairing_rejects_mismatched_coefficients(traj):
    fwd = forward_linearized_solve(traj, np.ones(12), "average")
    bwd = backward_solve(traj, np.ones(12), rule="implicit")
    with pytest.raises(ValueError):
        pairing_check(fwd, bwd)


def test_backward_source_term(traj):
    psi = np.ones((traj.steps, 12))
    bwd = backward_solve(traj, np.zeros(12), psi)
    # constants are invariant under the spatial operator
    np.testing.assert_allclose(bwd.values[0], -traj.times[-1], rtol=1e-12)


def test_forward_adjoint_laplacian_is_forward_solution(traj):
    space = traj.space
    zeta0 = np.sin(2 * np.pi * space.coords)
    zeta = forward_adjoint_solve(traj, zeta0)
    w = forward_linearized_solve(traj, space.laplacian_matrix @ zeta0)
    np.testing.assert_allclose(space.laplacian_matrix @ zeta.values.T, w.values.T, atol=1e-9)


def test_energy_identity_residual_is_small_and_nonpositive(traj):
    bwd = backward_solve(traj, np.cos(4 * np.pi * traj.space.coords))
    res = energy_identity_residual(bwd)
    assert res <= 1e-12
    assert abs(res) < 0.05 * traj.space.energy(bwd.values[-1])


def test_time_derivative_follows_linearization(traj):
    assert time_derivative_residual(traj) < 0.05


def test_perturbation_zero_direction():
    space = circle_space(8)
    rep = perturbation_derivative_check(space, REG2, 1 + 0.5 * np.cos(2 * np.pi * space.coords),
                                        np.zeros(8), [0.1, 0.01], 0.02, n=50)
    assert rep.holds and max(rep.residuals) == 0.0


def test_perturbation_linear_flow_is_exact():
    space = circle_space(8)
    rep = perturbation_derivative_check(space, LINEAR, np.ones(8), np.sin(2 * np.pi * space.coords),
                                        [0.5, 0.1], 0.05, n=40)
    assert rep.holds and max(rep.residuals) < 1e-12


@pytest.mark.slow
def test_perturbation_errors_decrease():
    space = circle_space(8)
    rep = perturbation_derivative_check(space, REG2, 1 + 0.5 * np.cos(2 * np.pi * space.coords),
                                        np.sin(2 * np.pi * space.coords), [1e-1, 1e-2, 1e-3], 0.05, n=512)
    assert rep.holds
    errs = rep.residuals
    assert errs[0] > errs[1] > errs[2]


def test_perturbation_rejects_negative_datum():
    space = circle_space(8)
    with pytest.raises(ValueError):
        perturbation_derivative_check(space, REG2, np.full(8, 0.1), -np.ones(8), [1.0], 0.01, n=4)


def test_linearized_csv(traj):
    w = forward_linearized_solve(traj, np.ones(12))
    assert w.to_csv().startswith("t,x0,")
