import numpy as np
import pytest
from scipy import linalg

from curvlab.diffusion import (
    entropy_dissipation_report, evolve, fisher_information, l1_contraction_check,
    read_trajectory_csv, resolvent_step,
)
from curvlab.entropy import make_entropy
from curvlab.space import circle_space, erdos_renyi_space, heat_flow, normalize, two_point_space

LINEAR = make_entropy("linear")
REG2 = make_entropy("regularized", N=2, eps=0.01, M=100)


def test_two_point_resolvent():
    rho = resolvent_step(two_point_space(), LINEAR, [1.0, 0.0], 1.0)
    np.testing.assert_allclose(rho, [2 / 3, 1 / 3], rtol=1e-12)


def test_linear_resolvent_matches_linear_solve():
    space = erdos_renyi_space(10, 0.4, seed=1)
    rho = np.random.default_rng(0).random(10)
    expected = linalg.solve(np.eye(10) - 0.3 * space.laplacian_matrix, rho)
    np.testing.assert_allclose(resolvent_step(space, LINEAR, rho, 0.3), expected, rtol=1e-11)


def test_nonlinear_resolvent_solves_its_equation():
    space = circle_space(12)
    rho = np.random.default_rng(2).random(12)
    out = resolvent_step(space, REG2, rho, 0.01)
    residual = out - 0.01 * (space.laplacian_matrix @ REG2.P(out)) - rho
    assert np.abs(residual).max() < 1e-11
    assert abs((out - rho) @ space.m) < 1e-14


def test_resolvent_rejects_irregular_pressure():
    with pytest.raises(ValueError):
        resolvent_step(two_point_space(), make_entropy("power", N=2), [1.0, 0.0], 0.1)
    with pytest.raises(ValueError):
        resolvent_step(two_point_space(), LINEAR, [1.0, 0.0], 0.0)


def test_resolvent_handles_zeros():
    info = {}
    out = resolvent_step(circle_space(8), REG2, [1, 0, 0, 0, 0, 0, 0, 0], 0.05, info=info)
    assert np.all(out >= 0) and info["iterations"] <= 50


def test_evolve_trajectory_shape_and_mass():
    space = circle_space(16)
    traj = evolve(space, REG2, 1 + 0.5 * np.cos(2 * np.pi * space.coords), 0.05, 20)
    assert traj.rho.shape == (21, 16) and traj.steps == 20
    assert traj.tau == pytest.approx(0.0025)
    np.testing.assert_allclose(traj.masses(), traj.masses()[0], atol=1e-12)


def test_exponential_formula_converges():
    space = circle_space(16)
    rho = 1 + 0.5 * np.cos(2 * np.pi * space.coords)
    exact = heat_flow(space, rho, 0.02)
    errs = [np.abs(evolve(space, LINEAR, rho, 0.02, n).final - exact) @ space.m for n in (16, 32, 64)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] / errs[1] <= 0.6


def test_comparison_bounds():
    space = erdos_renyi_space(9, 0.5, seed=3)
    rho = np.random.default_rng(5).random(9) + 0.2
    traj = evolve(space, REG2, rho, 0.3, 15)
    assert traj.rho.min() >= rho.min() and traj.rho.max() <= rho.max()


def test_l1_contraction_and_order():
    rng = np.random.default_rng(7)
    space = circle_space(10)
    r1 = normalize(space, rng.random(10) + 0.1)
    r2 = r1 + 0.3 * rng.random(10)
    rep = l1_contraction_check(space, REG2, r1, r2, 0.1, 10)
    assert rep.holds and rep.details["order_margin"] >= 0
    r3 = normalize(space, rng.random(10) + 0.1)
    rep = l1_contraction_check(space, REG2, r1, r3, 0.1, 10)
    assert rep.holds and "dual_margin" in rep.details


def test_two_point_l1_distance_nonincreasing():
    space = two_point_space()
    rep = l1_contraction_check(space, REG2, [0.3, 1.7], [1.2, 0.8], 1.0, 20)
    assert rep.holds
    assert all(a >= b - 1e-15 for a, b in zip(rep.residuals, rep.residuals[1:]))


def test_entropy_dissipation():
    space = circle_space(16)
    traj = evolve(space, REG2, 1 + 0.5 * np.sin(2 * np.pi * space.coords), 0.05, 20)
    rep = entropy_dissipation_report(traj, lambda r: r * r, lambda r: 2 * r)
    assert rep.holds
    assert rep.details["balance_residual"] <= 1e-12


def test_fisher_information():
    assert fisher_information(two_point_space(), [2.0, 0.0]) == pytest.approx(8.0)
    assert fisher_information(two_point_space(), [1.0, 1.0]) == 0.0


def test_csv_round_trip():
    space = circle_space(5)
    traj = evolve(space, LINEAR, np.arange(1.0, 6.0), 0.1, 3)
    text = traj.to_csv()
    assert text.splitlines()[0] == "t,x0,x1,x2,x3,x4"
    times, values = read_trajectory_csv(text)
    np.testing.assert_array_equal(times, traj.times)
    np.testing.assert_array_equal(values, traj.rho)
