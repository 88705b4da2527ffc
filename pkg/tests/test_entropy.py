import math

import numpy as np
import pytest

from curvlab.entropy import (
    EntropyModel, green_weight, make_entropy, mccann_check, regularize_pressure, sigma_coeff,
    sigma_concavity_check, sigma_fd_residual, weighted_convexity_check,
)
from curvlab.space import two_point_space

R = np.linspace(0.01, 5.0, 200)


def test_power_model_values():
    model = make_entropy("power", N=2)
    assert float(model.U(4.0)) == pytest.approx(4.0)
    assert float(model.P(4.0)) == pytest.approx(2.0)


def test_linear_model_identities():
    model = make_entropy("linear")
    np.testing.assert_allclose(model.P(R), R)
    np.testing.assert_allclose(model.R(R), 0.0, atol=1e-15)
    np.testing.assert_allclose(model.U(R), R * np.log(R), rtol=1e-12)
    assert model.regular


@pytest.mark.parametrize("model", [
    make_entropy("power", N=3),
    make_entropy("regularized", N=2, eps=0.05, M=20),
    make_entropy("linear"),
])
def test_pressure_is_r_u_prime_minus_u(model):
    h = 1e-5
    r = np.linspace(0.2, 4.0, 30)
    du = (model.U(r + h) - model.U(r - h)) / (2 * h)
    np.testing.assert_allclose(r * du - model.U(r), model.P(r), rtol=1e-7, atol=1e-8)


def test_q_and_r_definitions():
    model = make_entropy("power", N=3)
    np.testing.assert_allclose(model.Q(R), model.P(R) / R)
    np.testing.assert_allclose(model.R(R), R * model.dP(R) - model.P(R), atol=1e-14)


def test_pressure_inverse_round_trip():
    for model in (make_entropy("power", N=2), make_entropy("regularized", N=2, eps=0.01, M=100)):
        np.testing.assert_allclose(model.P_inv(model.P(R)), R, rtol=1e-11)


def test_custom_model_matches_closed_form():
    custom = make_entropy("custom", P=lambda r: r**0.5, dP=lambda r: 0.5 * r**-0.5)
    power = make_entropy("power", N=2)
    r = np.array([0.3, 1.0, 4.0])
    np.testing.assert_allclose(custom.P_inv(custom.P(r)), r, rtol=1e-10)
    np.testing.assert_allclose(custom.U(r), power.U(r), rtol=1e-8)


def test_regularized_identity():
    N, eps = 2.0, 0.01
    model = make_entropy("regularized", N=N, eps=eps, M=math.inf)
    r = np.linspace(0, 10, 101)
    rhs = -model.P(r) / N + eps * (model.dP(0.0) - model.dP(r))
    np.testing.assert_allclose(model.R(r), rhs, atol=1e-12)


def test_regularized_entropy_second_derivative():
    model = make_entropy("power", N=2)
    assert float(model.U_eps(0.0, 0.01)) == 0.0
    h = 1e-3
    r = np.array([0.3, 1.0, 2.5])
    U = lambda x: model.U_eps(x, 0.01)  # noqa: E731
    second = (U(r + h) - 2 * U(r) + U(r - h)) / h**2
    np.testing.assert_allclose(second, model.dP(r) / (r + 0.01), rtol=1e-5)


def test_regularization_bounds_derivative():
    model = regularize_pressure(make_entropy("power", N=2), eps=0.01, M=100)
    lo, hi = model.derivative_range()
    assert 0 < lo <= hi < math.inf
    assert model.regular
    assert not make_entropy("power", N=2).regular
    assert regularize_pressure(make_entropy("linear"), 0.1) == make_entropy("linear")
    with pytest.raises(ValueError):
        regularize_pressure(make_entropy("power", N=2), eps=1.0, M=0.5)


def test_mccann_check_examples():
    assert mccann_check(make_entropy("linear"), 3.0, R).holds
    power = make_entropy("power", N=2)
    rep = mccann_check(power, 3.0, [1.0])
    assert not rep.holds and rep.margin == pytest.approx(-1 / 6)
    # R + P / 1.5 = sqrt(r) (1/1.5 - 1/2) > 0, so N = 1.5 passes for the power-2 model
    rep = mccann_check(power, 1.5, [1.0])
    assert rep.holds and rep.margin == pytest.approx(1 / 6)


def test_entropy_functional():
    space = two_point_space()
    model = make_entropy("power", N=2)
    assert model.entropy(space, [4.0, 0.0]) == pytest.approx(4.0)


def test_record_is_serializable():
    rec = make_entropy("regularized", N=2, eps=0.01, M=100).record()
    assert rec["family"] == "regularized" and rec["N"] == 2 and rec["a"] > 0


def test_unknown_family():
    with pytest.raises(ValueError):
        make_entropy("cubic")


def test_sigma_coefficient_values():
    assert sigma_coeff(0.0, 0.3, 1.0).value == pytest.approx(0.3)
    assert sigma_coeff(1.0, 0.5, 1.0).value == pytest.approx(math.sin(0.5) / math.sin(1.0))
    assert sigma_coeff(-1.0, 0.5, 1.0).value == pytest.approx(math.sinh(0.5) / math.sinh(1.0))
    assert sigma_coeff(1.0, 0.5, math.pi).infinite
    assert sigma_coeff(1.0, 0.5, 4.0).value == math.inf


def test_sigma_fd_residual_is_fourth_order():
    hs = np.array([1e-2, 5e-3, 2.5e-3])
    res = [sigma_fd_residual(2.0, 1.0, h) for h in hs]
    slope = np.polyfit(np.log(hs), np.log(res), 1)[0]
    assert slope >= 3.5


def test_green_weight():
    assert green_weight(0.5, 0.25) == 0.125
    t, s = np.meshgrid(np.linspace(0, 1, 11), np.linspace(0, 1, 11))
    np.testing.assert_allclose(green_weight(t, s), green_weight(s, t))
    assert np.all(green_weight(t, s) >= 0)
    with pytest.raises(ValueError):
        green_weight(1.5, 0.2)


def test_weighted_convexity_equality_for_quadratics():
    r = np.linspace(-1, 1, 21)
    rep = weighted_convexity_check(3 * r**2 - r, np.full_like(r, 6.0), r)
    assert abs(rep.margin) <= 1e-8


def test_weighted_convexity_detects_violation():
    r = np.linspace(0, 1, 21)
    rep = weighted_convexity_check(r**2, np.full_like(r, 3.0), r)
    assert not rep.holds and rep.witness is not None


def test_sigma_concavity():
    r = np.linspace(0, 1, 21)
    kappa = 4.0
    rep = sigma_concavity_check(np.sin(2.0 * r + 0.5), kappa, r)
    assert rep.holds
    assert not sigma_concavity_check(r**2 + 0.1, kappa, r).holds


def test_entropy_model_is_frozen():
    model = EntropyModel("linear")
    with pytest.raises(Exception):
        model.N = 3.0
