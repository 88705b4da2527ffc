import math

import numpy as np
import pytest
from scipy import linalg

from curvlab.space import (
    FiniteSpace, as_density, circle_space, complete_space, disjoint_union, energy,
    erdos_renyi_space, format_graph, from_weights, gamma, heat_flow, hopf_lax, is_probability,
    laplacian, make_space, mass, normalize, parse_graph, path_space, read_graph, slope,
    two_point_space,
)


@pytest.fixture
def s2():
    return two_point_space()


def test_two_point_carre_du_champ(s2):
    np.testing.assert_allclose(gamma(s2, [0, 1]), [0.5, 0.5])
    assert energy(s2, [0, 1]) == pytest.approx(1.0)
    np.testing.assert_allclose(gamma(s2, [0, 1], [0, -1]), [-0.5, -0.5])


def test_two_point_laplacian(s2):
    np.testing.assert_allclose(laplacian(s2, [0, 1]), [1.0, -1.0])


def test_constant_fields_have_no_gradient():
    space = erdos_renyi_space(9, 0.4, seed=2)
    g = np.random.default_rng(0).standard_normal(9)
    np.testing.assert_array_equal(gamma(space, np.full(9, 3.0), g), 0.0)
    np.testing.assert_allclose(laplacian(space, np.full(9, 3.0)), 0.0, atol=1e-14)


def test_laplacian_is_mass_preserving_and_dual_to_energy():
    space = erdos_renyi_space(15, 0.3, seed=5)
    rng = np.random.default_rng(1)
    f, g = rng.standard_normal(15), rng.standard_normal(15)
    Df = laplacian(space, f)
    assert abs(Df @ space.m) < 1e-12
    assert -np.dot(Df * g, space.m) == pytest.approx(energy(space, f, g), abs=1e-12)
    assert np.dot(gamma(space, f, g), space.m) == pytest.approx(energy(space, f, g), abs=1e-12)


def test_grid_laplacian_is_second_difference():
    space = circle_space(16)
    f = np.sin(2 * np.pi * space.coords)
    h = 1 / 16
    expected = (np.roll(f, -1) - 2 * f + np.roll(f, 1)) / h**2
    np.testing.assert_allclose(laplacian(space, f), expected, rtol=1e-12, atol=1e-9)
    path = path_space(10)
    g = path.coords**2
    inner = laplacian(path, g)[1:-1]
    np.testing.assert_allclose(inner, 2.0, rtol=1e-9)


def test_heat_flow_two_point(s2):
    for t in (0.0, 0.3, 2.0):
        expected = [0.5 * (1 + math.exp(-2 * t)), 0.5 * (1 - math.exp(-2 * t))]
        np.testing.assert_allclose(heat_flow(s2, [1, 0], t), expected, rtol=1e-13)


def test_heat_flow_matches_matrix_exponential():
    space = erdos_renyi_space(12, 0.4, seed=3)
    f = np.random.default_rng(4).standard_normal(12)
    expected = linalg.expm(0.7 * space.laplacian_matrix) @ f
    np.testing.assert_allclose(heat_flow(space, f, 0.7), expected, atol=1e-12)


def test_heat_flow_large_space_uses_implicit_steps():
    space = path_space(600)
    f = np.cos(3 * np.pi * space.coords)
    expected = linalg.expm(0.01 * space.laplacian_matrix) @ f
    np.testing.assert_allclose(heat_flow(space, f, 0.01), expected, atol=1e-6)


def test_heat_flow_preserves_constants_and_contracts():
    space = erdos_renyi_space(10, 0.5, seed=8)
    np.testing.assert_allclose(heat_flow(space, np.ones(10), 1.3), 1.0, atol=1e-12)
    f = np.random.default_rng(2).standard_normal(10)
    g = heat_flow(space, f, 0.4)
    assert space.inner(g, g) <= space.inner(f, f) + 1e-12


def test_heat_flow_rejects_negative_time(s2):
    with pytest.raises(ValueError):
        heat_flow(s2, [1, 0], -1.0)


def test_hopf_lax_two_point(s2):
    np.testing.assert_allclose(hopf_lax(s2, [0, 1], 1.0), [0.0, 0.5])
    np.testing.assert_allclose(hopf_lax(s2, [2, 2], 0.1), [2.0, 2.0])


def test_hopf_lax_bounds_and_monotonicity():
    space = erdos_renyi_space(10, 0.4, seed=11)
    f = np.random.default_rng(0).standard_normal(10)
    q1, q2 = hopf_lax(space, f, 0.5), hopf_lax(space, f, 1.0)
    assert np.all(q1 >= f.min()) and np.all(q1 <= f.max())
    assert np.all(q2 <= q1)
    np.testing.assert_allclose(hopf_lax(space, f, 1e-6), f)


def test_slopes(s2):
    np.testing.assert_allclose(slope(s2, [0, 1]), [1, 1])
    np.testing.assert_allclose(slope(s2, [0, 1], "descending"), [0, 1])
    with pytest.raises(ValueError):
        slope(s2, [0, 1], "sideways")


def test_density_helpers(s2):
    assert mass(s2, [0.25, 0.75]) == 1.0
    assert is_probability(s2, [0.25, 0.75])
    assert not is_probability(s2, [0.25, 0.8])
    np.testing.assert_allclose(normalize(s2, [1, 3]), [0.25, 0.75])
    with pytest.raises(ValueError):
        as_density(s2, [-1, 2])
    with pytest.raises(ValueError):
        normalize(s2, [0, 0])


@pytest.mark.parametrize("bad", [
    dict(m=[1, -1]),
    dict(d=[[0, 1], [2, 0]]),
    dict(d=[[0, 0], [0, 0]]),
    dict(w=[[0, -1], [-1, 0]]),
    dict(w=[[1, 1], [1, 0]]),
])
def test_invalid_spaces_are_rejected(bad):
    args = dict(m=[1, 1], d=[[0, 1], [1, 0]], w=[[0, 1], [1, 0]])
    args.update(bad)
    with pytest.raises(ValueError):
        FiniteSpace(np.array(args["m"], float), np.array(args["d"], float), np.array(args["w"], float))


def test_triangle_inequality_enforced():
    d = np.array([[0, 1, 5], [1, 0, 1], [5, 1, 0]], float)
    with pytest.raises(ValueError):
        FiniteSpace(np.ones(3), d, np.zeros((3, 3)))


def test_from_weights_fills_shortest_path_metric():
    w = np.zeros((3, 3))
    w[0, 1] = w[1, 0] = 4.0
    w[1, 2] = w[2, 1] = 1.0
    space = from_weights(w)
    assert space.metric_filled
    assert space.d[0, 2] == pytest.approx(0.5 + 1.0)
    np.testing.assert_array_equal(space.d, space.d.T)


def test_random_graphs_are_seeded_and_connected():
    a, b = erdos_renyi_space(20, 0.1, seed=7), erdos_renyi_space(20, 0.1, seed=7)
    np.testing.assert_array_equal(a.w, b.w)
    assert a.connected


def test_disjoint_union_components():
    u = disjoint_union(two_point_space(), complete_space(3))
    assert u.n == 5 and not u.connected
    assert len(set(u.components)) == 2


def test_make_space_registry():
    assert make_space("circle", n=8).n == 8
    assert make_space("s2").n == 2
    with pytest.raises(ValueError):
        make_space("torus")


def test_graph_text_round_trip(tmp_path):
    space = erdos_renyi_space(7, 0.5, seed=1)
    text = format_graph(space)
    back = parse_graph(text)
    np.testing.assert_allclose(back.m, space.m, rtol=0, atol=0)
    np.testing.assert_allclose(back.w, space.w, rtol=0, atol=0)
    np.testing.assert_allclose(back.d, space.d, rtol=0, atol=0)
    p = tmp_path / "g.txt"
    p.write_text(text)
    assert read_graph(p).n == 7


def test_grid_spacing():
    assert circle_space(10).spacing == pytest.approx(0.1)
    with pytest.raises(ValueError):
        _ = complete_space(3).spacing
