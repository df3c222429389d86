from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ucplab.geometry import (
    GeometryError,
    GraphDomain,
    HalfBall,
    LinearChange,
    flatten_map,
    normalizing_map,
    random_spd,
    theta_matrix,
)


def spd(draw_vals):
    a, b, c = draw_vals
    L = np.array([[a, 0.0], [b, c]])
    return L @ L.T + 0.1 * np.eye(2)


spd_strategy = st.tuples(
    st.floats(0.3, 2.0), st.floats(-1.5, 1.5), st.floats(0.3, 2.0)
).map(spd)


@settings(max_examples=80, deadline=None)
@given(spd_strategy)
def test_normalizing_map_properties(A0):
    L = normalizing_map(A0).matrix
    np.testing.assert_allclose(L @ A0 @ L.T, np.eye(2), atol=1e-10)
    T = theta_matrix(A0)
    assert abs((T @ A0 @ T.T)[0, 1]) < 1e-12
    # last row is a positive multiple of e_d: the half-space is preserved
    assert abs(L[1, 0]) < 1e-12 and L[1, 1] > 0


@pytest.mark.parametrize("dim", [2, 3])
def test_normalizing_map_random(dim):
    rng = np.random.default_rng(7)
    for _ in range(20):
        A0 = random_spd(rng, dim)
        L = normalizing_map(A0).matrix
        np.testing.assert_allclose(L @ A0 @ L.T, np.eye(dim), atol=1e-10)
        np.testing.assert_allclose(L[-1, :-1], 0.0, atol=1e-12)
        assert L[-1, -1] > 0


def test_normalizing_map_examples():
    np.testing.assert_allclose(normalizing_map(np.diag([4.0, 1.0])).matrix, np.diag([0.5, 1.0]), atol=1e-14)
    np.testing.assert_allclose(normalizing_map(np.eye(3)).matrix, np.eye(3), atol=1e-14)
    A0 = np.array([[2.0, 1.0], [1.0, 2.0]])
    L = normalizing_map(A0).matrix
    np.testing.assert_allclose(L @ A0 @ L.T, np.eye(2), atol=1e-12)


@pytest.mark.parametrize("bad", [np.array([[1.0, 2.0], [0.0, 1.0]]), np.diag([1.0, -1.0]), np.ones((2, 3))])
def test_normalizing_map_rejects(bad):
    with pytest.raises(GeometryError):
        normalizing_map(bad)


def test_linear_change_round_trip(rng):
    L = LinearChange(np.array([[2.0, 0.3], [0.0, 0.5]]))
    p = rng.normal(size=(10, 2))
    np.testing.assert_allclose(L.backward(L.forward(p)), p, atol=1e-14)
    np.testing.assert_allclose(L.inverted().forward(p), L.backward(p), atol=1e-14)


def test_half_ball():
    B = HalfBall(2.0)
    assert B.contains([[0.0, 1.0]])[0]
    assert not B.contains([[0.0, -0.1]])[0]
    assert B.on_flat([[1.0, 0.0]])[0]
    with pytest.raises(GeometryError):
        HalfBall(-1.0)


def test_graph_domain_requires_tangency():
    with pytest.raises(GeometryError):
        GraphDomain("0.1 + x^2")
    with pytest.raises(GeometryError):
        GraphDomain("x")
    g = GraphDomain("0.3*x^2")
    assert g.lipschitz[1] == pytest.approx(0.6)


def test_graph_flattening_sends_graph_to_axis():
    g = GraphDomain("0.3*x^2")
    F = flatten_map(g)
    s = np.linspace(-0.9, 0.9, 11)
    on_graph = np.c_[s, g.graph(s)]
    np.testing.assert_allclose(F.forward(on_graph)[:, 1], 0.0, atol=1e-15)
    pts = np.c_[s * 0.5, g.graph(s * 0.5) + 0.2]
    np.testing.assert_allclose(F.backward(F.forward(pts)), pts, atol=1e-13)


def test_conormal_shear_kills_offdiagonal_on_boundary():
    g = GraphDomain("0.3*x^2")
    A = lambda p: np.broadcast_to(np.array([[2.0, 0.4], [0.4, 1.0]]), (len(p), 2, 2))
    F = flatten_map(g, boundary_coefficients=A)
    s = np.linspace(-0.8, 0.8, 9)
    x = np.c_[s, g.graph(s)]
    J = F.jacobian(x)
    At = J @ A(x) @ np.transpose(J, (0, 2, 1))
    np.testing.assert_allclose(At[:, 0, 1], 0.0, atol=1e-12)
    pts = np.c_[s * 0.5, g.graph(s * 0.5) + 0.05]
    np.testing.assert_allclose(F.backward(F.forward(pts)), pts, atol=1e-12)


def test_flattening_jacobian_matches_finite_difference():
    g = GraphDomain("0.3*x^2")
    A = lambda p: np.broadcast_to(np.array([[2.0, 0.4], [0.4, 1.0]]), (len(p), 2, 2))
    F = flatten_map(g, boundary_coefficients=A)
    p = np.array([[0.2, 0.15], [-0.4, 0.3]])
    eps = 1e-6
    fd = np.stack([(F.forward(p + eps * e) - F.forward(p - eps * e)) / (2 * eps) for e in np.eye(2)], axis=2)
    np.testing.assert_allclose(F.jacobian(p), fd, atol=1e-6)
