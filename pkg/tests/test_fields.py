from __future__ import annotations

import numpy as np
import pytest

from ucplab.fields import (
    AnalyticField,
    CoefficientSet,
    FieldError,
    IntegrabilityError,
    extend_eta,
    oscillation_modulus,
    pushforward_coefficients,
    reflect_coefficients,
)
from ucplab.geometry import GraphDomain, HalfBall, LinearChange, flatten_map, normalizing_map
from ucplab.mesh import build_mesh
from ucplab.quadrature import triangle_rule


def test_integrability_conditions():
    with pytest.raises(IntegrabilityError, match="s > d-1"):
        CoefficientSet.laplace(integrability=(np.inf, np.inf, 1.0))
    with pytest.raises(IntegrabilityError, match="p > d"):
        CoefficientSet.laplace(integrability=(2.0, np.inf, np.inf))
    with pytest.raises(IntegrabilityError, match="q > d/2"):
        CoefficientSet.laplace(integrability=(np.inf, 1.0, np.inf))
    CoefficientSet.laplace(integrability=(2.5, 1.1, 1.01))


def test_ellipticity_check():
    c = CoefficientSet.from_expressions(A=["3", "0", "1"], ellipticity=(0.5, 2.0))
    with pytest.raises(FieldError):
        c.check(np.array([[0.1, 0.1]]))


def test_analytic_field_values():
    assert AnalyticField("x^2 - y^2")(np.array([[1.0, 0.0]]))[0] == 1.0
    np.testing.assert_allclose(AnalyticField("r^3*cos(3*theta)")(np.array([[1.0, 0.0]])), 1.0)


def test_extend_eta_zero(half_mesh_coarse):
    et = extend_eta("0", half_mesh_coarse)
    assert et.exterior_value == 0.0 and et.total_integral == 0.0


def test_extend_eta_constant_on_radius_two():
    mesh = build_mesh(HalfBall(2.0), 0.05, breaks=(1.0,))
    et = extend_eta("1", mesh)
    assert et.interior_integral == pytest.approx(2.0, abs=1e-12)
    # polygonal arc: length within O(h^2) of 2π
    assert et.exterior_length == pytest.approx(2 * np.pi + 2, rel=1e-3)
    assert et.exterior_value == pytest.approx(-2 / (2 * np.pi + 2), rel=1e-3)
    assert abs(et.total_integral) < 1e-12
    assert et(np.array([[1.5, 0.0]]))[0] == et.exterior_value
    assert et(np.array([[0.5, 0.0]]))[0] == 1.0


def test_extend_eta_odd_data():
    mesh = build_mesh(HalfBall(2.0), 0.05, breaks=(1.0,))
    et = extend_eta("x", mesh)
    assert abs(et.exterior_value) < 1e-12
    assert abs(et.total_integral) < 1e-12


def test_extend_eta_unit_half_disk(half_mesh_coarse):
    # the arc is the whole of the boundary outside the open unit ball
    et = extend_eta("1", half_mesh_coarse)
    assert et.exterior_value == pytest.approx(-2 / np.pi, rel=1e-2)
    assert abs(et.total_integral) < 1e-12


def test_extend_eta_without_exterior(half_mesh_coarse):
    with pytest.raises(FieldError):
        extend_eta("1", half_mesh_coarse, ball_radius=1.5)
    assert extend_eta("x", half_mesh_coarse, ball_radius=1.5).exterior_value == 0.0


def test_reflection_sign_rules():
    c = CoefficientSet.from_expressions(A=["2 + x*y", "0.3*x + y", "1 + y^2"], b=["1", "1"],
                                        W=["x", "y + 1"], V="5", ellipticity=(0.1, 10.0))
    rc = reflect_coefficients(c)
    up = np.array([[0.2, 0.3], [-0.4, 0.1]])
    down = up * [1.0, -1.0]
    A_up, A_dn = c.A(up), rc.A(down)
    np.testing.assert_allclose(A_dn[:, 0, 0], A_up[:, 0, 0])
    np.testing.assert_allclose(A_dn[:, 1, 1], A_up[:, 1, 1])
    np.testing.assert_allclose(A_dn[:, 0, 1], -A_up[:, 0, 1])
    np.testing.assert_allclose(rc.b(down), [[1.0, -1.0]] * 2)
    np.testing.assert_allclose(rc.W(down), c.W(up) * [1.0, -1.0])
    np.testing.assert_allclose(rc.V(down), 5.0)
    np.testing.assert_allclose(rc.A(up), A_up)


def test_pushforward_identity():
    c = CoefficientSet.from_expressions(A=["2", "0.1", "1"], b=["x", "0"], V="y")
    pc = pushforward_coefficients(c, LinearChange(np.eye(2)))
    p = np.array([[0.1, 0.2]])
    np.testing.assert_allclose(pc.A(p), c.A(p))
    np.testing.assert_allclose(pc.b(p), c.b(p))
    np.testing.assert_allclose(pc.V(p), c.V(p))


def test_pushforward_diagonal_scaling():
    # Δu + u = 0 for u = cos x; in y = (x/2, y) the image cos(2 y1) must solve
    # div(Ã∇ũ) + Ṽ ũ = 0, which pins Ã = diag(1/2, 2) and Ṽ = 2
    c = CoefficientSet.from_expressions(V="1")
    pc = pushforward_coefficients(c, LinearChange(np.diag([0.5, 1.0])))
    p = np.array([[0.3, 0.2]])
    np.testing.assert_allclose(pc.A(p)[0], np.diag([0.5, 2.0]), atol=1e-14)
    np.testing.assert_allclose(pc.V(p), 2.0)
    y1 = np.linspace(-1, 1, 7)
    residual = pc.A(p)[0, 0, 0] * (-4 * np.cos(2 * y1)) + pc.V(p)[0] * np.cos(2 * y1)
    np.testing.assert_allclose(residual, 0.0, atol=1e-13)


def test_pushforward_normalizes_leading_part():
    A0 = np.array([[2.0, 0.7], [0.7, 1.5]])
    c = CoefficientSet.from_expressions(A=["2", "0.7", "1.5"], ellipticity=(0.1, 10.0))
    pc = pushforward_coefficients(c, normalizing_map(A0))
    At = pc.A(np.zeros((1, 2)))[0]
    np.testing.assert_allclose(At / At[0, 0], np.eye(2), atol=1e-12)


def _integrate(mesh, f):
    bary, w = triangle_rule(5)
    X = np.einsum("qk,mka->mqa", bary, mesh.vertices[mesh.triangles])
    vals = f(X.reshape(-1, 2)).reshape(X.shape[:2])
    return float(np.sum(np.einsum("q,mq->m", w, vals) * mesh.areas))


def test_pushforward_preserves_weak_form():
    # ∫ A∇u·∇φ + V u φ over the graph domain equals the same form in flattened coordinates
    g = GraphDomain("0.3*x^2")
    c = CoefficientSet.from_expressions(A=["2 + x", "0.3", "1 + y"], V="1 + x*y", ellipticity=(0.1, 10.0))
    F = flatten_map(g, boundary_coefficients=c.A)
    mesh = build_mesh(g, 0.03)
    u = lambda p: np.sin(p[:, 0]) + p[:, 1] ** 2
    du = lambda p: np.c_[np.cos(p[:, 0]), 2 * p[:, 1]]
    phi = lambda p: np.exp(0.5 * p[:, 0]) * (1 + p[:, 1])
    dphi = lambda p: np.c_[0.5 * np.exp(0.5 * p[:, 0]) * (1 + p[:, 1]), np.exp(0.5 * p[:, 0])]

    def physical(p):
        return np.einsum("ni,nij,nj->n", dphi(p), c.A(p), du(p)) + c.V(p) * u(p) * phi(p)

    pc = pushforward_coefficients(c, F)

    def mapped(y):
        x = F.backward(y)
        Jinv_t = np.linalg.inv(F.jacobian(x)).transpose(0, 2, 1)
        gu = np.einsum("nij,nj->ni", Jinv_t, du(x))
        gp = np.einsum("nij,nj->ni", Jinv_t, dphi(x))
        return np.einsum("ni,nij,nj->n", gp, pc.A(y), gu) + pc.V(y) * u(x) * phi(x)

    image = mesh.__class__(F.forward(mesh.vertices), mesh.triangles, mesh.boundary_edges,
                           mesh.edge_tags, h=mesh.h)
    lhs, rhs = _integrate(mesh, physical), _integrate(image, mapped)
    assert abs(lhs - rhs) < 1e-3 * abs(lhs)


def test_oscillation_modulus():
    I = lambda p: np.broadcast_to(np.eye(2), (len(p), 2, 2))
    om = oscillation_modulus(I, np.eye(2), [0.1, 0.2])
    np.testing.assert_allclose(om.values, 0.0)
    M = np.array([[1.0, 0.5], [0.5, -1.0]])
    lin = lambda p: np.eye(2) + np.linalg.norm(p, axis=1)[:, None, None] * M
    om = oscillation_modulus(lin, np.eye(2), [0.01, 0.02, 0.04])
    # ⨍ r² over a half-disk of radius ρ is ρ²/2
    np.testing.assert_allclose(om.values, np.sum(M * M) * om.radii**2 / 2, rtol=1e-10)
    jump = lambda p: np.eye(2) + 0.1 * np.sign(p[:, 0])[:, None, None] * np.diag([1.0, 0.0])
    om = oscillation_modulus(jump, np.eye(2), [0.001, 0.01, 0.1])
    assert np.all(om.values > 0.009)
