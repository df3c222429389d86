from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp

from ucplab.fields import CoefficientSet
from ucplab.geometry import HalfBall
from ucplab.solver import (
    BoundaryConditions,
    CompatibilityError,
    Mesh,
    SolverError,
    assemble,
    boundary_flux,
    build_mesh,
    interpolate,
    solve_system,
    weak_residual,
)

EXACT = "exp(y)*cos(x)"


def two_triangles():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    t = np.array([[0, 1, 2], [0, 2, 3]])
    e = np.array([[0, 1], [1, 2], [2, 3], [3, 0]])
    tags = np.array(["flat", "arc", "arc", "arc"], dtype=object)
    return Mesh(v, t, e, tags, h=1.0)


def cotangent_stiffness(mesh):
    n = mesh.n_vertices
    rows, cols, vals = [], [], []
    for tri in mesh.triangles:
        for k in range(3):
            i, j, o = tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]
            a, b = mesh.vertices[i] - mesh.vertices[o], mesh.vertices[j] - mesh.vertices[o]
            w = 0.5 * np.dot(a, b) / abs(a[0] * b[1] - a[1] * b[0])
            rows += [i, j, i, j]
            cols += [j, i, i, j]
            vals += [-w, -w, w, w]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n)).toarray()


def test_stiffness_two_triangles():
    K = assemble(CoefficientSet.laplace(), two_triangles()).matrix.toarray()
    ref = np.array([[1, -0.5, 0, -0.5], [-0.5, 1, -0.5, 0], [0, -0.5, 1, -0.5], [-0.5, 0, -0.5, 1]])
    np.testing.assert_allclose(K, ref, atol=1e-14)


def test_stiffness_matches_cotangent_formula(half_mesh_coarse):
    K = assemble(CoefficientSet.laplace(), half_mesh_coarse).matrix.toarray()
    np.testing.assert_allclose(K, cotangent_stiffness(half_mesh_coarse), atol=1e-12)


def test_robin_term_is_negative_boundary_mass():
    mesh = two_triangles()
    sysm = assemble(CoefficientSet.laplace(eta="-1"), mesh, BoundaryConditions(robin=("flat",)))
    R = sysm.parts["robin"].toarray()
    # consistent edge mass on [0, 1]: [[1/3, 1/6], [1/6, 1/3]]
    np.testing.assert_allclose(R[:2, :2], -np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]]), atol=1e-14)
    np.testing.assert_allclose(R.sum(axis=1), [-0.5, -0.5, 0.0, 0.0], atol=1e-14)
    assert np.count_nonzero(R[2:]) == 0


def test_recovers_linear_solution(half_mesh_coarse):
    bc = BoundaryConditions(dirichlet={"arc": "x"}, neumann={"flat": "0"})
    u = solve_system(assemble(CoefficientSet.laplace(), half_mesh_coarse, bc))
    assert u.l2_error(lambda p: p[:, 0]) < 1e-10
    assert u.residual <= 1e-10


def robin_error(h):
    mesh = build_mesh(HalfBall(1.0), h)
    sysm = assemble(CoefficientSet.laplace(eta="-1"), mesh, BoundaryConditions.robin_dirichlet(EXACT))
    u = solve_system(sysm)
    return u, sysm


def test_robin_convergence_order():
    errs = []
    for h in (0.1, 0.05, 0.025):
        u, _ = robin_error(h)
        errs.append(u.l2_error(lambda p: np.exp(p[:, 1]) * np.cos(p[:, 0])))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.8), orders


def test_galerkin_orthogonality():
    u, sysm = robin_error(0.05)
    assert np.max(np.abs(weak_residual(u.values, sysm))) < 1e-10


def test_mean_zero_neumann(half_mesh_fine):
    bc = BoundaryConditions(neumann={"arc": "cos(theta)", "flat": "0"})
    sysm = assemble(CoefficientSet.laplace(), half_mesh_fine, bc, mean_zero=True)
    u = solve_system(sysm)
    assert abs(u.mean()) < 1e-10
    assert u.residual <= 1e-10
    again = solve_system(sysm, method="gmres")
    np.testing.assert_allclose(again.values, u.values, atol=1e-9)


def test_mean_zero_rejects_incompatible_data(half_mesh_coarse):
    bc = BoundaryConditions(neumann={"arc": "1"})
    with pytest.raises(CompatibilityError, match="compatibility"):
        assemble(CoefficientSet.laplace(), half_mesh_coarse, bc, mean_zero=True)
    with pytest.raises(CompatibilityError):
        assemble(CoefficientSet.laplace(), half_mesh_coarse, BoundaryConditions(dirichlet={"arc": "0"}),
                 mean_zero=True)


def test_singular_without_constraint(half_mesh_coarse):
    with pytest.raises(SolverError):
        solve_system(assemble(CoefficientSet.laplace(), half_mesh_coarse))


def test_flux_of_linear_field(half_mesh_coarse):
    u = interpolate(half_mesh_coarse, "x")
    ev = boundary_flux(u, CoefficientSet.laplace(), "flat")
    np.testing.assert_allclose(ev.values, 0.0, atol=1e-13)
    np.testing.assert_allclose(ev.normals, [[0.0, -1.0]] * len(ev.values))


def test_flux_of_robin_solution():
    fluxes = []
    for h in (0.1, 0.05):
        mesh = build_mesh(HalfBall(1.0), h)
        ev = boundary_flux(interpolate(mesh, EXACT), CoefficientSet.laplace(), "flat")
        fluxes.append(np.max(np.abs(ev.values + np.cos(ev.midpoints[:, 0]))))
    assert fluxes[1] < 0.6 * fluxes[0] and fluxes[1] < 0.05


def test_flux_of_constant_with_drift(half_mesh_coarse):
    c = CoefficientSet.from_expressions(b=["0", "1"])
    ev = boundary_flux(interpolate(half_mesh_coarse, "1"), c, "flat")
    np.testing.assert_allclose(ev.values, -1.0, atol=1e-14)


def test_missing_tag(half_mesh_coarse):
    with pytest.raises(ValueError):
        boundary_flux(interpolate(half_mesh_coarse, "x"), CoefficientSet.laplace(), "outer")


def test_singular_robin_potential_stays_bounded():
    c = CoefficientSet.from_expressions(eta="-(x^2)^(-0.15)", integrability=(np.inf, np.inf, 3.0))
    sups = []
    for h in (0.1, 0.05):
        mesh = build_mesh(HalfBall(1.0), h, grading=2.0)
        sysm = assemble(c, mesh, BoundaryConditions.robin_dirichlet("1"), quad_order=5, boundary_gauss=4)
        u = solve_system(sysm)
        sups.append(np.max(np.abs(u.values)))
    assert abs(sups[1] - sups[0]) < 0.1 * sups[0]


def test_solution_csv(half_mesh_coarse):
    text = interpolate(half_mesh_coarse, "x").to_csv().splitlines()
    assert text[0] == "vertex_index,x,y,value"
    assert len(text) == half_mesh_coarse.n_vertices + 1


def test_evaluation_and_gradient(half_mesh_coarse, rng):
    u = interpolate(half_mesh_coarse, "2*x - 3*y + 1")
    np.testing.assert_allclose(u(half_mesh_coarse.vertices), u.values, atol=1e-13)
    p = np.abs(rng.uniform(-0.5, 0.5, size=(20, 2)))
    np.testing.assert_allclose(u(p), 2 * p[:, 0] - 3 * p[:, 1] + 1, atol=1e-13)
    np.testing.assert_allclose(u.gradient(p), [[2.0, -3.0]] * 20, atol=1e-12)
