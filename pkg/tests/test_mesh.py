from __future__ import annotations

import numpy as np
import pytest

from ucplab.geometry import FullBall, GraphDomain, HalfBall
from ucplab.mesh import MeshError, build_mesh, load_mesh, mirror_mesh, save_mesh


def check_invariants(mesh):
    assert np.all(mesh.signed_areas() > 0)
    assert mesh.min_angle() >= 20.0
    # conforming: every interior edge is shared by exactly two triangles
    e = np.sort(mesh.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    assert set(counts.tolist()) <= {1, 2}
    assert (counts == 1).sum() == len(mesh.boundary_edges)


def test_half_disk_structure():
    mesh = build_mesh(HalfBall(1.0), 0.2)
    check_invariants(mesh)
    flat = mesh.boundary_vertices("flat")
    assert np.all(mesh.vertices[flat, 1] == 0.0)
    arc = mesh.boundary_vertices("arc")
    np.testing.assert_allclose(np.linalg.norm(mesh.vertices[arc], axis=1), 1.0, atol=1e-14)


def test_full_disk_is_mirror_symmetric():
    mesh = build_mesh(FullBall(1.0), 0.1)
    check_invariants(mesh)
    v = mesh.vertices
    np.testing.assert_array_equal(v[mesh.mirror], v * [1.0, -1.0])
    np.testing.assert_array_equal(mesh.mirror[mesh.mirror], np.arange(len(v)))


def test_graph_domain_boundary():
    g = GraphDomain("0.1*x^2")
    mesh = build_mesh(g, 0.1)
    check_invariants(mesh)
    flat = mesh.boundary_vertices("flat")
    x, y = mesh.vertices[flat].T
    assert np.max(np.abs(y - 0.1 * x**2)) < 1e-12


def test_grading_refines_origin():
    plain = build_mesh(HalfBall(1.0), 0.1)
    graded = build_mesh(HalfBall(1.0), 0.1, grading=2.0)
    check_invariants(graded)
    near = lambda m: np.sum(np.linalg.norm(m.vertices, axis=1) < 0.1)
    assert near(graded) > 3 * near(plain)


def test_breaks_become_vertices():
    mesh = build_mesh(HalfBall(2.0), 0.1, breaks=(1.0,))
    flat_x = mesh.vertices[mesh.boundary_vertices("flat"), 0]
    assert np.any(flat_x == 1.0) and np.any(flat_x == -1.0)


@pytest.mark.parametrize("h, grading", [(0.0, None), (-1.0, None), (0.9, None), (0.1, 4.0)])
def test_rejects_bad_sizes(h, grading):
    with pytest.raises(MeshError):
        build_mesh(HalfBall(1.0), h, grading=grading)


def test_mirror_of_half_mesh(half_mesh_coarse):
    full = mirror_mesh(half_mesh_coarse)
    n = half_mesh_coarse.n_vertices
    np.testing.assert_array_equal(full.vertices[:n], half_mesh_coarse.vertices)
    check_invariants(full)
    assert np.isclose(full.areas.sum(), 2 * half_mesh_coarse.areas.sum())


def test_locate_reproduces_linear_functions(half_mesh_coarse, rng):
    pts = rng.uniform(-0.6, 0.6, size=(200, 2))
    pts[:, 1] = np.abs(pts[:, 1])
    tri, lam = half_mesh_coarse.locate(pts)
    rec = np.einsum("ij,ija->ia", lam, half_mesh_coarse.vertices[half_mesh_coarse.triangles[tri]])
    np.testing.assert_allclose(rec, pts, atol=1e-13)


def test_text_round_trip(tmp_path, half_mesh_coarse):
    path = tmp_path / "m.txt"
    save_mesh(half_mesh_coarse, path)
    back = load_mesh(path)
    np.testing.assert_array_equal(back.vertices, half_mesh_coarse.vertices)
    np.testing.assert_array_equal(back.triangles, half_mesh_coarse.triangles)
    assert list(back.edge_tags) == list(half_mesh_coarse.edge_tags)
    text = path.read_text().splitlines()
    assert any(line.startswith("v ") for line in text)
    assert any(line.startswith("e ") and line.endswith("flat") for line in text)
