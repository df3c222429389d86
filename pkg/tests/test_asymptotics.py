from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ucplab.asymptotics import (
    BlowupError,
    InconsistentDegreeError,
    boundary_zero_set,
    box_count_dimension,
    fit_homogeneous,
    neumann_harmonic_basis,
    rescale_blowup,
    tangent_set,
)
from ucplab.fields import AnalyticField
from ucplab.geometry import normalizing_map

TWO_MODE = "x^2 - y^2 + r^3*cos(3*theta)"


def field(expr, dim=2):
    return AnalyticField(expr, dim=dim)


def span_residual(poly, target, dim=2):
    rng = np.random.default_rng(0)
    p = rng.uniform(-1, 1, size=(50, dim))
    a, b = poly(p), target(p)
    c = np.dot(a, b) / np.dot(b, b)
    return np.linalg.norm(a - c * b) / np.linalg.norm(a)


@pytest.mark.parametrize("m, target", [
    (0, lambda p: np.ones(len(p))),
    (1, lambda p: p[:, 0]),
    (2, lambda p: p[:, 0] ** 2 - p[:, 1] ** 2),
])
def test_basis_identity(m, target):
    basis = neumann_harmonic_basis(np.eye(2), 2, m)
    assert len(basis) == 1
    assert span_residual(basis[0], target) < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 5), st.floats(0.5, 2.0), st.floats(-0.5, 0.5))
def test_basis_is_neumann_harmonic_after_normalization(m, a11, a12):
    A0 = np.array([[a11, a12], [a12, 1.0]])
    for P in neumann_harmonic_basis(A0, 2, m):
        x = np.array([[0.3, 0.0], [-0.2, 0.0], [0.1, 0.0]])
        # conormal derivative A0∇P·e_d vanishes on the flat boundary
        np.testing.assert_allclose((P.gradient(x) @ A0)[:, 1], 0.0, atol=1e-10)
        # homogeneity of degree m
        y = np.array([[0.3, 0.2]])
        np.testing.assert_allclose(P(2 * y), 2.0**m * P(y), rtol=1e-10, atol=1e-12)


def test_basis_three_dimensions():
    basis = neumann_harmonic_basis(np.eye(3), 3, 2)
    # degree-2 harmonic polynomials even in x3: x1^2 - x2^2, x1 x2, x1^2 + x2^2 - 2 x3^2
    assert len(basis) == 3
    with pytest.raises(ValueError):
        neumann_harmonic_basis(np.eye(4), 4, 1)


def test_homogeneous_blowup():
    seq = rescale_blowup(field("x^2 - y^2"), [0.4, 0.2, 0.1])
    ref = np.sqrt(6) * (seq.points[:, 0] ** 2 - seq.points[:, 1] ** 2)
    for snap in seq.snapshots:
        np.testing.assert_allclose(snap, ref, atol=1e-10)
    np.testing.assert_allclose([seq.mean_square(k) for k in range(3)], 1.0, rtol=1e-12)


def test_constant_blowup():
    seq = rescale_blowup(field("3"), [0.4, 0.1])
    np.testing.assert_allclose(seq.snapshots, 1.0, rtol=1e-12)


def test_two_mode_distance_decays():
    seq = rescale_blowup(field(TWO_MODE), [0.4, 0.2, 0.1, 0.05])
    ref = np.sqrt(6) * (seq.points[:, 0] ** 2 - seq.points[:, 1] ** 2)
    d = [np.sqrt(np.sum(seq.weights * (s - ref) ** 2) / np.sum(seq.weights)) for s in seq.snapshots]
    ratios = np.array(d[1:]) / np.array(d[:-1])
    assert np.all((ratios > 0.4) & (ratios < 0.6))


def test_blowup_underflow():
    with pytest.raises(BlowupError):
        rescale_blowup(field("exp(-1/r^2)"), [0.01])


def test_fit_homogeneous():
    fit = fit_homogeneous(rescale_blowup(field("x^2 - y^2"), [0.4, 0.2, 0.1]), 2)
    assert np.all(np.array(fit.residuals) < 1e-8)
    fit = fit_homogeneous(rescale_blowup(field(TWO_MODE), [0.4, 0.2, 0.1]), 2)
    ratio = fit.residuals[-1] / fit.residuals[-2]
    assert 0.4 <= ratio <= 0.6


def test_fit_inconsistent_degree():
    seq = rescale_blowup(field("x^2 - y^2"), [0.4, 0.2])
    with pytest.raises(InconsistentDegreeError) as info:
        fit_homogeneous(seq, 1)
    assert info.value.fit.residual == pytest.approx(1.0, abs=1e-6)
    assert fit_homogeneous(seq, 1, strict=False).residual == pytest.approx(1.0, abs=1e-6)


def test_anisotropic_blowup_uses_normalized_coordinates():
    A0 = np.array([[2.0, 0.0], [0.0, 1.0]])
    # x^2 - 2 y^2 is A0-harmonic with zero conormal flux; it maps to a multiple of x^2 - y^2
    seq = rescale_blowup(field("x^2 - 2*y^2"), [0.2, 0.1], A0=A0)
    fit = fit_homogeneous(seq, 2)
    assert fit.residual < 1e-8
    L = normalizing_map(A0)
    assert np.allclose(L.matrix, np.diag([1 / np.sqrt(2), 1.0]))


def test_zero_set_linear():
    zs = boundary_zero_set(field("x"), rho=0.9)
    np.testing.assert_allclose(zs.roots, [0.0], atol=1e-10)
    assert zs.plateaus == [] and abs(zs.dim_estimate) < 0.15


def test_zero_set_odd_root():
    zs = boundary_zero_set(field("r^3*cos(3*theta)"), rho=0.9)
    np.testing.assert_allclose(zs.roots, [0.0], atol=1e-6)
    assert zs.plateaus == []


def test_zero_set_touching_root():
    zs = boundary_zero_set(field("x^2 - y^2"), rho=0.9)
    np.testing.assert_allclose(zs.roots, [0.0], atol=1e-6)


def test_zero_set_plateau():
    # identically zero on [-0.3, 0.9): a plateau, not a finite root list
    u = lambda p: np.minimum(np.atleast_2d(p)[:, 0] + 0.3, 0.0)
    zs = boundary_zero_set(u, rho=0.9)
    assert len(zs.plateaus) == 1
    lo, hi = zs.plateaus[0]
    assert abs(lo + 0.3) < 1e-2 and hi > 0.85


def test_zero_set_empty_and_resolution():
    zs = boundary_zero_set(field("1 + x^2"), rho=0.9)
    assert len(zs.roots) == 0 and zs.dim_estimate == float("-inf")
    with pytest.raises(ValueError):
        boundary_zero_set(field("x"), rho=0.9, resolution=2.0)


@pytest.mark.parametrize("expr, dim_ref", [("x1*x2", 1.0), ("x1", 1.0), ("x1^2 + x2^2 - 2*x3^2", 0.0),
                                           ("x1 - 0.3", 1.0)])
def test_box_counting_three_dimensions(expr, dim_ref):
    zs = boundary_zero_set(field(expr, 3), rho=0.9, dim=3)
    assert abs(box_count_dimension(zs) - dim_ref) < 0.15


def test_cross_cells_trace_axes():
    zs = boundary_zero_set(field("x1*x2", 3), rho=0.9, dim=3)
    cells = zs.cells[float(zs.scales[-1])]
    assert np.all(np.min(np.abs(cells), axis=1) <= zs.scales[-1])


def test_tangent_set_at_simple_root():
    u = field("x")
    zs = boundary_zero_set(u, rho=0.9)
    ts = tangent_set(zs, [0.0, 0.0], [0.4, 0.2, 0.1], u)
    assert ts.homogeneous
    np.testing.assert_allclose(ts.zero_set.roots, [0.0], atol=1e-8)


def test_tangent_set_line_in_three_dimensions():
    u = field("x1*x2", 3)
    zs = boundary_zero_set(u, rho=0.9, dim=3)
    ts = tangent_set(zs, [0.3, 0.0, 0.0], [0.4, 0.2, 0.1, 0.05], u)
    assert ts.homogeneous
    assert abs(ts.zero_set.dim_estimate - 1.0) < 0.15
    cells = ts.zero_set.cells[float(ts.zero_set.scales[-1])]
    assert np.all(np.abs(cells[:, 1]) <= ts.zero_set.scales[-1])


def test_tangent_set_rejects_nonzero():
    u = field("1 + x")
    with pytest.raises(ValueError, match="not a detected zero"):
        tangent_set(boundary_zero_set(u), [0.0, 0.0], [0.2], u)
    u = field("x")
    with pytest.raises(ValueError, match="leave"):
        tangent_set(boundary_zero_set(u), [0.0, 0.0], [1.5], u)
