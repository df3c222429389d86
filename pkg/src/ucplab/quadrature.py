"""Quadrature rules: triangle and edge rules for assembly, polar rules on half-balls."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

# Barycentric points and weights (weights sum to 1; multiply by area).
TRIANGLE_RULES = {
    1: (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])),
    2: (
        np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
        np.array([1 / 3, 1 / 3, 1 / 3]),
    ),
}


def _dunavant5():
    a1, b1 = 0.059715871789770, 0.470142064105115
    a2, b2 = 0.797426985353087, 0.101286507323456
    w0, w1, w2 = 0.225, 0.132394152788506, 0.125939180544827
    pts = [[1 / 3, 1 / 3, 1 / 3]]
    wts = [w0]
    for a, b, w in ((a1, b1, w1), (a2, b2, w2)):
        pts += [[a, b, b], [b, a, b], [b, b, a]]
        wts += [w, w, w]
    return np.array(pts), np.array(wts)


TRIANGLE_RULES[5] = _dunavant5()


def triangle_rule(order: int):
    """Barycentric rule exact for polynomials of the given degree (1, 2 or 5)."""
    if order <= 1:
        return TRIANGLE_RULES[1]
    if order == 2:
        return TRIANGLE_RULES[2]
    return TRIANGLE_RULES[5]


@lru_cache(maxsize=None)
def gauss_legendre(n: int, a: float = 0.0, b: float = 1.0):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


def edge_rule(n: int):
    """Gauss points as the parameter ``s ∈ [0, 1]`` along an edge; weights sum to 1."""
    return gauss_legendre(n, 0.0, 1.0)


def composite_gauss(a: float, b: float, n: int, panels: int):
    edges = np.linspace(a, b, panels + 1)
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        x, w = gauss_legendre(n, float(lo), float(hi))
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def half_ball_rule(r: float, dim: int = 2, n_radial: int = 16, radial_panels: int = 1,
                   n_angular: int = 64, angular_panels: int = 1, inner: float = 0.0):
    """Polar composite Gauss rule on ``{inner < |x| < r, x_d > 0}``.

    Returns ``(points, weights)`` with weights summing to the region volume.
    In d=3 the azimuth uses the periodic trapezoid rule with ``2 * n_angular``
    nodes and the polar angle (measured from ``e_3``) Gauss on ``[0, π/2]``.
    """
    rho, wr = composite_gauss(inner, r, n_radial, radial_panels)
    if dim == 2:
        th, wt = composite_gauss(0.0, np.pi, n_angular, angular_panels)
        R, T = np.meshgrid(rho, th, indexing="ij")
        W = np.outer(wr * rho, wt)
        pts = np.c_[(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()]
        return pts, W.ravel()
    if dim == 3:
        th, wt = composite_gauss(0.0, np.pi / 2, n_angular // 2, angular_panels)
        nphi = 2 * n_angular
        ph = 2 * np.pi * np.arange(nphi) / nphi
        wp = np.full(nphi, 2 * np.pi / nphi)
        R, T, P = np.meshgrid(rho, th, ph, indexing="ij")
        W = (wr * rho**2)[:, None, None] * (wt * np.sin(th))[None, :, None] * wp[None, None, :]
        st = np.sin(T)
        pts = np.c_[(R * st * np.cos(P)).ravel(), (R * st * np.sin(P)).ravel(), (R * np.cos(T)).ravel()]
        return pts, W.ravel()
    raise ValueError(f"unsupported dimension {dim}")


def half_ball_volume(r: float, dim: int = 2) -> float:
    if dim == 2:
        return 0.5 * np.pi * r * r
    if dim == 3:
        return 2.0 / 3.0 * np.pi * r**3
    raise ValueError(f"unsupported dimension {dim}")
