"""Domains, the normalizing linear map at a boundary point, and flattening maps."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .expr import Expr, parse_expr

__all__ = [
    "GeometryError",
    "HalfBall",
    "FullBall",
    "GraphDomain",
    "LinearChange",
    "FlatteningMap",
    "theta_matrix",
    "normalizing_map",
    "flatten_map",
    "apply_map",
    "random_spd",
    "smooth_cutoff",
]


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class HalfBall:
    """``{|x| < radius, x_d > 0}``; the flat part of the boundary is Γ."""

    radius: float = 1.0
    dim: int = 2

    def __post_init__(self):
        if not self.radius > 0:
            raise GeometryError(f"radius must be positive, got {self.radius}")
        if self.dim < 2:
            raise GeometryError("dimension must be at least 2")

    def contains(self, pts, tol: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return (np.linalg.norm(pts, axis=1) <= self.radius + tol) & (pts[:, -1] >= -tol)

    def on_flat(self, pts, tol: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return (np.abs(pts[:, -1]) <= tol) & (np.linalg.norm(pts, axis=1) <= self.radius + tol)


@dataclass(frozen=True)
class FullBall:
    radius: float = 1.0
    dim: int = 2

    def __post_init__(self):
        if not self.radius > 0:
            raise GeometryError(f"radius must be positive, got {self.radius}")

    def contains(self, pts, tol: float = 0.0) -> np.ndarray:
        return np.linalg.norm(np.atleast_2d(pts), axis=1) <= self.radius + tol


class GraphDomain:
    """``{x_d > φ(x')} ∩ B_radius`` for a graph with ``φ(0) = 0``, ``∇φ(0) = 0``.

    ``phi`` may be an expression string (in ``x``, and ``y`` for d=3) or an
    :class:`~ucplab.expr.Expr`.  Derivatives are symbolic.
    """

    def __init__(self, phi: str | Expr, radius: float = 1.0, dim: int = 2,
                 lipschitz: tuple[float, float] | None = None, tol: float = 1e-12):
        if dim != 2:
            raise GeometryError("graph domains are implemented for d=2")
        if not radius > 0:
            raise GeometryError(f"radius must be positive, got {radius}")
        self.source = phi if isinstance(phi, str) else phi.to_string()
        self.phi = parse_expr(phi, dim=1) if isinstance(phi, str) else phi
        self.dphi = self.phi.diff("x")
        self.d2phi = self.dphi.diff("x")
        self.radius = float(radius)
        self.dim = dim
        origin = np.zeros((1, 2))
        if abs(self.phi(origin)[0]) > tol or abs(self.dphi(origin)[0]) > tol:
            raise GeometryError(
                "graph must satisfy phi(0) = 0 and phi'(0) = 0 "
                f"(got {self.phi(origin)[0]:.3g}, {self.dphi(origin)[0]:.3g})"
            )
        if lipschitz is None:
            s = np.linspace(-self.radius, self.radius, 2001)[:, None]
            s = np.c_[s, np.zeros_like(s)]
            lipschitz = (float(np.max(np.abs(self.dphi(s)))), float(np.max(np.abs(self.d2phi(s)))))
        self.lipschitz = lipschitz

    def graph(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float).reshape(-1)
        return self.phi(np.c_[s, np.zeros_like(s)])

    def graph_slope(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float).reshape(-1)
        return self.dphi(np.c_[s, np.zeros_like(s)])

    def contains(self, pts, tol: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return (np.linalg.norm(pts, axis=1) <= self.radius + tol) & (
            pts[:, 1] >= self.graph(pts[:, 0]) - tol
        )

    def endpoints(self) -> tuple[float, float]:
        """Abscissae where the graph meets the circle of the extent radius."""
        from scipy.optimize import brentq

        g = lambda s: s * s + self.graph([s])[0] ** 2 - self.radius**2
        return brentq(g, -self.radius, 0.0), brentq(g, 0.0, self.radius)


# ---------------------------------------------------------------------------
# linear normalization


@dataclass(frozen=True)
class LinearChange:
    """``y = matrix @ x``."""

    matrix: np.ndarray
    inverse: np.ndarray = field(default=None)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise GeometryError("linear change needs a square matrix")
        inv = np.linalg.inv(m) if self.inverse is None else np.array(self.inverse, dtype=float)
        if not np.allclose(m @ inv, np.eye(len(m)), atol=1e-12, rtol=0):
            raise GeometryError("inverse does not match matrix")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "inverse", inv)

    @property
    def dim(self) -> int:
        return len(self.matrix)

    def forward(self, pts) -> np.ndarray:
        return np.atleast_2d(pts) @ self.matrix.T

    def backward(self, pts) -> np.ndarray:
        return np.atleast_2d(pts) @ self.inverse.T

    def jacobian(self, pts) -> np.ndarray:
        n = len(np.atleast_2d(pts))
        return np.broadcast_to(self.matrix, (n, self.dim, self.dim)).copy()

    def inverted(self) -> "LinearChange":
        return LinearChange(self.inverse, self.matrix)

    def contains(self, pts) -> np.ndarray:
        return np.ones(len(np.atleast_2d(pts)), dtype=bool)

    contains_image = contains


def _check_spd(A0) -> np.ndarray:
    A0 = np.asarray(A0, dtype=float)
    if A0.ndim != 2 or A0.shape[0] != A0.shape[1]:
        raise GeometryError(f"expected a square matrix, got shape {A0.shape}")
    if not np.allclose(A0, A0.T, atol=1e-12, rtol=1e-12):
        raise GeometryError(f"matrix is not symmetric (max asymmetry {np.max(np.abs(A0 - A0.T)):.3g})")
    ev = np.linalg.eigvalsh(A0)
    if ev[0] <= 1e-14:
        raise GeometryError(f"matrix is not positive definite (smallest eigenvalue {ev[0]:.3g})")
    return A0


def theta_matrix(A0) -> np.ndarray:
    """Shear removing the tangential-normal couplings of ``A0``.

    Identity except for the last column, ``Θ[i, d-1] = -A0[i, d-1] / A0[d-1, d-1]``
    for ``i < d-1``; then ``(Θ A0 Θᵀ)[i, d-1] = 0``.
    """
    A0 = _check_spd(A0)
    d = len(A0)
    T = np.eye(d)
    T[:-1, -1] = -A0[:-1, -1] / A0[-1, -1]
    return T


def _spd_power(S: np.ndarray, p: float) -> np.ndarray:
    S = 0.5 * (S + S.T)
    w, Q = np.linalg.eigh(S)
    if w[0] < 1e-14:
        raise GeometryError(f"matrix square root of a near-singular matrix (eigenvalue {w[0]:.3g})")
    return (Q * w**p) @ Q.T


def normalizing_map(A0) -> LinearChange:
    """Linear map ``Ψ = (Θ A0 Θᵀ)^(-1/2) Θ`` with ``Ψ A0 Ψᵀ = I``.

    ``Θ A0 Θᵀ`` is block diagonal, so ``Ψ`` keeps the last row ``(0, ..., 0, c)``
    with ``c > 0`` and maps the upper half-space onto itself.
    """
    T = theta_matrix(A0)
    S = T @ np.asarray(A0, dtype=float) @ T.T
    S[:-1, -1] = 0.0
    S[-1, :-1] = 0.0
    Psi = _spd_power(S, -0.5) @ T
    Psi[-1, :-1] = 0.0
    return LinearChange(Psi)


def random_spd(rng: np.random.Generator, dim: int, lo: float = 0.5, hi: float = 2.0) -> np.ndarray:
    """SPD matrix with eigenvalues drawn uniformly from ``[lo, hi]``."""
    Q, R = np.linalg.qr(rng.standard_normal((dim, dim)))
    Q = Q * np.sign(np.diag(R))
    w = rng.uniform(lo, hi, size=dim)
    A = (Q * w) @ Q.T
    return 0.5 * (A + A.T)


# ---------------------------------------------------------------------------
# flattening


def smooth_cutoff(t, t0: float, t1: float) -> np.ndarray:
    """C² step: 1 for ``t <= t0``, 0 for ``t >= t1`` (quintic smoothstep)."""
    s = np.clip((np.asarray(t, dtype=float) - t0) / (t1 - t0), 0.0, 1.0)
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


def smooth_cutoff_derivative(t, t0: float, t1: float) -> np.ndarray:
    s = np.clip((np.asarray(t, dtype=float) - t0) / (t1 - t0), 0.0, 1.0)
    return -30.0 * s * s * (1.0 - s) ** 2 / (t1 - t0)


class FlatteningMap:
    """Graph shear followed by an optional conormal shear (d=2).

    Step 1: ``(x, y) -> (x, y - φ(x))``.
    Step 2: ``(s, t) -> (s - t χ(t) c(s), t)`` where ``c`` is the boundary ratio
    ``ã_12 / ã_22`` after step 1 and ``χ`` a C² cutoff in ``t``.  The composite
    Jacobian on ``t = 0`` kills ``ã_12`` there.
    """

    def __init__(self, domain: GraphDomain, shear: Callable | None = None,
                 shear_slope: Callable | None = None, extent: float | None = None):
        self.domain = domain
        self.extent = float(extent if extent is not None else domain.radius)
        self.shear = shear
        self.shear_slope = shear_slope
        self.t0 = 0.1 * self.extent
        self.t1 = 0.5 * self.extent
        self.dim = 2

    @property
    def is_pure_graph_shear(self) -> bool:
        return self.shear is None

    def _c(self, s):
        if self.shear is None:
            return np.zeros_like(s), np.zeros_like(s)
        return np.asarray(self.shear(s), dtype=float), np.asarray(self.shear_slope(s), dtype=float)

    def contains(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.linalg.norm(pts, axis=1) <= self.domain.radius * (1 + 1e-12)

    def contains_image(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.abs(pts[:, 0]) <= 2.0 * self.domain.radius

    def forward(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        s = pts[:, 0]
        t = pts[:, 1] - self.domain.graph(s)
        c, _ = self._c(s)
        chi = smooth_cutoff(t, self.t0, self.t1)
        return np.c_[s - t * chi * c, t]

    def backward(self, pts, tol: float = 1e-14, maxiter: int = 100) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        z, t = pts[:, 0], pts[:, 1]
        s = z.copy()
        if self.shear is not None:
            chi = smooth_cutoff(t, self.t0, self.t1)
            # Newton on s - t χ c(s) = z
            for _ in range(maxiter):
                c, dc = self._c(s)
                g = s - t * chi * c - z
                step = g / (1.0 - t * chi * dc)
                s = s - step
                if np.max(np.abs(step), initial=0.0) < tol:
                    break
            else:
                raise GeometryError("flattening map inverse did not converge")
        return np.c_[s, t + self.domain.graph(s)]

    def jacobian(self, pts) -> np.ndarray:
        """``DΦ`` at physical points ``pts``, shape ``(n, 2, 2)``."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        s = pts[:, 0]
        t = pts[:, 1] - self.domain.graph(s)
        dphi = self.domain.graph_slope(s)
        G = np.zeros((len(pts), 2, 2))
        G[:, 0, 0] = 1.0
        G[:, 1, 0] = -dphi
        G[:, 1, 1] = 1.0
        if self.shear is None:
            return G
        c, dc = self._c(s)
        chi = smooth_cutoff(t, self.t0, self.t1)
        dchi = smooth_cutoff_derivative(t, self.t0, self.t1)
        K = np.zeros_like(G)
        K[:, 0, 0] = 1.0 - t * chi * dc
        K[:, 0, 1] = -(chi + t * dchi) * c
        K[:, 1, 1] = 1.0
        return K @ G


def flatten_map(domain: GraphDomain, boundary_coefficients: Callable | None = None,
                extent: float | None = None) -> FlatteningMap:
    """Build the flattening map for ``domain``.

    ``boundary_coefficients`` maps ``(n, 2)`` physical points to ``(n, 2, 2)``
    matrices; when given, the conormal shear is added so that the pushed
    forward coefficients have ``ã_12 = 0`` on the flat boundary.
    """
    if not isinstance(domain, GraphDomain):
        raise GeometryError("flatten_map expects a GraphDomain")
    if boundary_coefficients is None:
        return FlatteningMap(domain, extent=extent)
    graph_only = FlatteningMap(domain, extent=extent)

    def ratio(s):
        s = np.asarray(s, dtype=float).reshape(-1)
        x = np.c_[s, domain.graph(s)]
        J = graph_only.jacobian(x)
        A = np.asarray(boundary_coefficients(x), dtype=float)
        At = J @ A @ np.transpose(J, (0, 2, 1))
        return At[:, 0, 1] / At[:, 1, 1]

    def ratio_slope(s, eps: float = 1e-6):
        s = np.asarray(s, dtype=float).reshape(-1)
        return (ratio(s + eps) - ratio(s - eps)) / (2 * eps)

    return FlatteningMap(domain, shear=ratio, shear_slope=ratio_slope, extent=extent)


def apply_map(mapping: LinearChange | FlatteningMap, pts, inverse: bool = False) -> np.ndarray:
    """Apply ``mapping`` (or its inverse) to a point or an ``(n, d)`` array of points."""
    arr = np.asarray(pts, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    ok = mapping.contains_image(arr) if inverse else mapping.contains(arr)
    if not np.all(ok):
        bad = arr[~ok][0]
        raise GeometryError(f"point {bad.tolist()} outside the map's domain of validity")
    out = mapping.backward(arr) if inverse else mapping.forward(arr)
    return out[0] if single else out
