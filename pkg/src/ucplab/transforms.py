"""Reduction of the Robin problem to a homogeneous conormal problem: gauge
potential, multiplicative gauge, change of variables of discrete fields, and
even reflection across the flat boundary."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .fem import (
    BoundaryConditions,
    EdgeValues,
    SolutionField,
    assemble,
    boundary_flux,
    solve_system,
)
from .fields import CoefficientSet, extend_eta, reflect_coefficients
from .mesh import FLAT, Mesh, build_mesh, mirror_mesh

__all__ = [
    "GaugeResult",
    "ReflectedProblem",
    "ReflectionError",
    "conormal_residual",
    "gauge_transform",
    "pushforward_field",
    "reflect_even_extension",
    "solve_gauge_potential",
]


class ReflectionError(ValueError):
    pass


def _principal(c: CoefficientSet) -> CoefficientSet:
    zero_v = lambda p: np.zeros((len(p), c.dim))
    zero_s = lambda p: np.zeros(len(p))
    return replace(c, b=zero_v, W=zero_v, V=zero_s, eta=zero_s, sources={})


def solve_gauge_potential(c: CoefficientSet, domain, h: float = 0.05, ball_radius: float = 1.0,
                          grading: float | None = None) -> SolutionField:
    """Mean-zero solution of ``div(A∇Ψ) = 0``, ``A∇Ψ·n = η̃`` on the whole boundary.

    ``domain`` is a mesh or a :class:`HalfBall` host (meshed with ``±ball_radius``
    as vertices so the jump of ``η̃`` falls on element boundaries).
    """
    mesh = domain if isinstance(domain, Mesh) else build_mesh(
        domain, h, grading=grading, breaks=(ball_radius,) if ball_radius < domain.radius else ())
    eta_t = extend_eta(c.eta, mesh, ball_radius=ball_radius)
    # curved boundary parts lie outside the ball and carry the constant
    exterior = eta_t.exterior_value
    tags = sorted(set(mesh.edge_tags.tolist()))
    bc = BoundaryConditions(neumann={t: (eta_t if t == FLAT else exterior) for t in tags})
    psi = solve_system(assemble(_principal(c), mesh, bc, mean_zero=True))
    psi.extension = eta_t
    return psi


def conormal_residual(u: SolutionField, c: CoefficientSet, rho: float = 0.9,
                      segment: str = FLAT) -> float:
    """``max |(A∇u + b u)·n|`` over boundary edges with midpoint in ``B_rho``."""
    ev: EdgeValues = boundary_flux(u, c, segment)
    inside = np.linalg.norm(ev.midpoints, axis=1) < rho
    if not np.any(inside):
        return 0.0
    return float(np.max(np.abs(ev.values[inside])))


@dataclass
class GaugeResult:
    psi: SolutionField
    v: SolutionField
    transformed: CoefficientSet
    conormal_residual: float
    rho: float

    def recover(self) -> SolutionField:
        """``u = v e^{Ψ}`` at the vertices."""
        return self.v.with_values(self.v.values * np.exp(self.psi.values))


def transformed_coefficients(c: CoefficientSet, grad_psi) -> CoefficientSet:
    """``Ŵ = W + 2A∇Ψ`` and ``V̂ = V + A∇Ψ·∇Ψ + b·∇Ψ + W·∇Ψ``; ``A``, ``b``
    unchanged, ``η`` removed.  ``grad_psi`` maps points to ``(n, d)``."""

    def W(p):
        g = grad_psi(p)
        return c.W(p) + 2.0 * np.einsum("nij,nj->ni", c.A(p), g)

    def V(p):
        g = grad_psi(p)
        Ag = np.einsum("nij,nj->ni", c.A(p), g)
        return c.V(p) + np.einsum("ni,ni->n", Ag, g) + np.einsum("ni,ni->n", c.b(p) + c.W(p), g)

    zero = lambda p: np.zeros(len(np.atleast_2d(p)))
    return replace(c, W=W, V=V, eta=zero, sources={})


def gauge_transform(u: SolutionField, c: CoefficientSet, psi: SolutionField,
                    rho: float = 0.9) -> GaugeResult:
    """``v = u e^{-Ψ}`` (nodal) with the transformed lower-order coefficients."""
    if u.mesh is not psi.mesh and not np.array_equal(u.mesh.vertices, psi.mesh.vertices):
        raise ValueError("u and psi must live on the same mesh")
    v = u.with_values(u.values * np.exp(-psi.values))
    tc = transformed_coefficients(c, psi.gradient)
    return GaugeResult(psi, v, tc, conormal_residual(v, tc, rho), rho)


def pushforward_field(u: SolutionField, mapping) -> SolutionField:
    """The field ``u ∘ Φ⁻¹`` as a P1 field on the mapped mesh.

    Vertices on the flat tag are snapped to ``x_d = 0`` and the mesh kind
    becomes a half-ball when the image of a graph domain is taken.
    """
    m = u.mesh
    y = mapping.forward(m.vertices)
    flat = m.boundary_vertices(FLAT) if m.has_tag(FLAT) else np.zeros(0, dtype=int)
    y[flat, -1] = 0.0
    kind = "half_ball" if m.kind == "graph" else m.kind
    tris = m.triangles.copy()
    a, b, cc = y[tris[:, 0]], y[tris[:, 1]], y[tris[:, 2]]
    sa = (b[:, 0] - a[:, 0]) * (cc[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (cc[:, 0] - a[:, 0])
    tris[sa < 0] = tris[sa < 0][:, [0, 2, 1]]
    mesh = Mesh(y, tris, m.boundary_edges.copy(), m.edge_tags.copy(), h=m.h,
                radius=m.radius, kind=kind)
    return SolutionField(mesh, u.values.copy())


@dataclass
class ReflectedProblem:
    mesh: Mesh
    v: SolutionField
    coefficients: CoefficientSet

    def system(self):
        bc = BoundaryConditions(dirichlet={"outer": self.v})
        return assemble(self.coefficients, self.mesh, bc)

    def _residual(self, rho):
        sysm = self.system()
        r = sysm.matrix @ self.v.values - sysm.rhs
        keep = np.ones(self.mesh.n_vertices, dtype=bool)
        keep[self.mesh.boundary_vertices("outer")] = False
        if rho is not None:
            keep &= np.linalg.norm(self.mesh.vertices, axis=1) < rho
        return r[keep]

    def residual(self, rho: float | None = None) -> float:
        """Euclidean norm of the weak residual over interior hat functions
        (centred in ``B_rho`` when given)."""
        return float(np.linalg.norm(self._residual(rho)))

    def max_residual(self, rho: float | None = None) -> float:
        return float(np.max(np.abs(self._residual(rho)), initial=0.0))

    def resolve(self) -> SolutionField:
        """Solve the extended problem with Dirichlet data from ``ṽ``."""
        return solve_system(self.system())


def reflect_even_extension(v: SolutionField, c: CoefficientSet, tol: float = 1e-8,
                           ball_radius: float | None = None) -> ReflectedProblem:
    """Even extension ``ṽ(x', -x_d) = ṽ(x', x_d)`` to the mirrored full-ball mesh."""
    mesh = v.mesh
    if mesh.kind != "half_ball":
        raise ReflectionError(f"reflection needs a half-ball mesh, got {mesh.kind!r}")
    R = mesh.radius if ball_radius is None else ball_radius
    fv = mesh.boundary_vertices(FLAT)
    pts = mesh.vertices[fv]
    pts = pts[np.linalg.norm(pts, axis=1) <= R]
    A = c.A(pts)
    off = float(np.max(np.abs(A[:, :-1, -1]), initial=0.0))
    if off > tol:
        raise ReflectionError(f"flat-boundary structure violated: max |a_id| on the flat boundary = {off:.3e}")
    eta = float(np.max(np.abs(c.eta(pts)), initial=0.0))
    if eta > tol:
        raise ReflectionError(f"conormal condition is not homogeneous: max |eta| on the flat boundary = {eta:.3e}")
    full = mirror_mesh(mesh)
    vals = np.empty(full.n_vertices)
    n = mesh.n_vertices
    vals[:n] = v.values
    vals[full.mirror[:n]] = v.values
    return ReflectedProblem(full, SolutionField(full, vals), reflect_coefficients(c))
