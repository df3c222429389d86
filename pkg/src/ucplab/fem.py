"""Piecewise-linear finite elements for divergence-form problems with Robin,
Neumann and Dirichlet boundary conditions.

Sign convention: the weak form

    ∫ -(A∇u + b u)·∇φ + (W·∇u + V u) φ + ∫_Γ η u φ = 0

is multiplied by -1, so the assembled matrix is

    K = S + B - M_W - M_V - R,   R_ij = ∫_Γ η φ_j φ_i,

and the principal part ``S`` is the usual positive stiffness matrix.  An
optional source ``f`` (right-hand side ``∫ f φ``) and Neumann data ``g``
(``∫ g φ``) are supported for manufactured-solution testing.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fields import CoefficientSet, FieldError, boundary_quadrature, scalar_field
from .mesh import Mesh
from .quadrature import triangle_rule

__all__ = [
    "BoundaryConditions",
    "CompatibilityError",
    "DiscreteSystem",
    "EdgeValues",
    "SolutionField",
    "SolverError",
    "assemble",
    "boundary_flux",
    "interpolate",
    "solve_system",
    "weak_residual",
]


class SolverError(RuntimeError):
    pass


class CompatibilityError(ValueError):
    pass


@dataclass
class BoundaryConditions:
    """Boundary data by edge tag.  Tags absent from every entry are natural
    (zero conormal flux); ``robin`` lists tags carrying the ``η u`` term."""

    dirichlet: dict = field(default_factory=dict)
    neumann: dict = field(default_factory=dict)
    robin: tuple = ()

    @classmethod
    def robin_dirichlet(cls, dirichlet, robin_tag: str = "flat", dirichlet_tag: str = "arc"):
        return cls(dirichlet={dirichlet_tag: dirichlet}, robin=(robin_tag,))


@dataclass
class DiscreteSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    mesh: Mesh
    dirichlet_nodes: np.ndarray
    dirichlet_values: np.ndarray
    mean_zero: bool = False
    constraint: np.ndarray | None = None
    parts: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


class SolutionField:
    """Nodal values on a mesh, evaluated by barycentric interpolation."""

    def __init__(self, mesh: Mesh, values, residual: float = 0.0):
        self.mesh = mesh
        self.values = np.asarray(values, dtype=float)
        self.residual = residual
        self.dim = 2

    def __call__(self, points) -> np.ndarray:
        tri, lam = self.mesh.locate(points)
        return np.einsum("ij,ij->i", lam, self.values[self.mesh.triangles[tri]])

    @property
    def element_gradients(self) -> np.ndarray:
        return np.einsum("mka,mk->ma", self.mesh.gradients, self.values[self.mesh.triangles])

    def gradient(self, points) -> np.ndarray:
        tri, _ = self.mesh.locate(points)
        return self.element_gradients[tri]

    def mean(self) -> float:
        m = self.mesh.lumped_mass()
        return float(m @ self.values / m.sum())

    def trace(self, tag: str = "flat"):
        """Vertices of the boundary segment ``tag`` sorted by x and their values."""
        idx = self.mesh.boundary_vertices(tag)
        order = np.argsort(self.mesh.vertices[idx, 0], kind="stable")
        idx = idx[order]
        return self.mesh.vertices[idx], self.values[idx]

    def l2_error(self, exact: Callable, order: int = 5) -> float:
        bary, w = triangle_rule(order)
        X = np.einsum("qk,mka->mqa", bary, self.mesh.vertices[self.mesh.triangles])
        uh = np.einsum("qk,mk->mq", bary, self.values[self.mesh.triangles])
        ue = exact(X.reshape(-1, 2)).reshape(uh.shape)
        err = np.einsum("q,mq->m", w, (uh - ue) ** 2) * self.mesh.areas
        return float(np.sqrt(err.sum()))

    def with_values(self, values) -> "SolutionField":
        return SolutionField(self.mesh, values)

    def to_csv(self) -> str:
        """Rows ``vertex_index,x,y,value``."""
        lines = ["vertex_index,x,y,value"]
        for i, ((x, y), v) in enumerate(zip(self.mesh.vertices, self.values)):
            lines.append(f"{i},{float(x)!r},{float(y)!r},{float(v)!r}")
        return "\n".join(lines) + "\n"


def interpolate(mesh: Mesh, f) -> SolutionField:
    f = scalar_field(f)
    return SolutionField(mesh, f(mesh.vertices))


# ---------------------------------------------------------------------------
# assembly


def _coo(mesh: Mesh, local: np.ndarray, n: int) -> sp.csr_matrix:
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def _edge_coo(edges: np.ndarray, local: np.ndarray, n: int) -> sp.csr_matrix:
    rows = np.repeat(edges, 2, axis=1).ravel()
    cols = np.tile(edges, (1, 2)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def _finite(name, values):
    if not np.all(np.isfinite(values)):
        raise FieldError(f"coefficient {name} is not evaluable at some quadrature points")
    return values


def _edges_for(mesh: Mesh, tag: str) -> np.ndarray:
    if not mesh.has_tag(tag):
        raise FieldError(f"boundary tag {tag!r} not present on the mesh")
    return mesh.edges_with(tag)


def assemble(c: CoefficientSet, mesh: Mesh, bc: BoundaryConditions | None = None,
             mean_zero: bool = False, source=None, quad_order: int = 2,
             boundary_gauss: int = 2, compat_tol: float = 1e-8,
             compat: str = "error") -> DiscreteSystem:
    """Assemble the P1 system for ``c`` on ``mesh``.

    In mean-zero mode ``compat="project"`` removes the (discretisation-level)
    total flux of the data uniformly along the boundary instead of raising.

    ``quad_order=5`` / ``boundary_gauss=4`` select the upgraded rules used for
    singular coefficient presets.
    """
    bc = bc or BoundaryConditions()
    n = mesh.n_vertices
    m = mesh.n_triangles
    bary, wq = triangle_rule(quad_order)
    nq = len(wq)
    G = mesh.gradients
    area = mesh.areas
    X = np.einsum("qk,mka->mqa", bary, mesh.vertices[mesh.triangles]).reshape(-1, 2)
    wA = (area[:, None] * wq[None, :])  # (m, q)

    A = _finite("A", c.A(X)).reshape(m, nq, 2, 2)
    S = np.einsum("mq,mqab,mjb,mia->mij", wA, A, G, G)
    parts = {"stiffness": _coo(mesh, S, n)}
    K = parts["stiffness"].copy()

    b = _finite("b", c.b(X)).reshape(m, nq, 2)
    if np.any(b != 0.0):
        Bl = np.einsum("mq,qj,mqa,mia->mij", wA, bary, b, G)
        parts["advection"] = _coo(mesh, Bl, n)
        K = K + parts["advection"]
    W = _finite("W", c.W(X)).reshape(m, nq, 2)
    if np.any(W != 0.0):
        Wl = np.einsum("mq,mqa,mja,qi->mij", wA, W, G, bary)
        parts["drift"] = _coo(mesh, Wl, n)
        K = K - parts["drift"]
    V = _finite("V", c.V(X)).reshape(m, nq)
    if np.any(V != 0.0):
        Vl = np.einsum("mq,mq,qi,qj->mij", wA, V, bary, bary)
        parts["potential"] = _coo(mesh, Vl, n)
        K = K - parts["potential"]

    rhs = np.zeros(n)
    if source is not None:
        f = _finite("source", scalar_field(source)(X)).reshape(m, nq)
        np.add.at(rhs, mesh.triangles.ravel(), np.einsum("mq,mq,qi->mi", wA, f, bary).ravel())

    s_edge = np.polynomial.legendre.leggauss(boundary_gauss)[0] * 0.5 + 0.5
    phi_edge = np.c_[1.0 - s_edge, s_edge]  # (g, 2)

    R = sp.csr_matrix((n, n))
    for tag in bc.robin:
        edges = _edges_for(mesh, tag)
        pts, wts = boundary_quadrature(mesh, edges, boundary_gauss)
        eta = _finite("eta", c.eta(pts.reshape(-1, 2))).reshape(wts.shape)
        loc = np.einsum("eg,ga,gb->eab", wts * eta, phi_edge, phi_edge)
        R = R + _edge_coo(edges, loc, n)
    if bc.robin:
        parts["robin"] = R
        K = K - R

    for tag, g in bc.neumann.items():
        edges = _edges_for(mesh, tag)
        pts, wts = boundary_quadrature(mesh, edges, boundary_gauss)
        gv = _finite("neumann data", scalar_field(g)(pts.reshape(-1, 2))).reshape(wts.shape)
        np.add.at(rhs, edges.ravel(), np.einsum("eg,ga->ea", wts * gv, phi_edge).ravel())

    dn, dv = [], []
    for tag, g in bc.dirichlet.items():
        nodes = np.unique(_edges_for(mesh, tag).ravel())
        dn.append(nodes)
        dv.append(scalar_field(g)(mesh.vertices[nodes]))
    if dn:
        nodes = np.concatenate(dn)
        vals = np.concatenate(dv)
        nodes, first = np.unique(nodes, return_index=True)
        vals = vals[first]
    else:
        nodes, vals = np.zeros(0, dtype=int), np.zeros(0)

    constraint = None
    if mean_zero:
        if len(nodes):
            raise CompatibilityError("mean-zero mode does not allow Dirichlet data")
        total = float(rhs.sum())
        if compat == "project" and abs(total) > 0.0:
            e = mesh.boundary_edges
            lengths = np.linalg.norm(mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]], axis=1)
            bm = np.zeros(n)
            np.add.at(bm, e.ravel(), np.repeat(0.5 * lengths, 2))
            rhs -= total * bm / bm.sum()
        elif abs(total) > compat_tol:
            raise CompatibilityError(
                f"Neumann data violates compatibility: total flux {total:.3e} (tolerance {compat_tol:g})"
            )
        constraint = mesh.lumped_mass()
    return DiscreteSystem(K.tocsr(), rhs, mesh, nodes, vals, mean_zero, constraint, parts)


# ---------------------------------------------------------------------------
# solve


def _spsolve(M, r):
    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            x = spla.spsolve(M.tocsc(), r)
        except (spla.MatrixRankWarning, RuntimeError) as exc:
            raise SolverError(f"singular system: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SolverError("singular system: non-finite solution")
    return x


def _iterative(M, r, rtol):
    x, info = spla.gmres(M, r, rtol=rtol, atol=0.0, restart=200, maxiter=2000)
    if info != 0:
        res = np.linalg.norm(M @ x - r) / max(np.linalg.norm(r), 1e-300)
        raise SolverError(f"iterative solver did not converge (relative residual {res:.3e})")
    return x


def solve_system(system: DiscreteSystem, method: str = "direct", rtol: float = 1e-12,
                 residual_gate: float = 1e-10) -> SolutionField:
    """Solve ``system``; Dirichlet nodes are eliminated, mean-zero mode adds a
    Lagrange multiplier row weighted by ``∫ φ_j``."""
    K, F = system.matrix, system.rhs
    n = system.n
    if not system.mean_zero and len(system.dirichlet_nodes) == 0:
        ones = np.ones(K.shape[0])
        if np.linalg.norm(K @ ones) <= 1e-12 * max(abs(K).sum(), 1e-300):
            raise SolverError("singular system: constants lie in the kernel; "
                              "add Dirichlet data or use mean-zero mode")
    u = np.zeros(n)
    u[system.dirichlet_nodes] = system.dirichlet_values
    free = np.setdiff1d(np.arange(n), system.dirichlet_nodes)
    Kff = K[free][:, free]
    rhs = F[free] - K[free][:, system.dirichlet_nodes] @ system.dirichlet_values
    if system.mean_zero:
        c = system.constraint[free]
        M = sp.bmat([[Kff, sp.csr_matrix(c[:, None])], [sp.csr_matrix(c[None, :]), None]]).tocsr()
        r = np.append(rhs, 0.0)
    else:
        M, r = Kff, rhs
    solve = _spsolve if method == "direct" else (lambda A, b: _iterative(A, b, rtol))
    x = solve(M, r)
    scale = max(np.linalg.norm(r), np.linalg.norm(M @ np.ones(M.shape[0])) * 1e-300, 1e-300)
    res = float(np.linalg.norm(M @ x - r) / scale) if np.linalg.norm(r) > 0 else float(np.linalg.norm(M @ x))
    if res > residual_gate:
        raise SolverError(f"solve did not reach the residual gate: relative residual {res:.3e}")
    u[free] = x[: len(free)]
    return SolutionField(system.mesh, u, residual=res)


# ---------------------------------------------------------------------------
# post-processing


@dataclass
class EdgeValues:
    edges: np.ndarray
    midpoints: np.ndarray
    normals: np.ndarray
    lengths: np.ndarray
    values: np.ndarray


def boundary_flux(u: SolutionField, c: CoefficientSet, segment: str = "flat") -> EdgeValues:
    """Conormal flux ``(A∇u + b u)·n`` per boundary edge from the adjacent
    element gradient, evaluated at edge midpoints."""
    mesh = u.mesh
    edges = _edges_for(mesh, segment)
    tri = mesh.edge_triangles(edges)
    g = u.element_gradients[tri]
    mid = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    n = mesh.outward_normals(edges)
    umid = 0.5 * (u.values[edges[:, 0]] + u.values[edges[:, 1]])
    flux = np.einsum("eab,eb->ea", c.A(mid), g) + c.b(mid) * umid[:, None]
    lengths = np.linalg.norm(mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]], axis=1)
    return EdgeValues(edges, mid, n, lengths, np.einsum("ea,ea->e", flux, n))


def weak_residual(values, system: DiscreteSystem, exclude_tags=("arc", "outer")) -> np.ndarray:
    """``K u - F`` restricted to test functions not attached to ``exclude_tags``."""
    r = system.matrix @ np.asarray(values, dtype=float) - system.rhs
    mesh = system.mesh
    skip = [mesh.boundary_vertices(t) for t in exclude_tags if mesh.has_tag(t)]
    keep = np.ones(mesh.n_vertices, dtype=bool)
    if skip:
        keep[np.concatenate(skip)] = False
    return r[keep]
