"""Coefficient sets, analytic fields, and the coefficient operations used by the
reduction: Robin-potential extension, reflection sign rules, pushforward
under changes of variables, and the oscillation modulus at a boundary point.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .expr import Expr, parse_expr
from .quadrature import edge_rule, half_ball_rule

__all__ = [
    "FieldError",
    "IntegrabilityError",
    "CoefficientSet",
    "AnalyticField",
    "ExtendedEta",
    "OscillationModulus",
    "scalar_field",
    "vector_field",
    "matrix_field",
    "extend_eta",
    "reflect_coefficients",
    "pushforward_coefficients",
    "pushforward_density",
    "oscillation_modulus",
]


class FieldError(ValueError):
    pass


class IntegrabilityError(FieldError):
    pass


def _pts(points) -> np.ndarray:
    return np.atleast_2d(np.asarray(points, dtype=float))


def _as_expr(spec, dim):
    if isinstance(spec, Expr):
        return spec
    if isinstance(spec, str):
        return parse_expr(spec, dim=dim)
    return None


def scalar_field(spec, dim: int = 2) -> Callable[[np.ndarray], np.ndarray]:
    """Number, expression string, :class:`Expr` or callable -> ``f(points) -> (n,)``."""
    if callable(spec) and not isinstance(spec, Expr):
        return spec
    e = _as_expr(spec, dim)
    if e is not None:
        return e
    value = float(spec)
    return lambda p: np.full(len(_pts(p)), value)


def vector_field(specs, dim: int = 2) -> Callable[[np.ndarray], np.ndarray]:
    if callable(specs):
        return specs
    comps = [scalar_field(s, dim) for s in specs]
    if len(comps) != dim:
        raise FieldError(f"vector field needs {dim} components, got {len(comps)}")
    return lambda p: np.stack([c(p) for c in comps], axis=-1)


def matrix_field(specs, dim: int = 2) -> Callable[[np.ndarray], np.ndarray]:
    """Symmetric matrix field from the upper-triangle entries ``a11, a12, ..., add``
    (row-major), a full ``d×d`` nested list, or a callable."""
    if callable(specs):
        return specs
    specs = list(specs)
    if len(specs) == dim and all(isinstance(s, (list, tuple)) for s in specs):
        upper = [specs[i][j] for i in range(dim) for j in range(i, dim)]
    else:
        upper = specs
    if len(upper) != dim * (dim + 1) // 2:
        raise FieldError(f"matrix field needs {dim * (dim + 1) // 2} upper-triangle entries")
    comps = [scalar_field(s, dim) for s in upper]
    idx = [(i, j) for i in range(dim) for j in range(i, dim)]

    def A(p):
        p = _pts(p)
        out = np.empty((len(p), dim, dim))
        for (i, j), c in zip(idx, comps):
            v = c(p)
            out[:, i, j] = v
            out[:, j, i] = v
        return out

    return A


@dataclass(frozen=True)
class CoefficientSet:
    """Coefficients of ``D_i(a_ij D_j u + b_i u) + W_i D_i u + V u = 0`` with
    Robin condition ``(a_ij D_j u + b_i u) n_i = η u`` on Γ.

    Fields are callables on ``(n, d)`` point arrays.  ``sources`` keeps the
    expression strings the set was built from (empty for programmatic sets).
    """

    A: Callable
    b: Callable
    W: Callable
    V: Callable
    eta: Callable
    dim: int = 2
    ellipticity: tuple[float, float] = (0.5, 2.0)
    integrability: tuple[float, float, float] = (np.inf, np.inf, np.inf)
    sources: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        p, q, s = self.integrability
        d = self.dim
        if not p > d:
            raise IntegrabilityError(f"requires p > d (p={p}, d={d})")
        if not q > d / 2:
            raise IntegrabilityError(f"requires q > d/2 (q={q}, d={d})")
        if not s > d - 1:
            raise IntegrabilityError(f"requires s > d-1 (s={s}, d={d})")
        lam, Lam = self.ellipticity
        if not 0 < lam <= Lam:
            raise FieldError(f"ellipticity bounds must satisfy 0 < lambda <= Lambda, got {self.ellipticity}")

    @classmethod
    def from_expressions(cls, dim: int = 2, A=None, b=None, W=None, V="0", eta="0",
                         ellipticity=(0.5, 2.0), integrability=(np.inf, np.inf, np.inf)):
        """Build from expression strings; ``A`` lists upper-triangle entries."""
        if A is None:
            A = [("1" if i == j else "0") for i in range(dim) for j in range(i, dim)]
        b = b if b is not None else ["0"] * dim
        W = W if W is not None else ["0"] * dim
        sources = {"A": list(A), "b": list(b), "W": list(W), "V": V, "eta": eta}
        return cls(matrix_field(A, dim), vector_field(b, dim), vector_field(W, dim),
                   scalar_field(V, dim), scalar_field(eta, dim), dim=dim,
                   ellipticity=tuple(ellipticity), integrability=tuple(integrability),
                   sources=sources)

    @classmethod
    def laplace(cls, dim: int = 2, eta="0", **kw):
        return cls.from_expressions(dim=dim, eta=eta, **kw)

    def with_(self, **changes) -> "CoefficientSet":
        if any(k in changes for k in ("A", "b", "W", "V", "eta")):
            changes.setdefault("sources", {})
        return replace(self, **changes)

    def check(self, points, tol: float = 1e-10) -> None:
        """Raise unless ``A`` is finite, symmetric and within the ellipticity
        bounds and the lower-order fields are finite at ``points``."""
        p = _pts(points)
        A = self.A(p)
        if not np.all(np.isfinite(A)):
            raise FieldError("coefficient A is not evaluable at some points")
        if np.max(np.abs(A - np.transpose(A, (0, 2, 1))), initial=0.0) > tol:
            raise FieldError("coefficient A is not symmetric")
        ev = np.linalg.eigvalsh(A)
        lam, Lam = self.ellipticity
        if ev.min() < lam - tol or ev.max() > Lam + tol:
            raise FieldError(
                f"ellipticity violated: eigenvalues in [{ev.min():.4g}, {ev.max():.4g}] "
                f"outside [{lam}, {Lam}]"
            )
        for name in ("b", "W", "V"):
            if not np.all(np.isfinite(getattr(self, name)(p))):
                raise FieldError(f"coefficient {name} is not evaluable at some points")


class AnalyticField:
    """Closed-form field with exact gradient, e.g. ``AnalyticField("x^2 - y^2")``."""

    def __init__(self, expr: str | Expr, dim: int = 2, name: str | None = None):
        self.expr = parse_expr(expr, dim=dim) if isinstance(expr, str) else expr
        self.dim = dim
        self.grad_exprs = self.expr.gradient(dim)
        self.name = name or (expr if isinstance(expr, str) else expr.to_string())

    def __call__(self, points) -> np.ndarray:
        return self.expr(points)

    def gradient(self, points) -> np.ndarray:
        p = _pts(points)
        return np.stack([g(p) for g in self.grad_exprs], axis=-1)

    def __repr__(self):
        return f"AnalyticField({self.name!r})"


# ---------------------------------------------------------------------------
# Robin-potential extension


@dataclass(frozen=True)
class ExtendedEta:
    """``η`` inside the unit ball, a constant chosen for zero total flux outside."""

    eta: Callable
    ball_radius: float
    exterior_value: float
    interior_integral: float
    exterior_length: float
    total_integral: float

    def __call__(self, points) -> np.ndarray:
        p = _pts(points)
        inside = np.linalg.norm(p, axis=1) < self.ball_radius
        out = np.full(len(p), self.exterior_value)
        if np.any(inside):
            out[inside] = self.eta(p[inside])
        return out


def boundary_quadrature(mesh, edges, n_gauss: int = 2):
    """Gauss points on boundary edges: ``(points (k, n, 2), weights (k, n))``."""
    s, w = edge_rule(n_gauss)
    p = mesh.vertices[edges[:, 0]]
    q = mesh.vertices[edges[:, 1]]
    pts = p[:, None, :] + s[None, :, None] * (q - p)[:, None, :]
    length = np.linalg.norm(q - p, axis=1)
    return pts, length[:, None] * w[None, :]


def extend_eta(eta, mesh, ball_radius: float = 1.0, n_gauss: int = 2) -> ExtendedEta:
    """Extend ``η`` from ``∂Ω ∩ B_1`` to all of ``∂Ω`` with mean zero.

    Boundary measure is the polygonal arc length of the mesh boundary, and the
    integral of ``η`` uses the same edge rule as assembly.  An edge belongs to
    ``∂Ω ∩ B_1`` unless it leaves the ball or joins two points of its sphere.
    """
    eta = scalar_field(eta, mesh.vertices.shape[1])
    edges = mesh.boundary_edges
    rad = np.linalg.norm(mesh.vertices, axis=1)[edges]
    tol = 1e-12 * max(ball_radius, 1.0)
    # an edge is exterior if it leaves the ball or is a chord of its sphere
    outside = np.any(rad > ball_radius + tol, axis=1) | np.all(rad > ball_radius - tol, axis=1)
    inside = ~outside
    lengths = np.linalg.norm(mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]], axis=1)
    ext_len = float(lengths[outside].sum())
    pts, wts = boundary_quadrature(mesh, edges[inside], n_gauss)
    vals = eta(pts.reshape(-1, 2)).reshape(pts.shape[:2]) if len(pts) else np.zeros((0, n_gauss))
    integral = float(np.sum(vals * wts))
    if ext_len <= 0.0:
        if abs(integral) > 1e-12 * max(1.0, float(lengths.sum())):
            raise FieldError("boundary lies inside B_1: no exterior boundary to carry the compensating flux")
        return ExtendedEta(eta, ball_radius, 0.0, integral, 0.0, integral)
    c = -integral / ext_len
    return ExtendedEta(eta, ball_radius, c, integral, ext_len, integral + c * ext_len)


# ---------------------------------------------------------------------------
# reflection


def _sign_vector(dim):
    s = np.ones(dim)
    s[-1] = -1.0
    return s


def reflect_coefficients(c: CoefficientSet) -> CoefficientSet:
    """Extend coefficients from ``{x_d ≥ 0}`` to the full ball.

    For ``x_d < 0`` the values at the mirror point are used with ``a_id``
    (``i ≠ d``), ``b_d``, ``W_d`` odd and everything else even; ``η`` is
    dropped.
    """
    d = c.dim
    s = _sign_vector(d)
    S = np.outer(s, s)

    def mirrored(p):
        p = _pts(p).copy()
        lower = p[:, -1] < 0
        p[lower, -1] *= -1.0
        return p, lower

    def A(p):
        q, lower = mirrored(p)
        out = c.A(q)
        out[lower] *= S
        return out

    def vec(f):
        def g(p):
            q, lower = mirrored(p)
            out = f(q)
            out[lower] *= s
            return out

        return g

    def V(p):
        q, _ = mirrored(p)
        return c.V(q)

    zero = lambda p: np.zeros(len(_pts(p)))
    return replace(c, A=A, b=vec(c.b), W=vec(c.W), V=V, eta=zero, sources={})


# ---------------------------------------------------------------------------
# change of variables


def _jacobian_data(mapping, y):
    x = mapping.backward(y)
    J = mapping.jacobian(x)
    det = np.linalg.det(J)
    if np.any(np.abs(det) < 1e-14):
        raise FieldError("singular Jacobian at an evaluation point")
    return x, J, np.abs(det)


def pushforward_coefficients(c: CoefficientSet, mapping) -> CoefficientSet:
    """Coefficients in ``y = Φ(x)`` coordinates preserving the weak form.

    ``Ã = J A Jᵀ/|J|``, ``b̃ = J b/|J|``, ``W̃ = J W/|J|``, ``Ṽ = V/|J|`` and on
    the boundary ``η̃ = η |Jᵀ n_y| / |J|`` (surface-measure ratio).
    """

    def A(y):
        x, J, det = _jacobian_data(mapping, _pts(y))
        return J @ c.A(x) @ np.transpose(J, (0, 2, 1)) / det[:, None, None]

    def vec(f):
        def g(y):
            x, J, det = _jacobian_data(mapping, _pts(y))
            return np.einsum("nij,nj->ni", J, f(x)) / det[:, None]

        return g

    def V(y):
        x, J, det = _jacobian_data(mapping, _pts(y))
        return c.V(x) / det

    def eta(y):
        x, J, det = _jacobian_data(mapping, _pts(y))
        n = np.zeros(c.dim)
        n[-1] = -1.0
        ratio = np.linalg.norm(np.einsum("nji,j->ni", J, n), axis=1) / det
        return c.eta(x) * ratio

    return replace(c, A=A, b=vec(c.b), W=vec(c.W), V=V, eta=eta, sources={})


def pushforward_density(f: Callable, mapping) -> Callable:
    """A volume source ``f`` in ``y`` coordinates: ``f(x(y)) / |J|``."""

    def g(y):
        x, J, det = _jacobian_data(mapping, _pts(y))
        return f(x) / det

    return g


# ---------------------------------------------------------------------------
# oscillation


@dataclass(frozen=True)
class OscillationModulus:
    radii: np.ndarray
    values: np.ndarray


def oscillation_modulus(A: Callable, A0, radii, dim: int = 2, **rule) -> OscillationModulus:
    """``ω(r) = ⨍_{B_r^+} |A - A(0)|²`` (Frobenius norm) by polar quadrature."""
    radii = np.asarray(list(radii), dtype=float)
    if radii.size == 0:
        raise FieldError("oscillation modulus needs at least one radius")
    if np.any(radii <= 0):
        raise FieldError("radii must be positive")
    A0 = np.asarray(A0, dtype=float)
    vals = []
    for r in radii:
        pts, w = half_ball_rule(float(r), dim=dim, **rule)
        diff = A(pts) - A0
        vals.append(float(np.sum(w * np.sum(diff * diff, axis=(1, 2))) / np.sum(w)))
    return OscillationModulus(radii, np.array(vals))
