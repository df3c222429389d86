"""Blowup sequences, homogeneous Neumann-harmonic fits, boundary zero sets,
box counting and tangent sets."""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import brentq, minimize_scalar
from scipy.spatial import cKDTree

from .frequency import as_field
from .geometry import normalizing_map
from .quadrature import half_ball_rule

__all__ = [
    "BlowupError",
    "BlowupSequence",
    "BoundaryZeroSet",
    "HomogeneousFit",
    "HomogeneousPolynomial",
    "InconsistentDegreeError",
    "TangentSet",
    "box_count_dimension",
    "boundary_zero_set",
    "fit_homogeneous",
    "neumann_harmonic_basis",
    "reference_grid",
    "rescale_blowup",
    "tangent_set",
]


class BlowupError(ValueError):
    pass


class InconsistentDegreeError(ValueError):
    def __init__(self, message, fit=None):
        super().__init__(message)
        self.fit = fit


# ---------------------------------------------------------------------------
# Neumann-harmonic polynomials


@dataclass(frozen=True)
class HomogeneousPolynomial:
    """``P(x) = Σ c_k (L x)^{α_k}`` with monomial exponents ``α_k``."""

    exponents: np.ndarray
    coefficients: np.ndarray
    transform: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.exponents.shape[1]

    @property
    def degree(self) -> int:
        return int(self.exponents.sum(axis=1).max()) if len(self.exponents) else 0

    def _inner(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x if self.transform is None else x @ self.transform.T

    def _eval(self, y, exps, coefs):
        out = np.zeros(len(y))
        for a, c in zip(exps, coefs):
            if c != 0.0:
                out += c * np.prod(y ** a, axis=1)
        return out

    def __call__(self, x) -> np.ndarray:
        return self._eval(self._inner(x), self.exponents, self.coefficients)

    def gradient(self, x) -> np.ndarray:
        y = self._inner(x)
        g = np.zeros((len(y), self.dim))
        for i in range(self.dim):
            e = self.exponents.copy()
            c = self.coefficients * e[:, i]
            e[:, i] = np.maximum(e[:, i] - 1, 0)
            g[:, i] = self._eval(y, e, c)
        return g if self.transform is None else g @ self.transform

    def to_string(self, names=("x", "y", "z")) -> str:
        terms = []
        for a, c in zip(self.exponents, self.coefficients):
            if abs(c) < 1e-14:
                continue
            mono = "*".join(f"{names[i]}^{k}" if k > 1 else names[i] for i, k in enumerate(a) if k)
            terms.append(f"{float(c)!r}" + (f"*{mono}" if mono else ""))
        body = " + ".join(terms) or "0"
        return body if self.transform is None else f"({body}) o L"


def _monomials(d: int, m: int):
    return [a for a in itertools.product(range(m + 1), repeat=d) if sum(a) == m]


def _laplace_nullspace(d: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Harmonic homogeneous polynomials of degree ``m`` even in ``x_d``."""
    mons = [a for a in _monomials(d, m) if a[-1] % 2 == 0]
    if m < 2:
        return np.array(mons, dtype=int).reshape(-1, d), np.eye(len(mons))
    targets = {a: k for k, a in enumerate(_monomials(d, m - 2))}
    L = np.zeros((len(targets), len(mons)))
    for j, a in enumerate(mons):
        for i in range(d):
            if a[i] >= 2:
                b = list(a)
                b[i] -= 2
                L[targets[tuple(b)], j] += a[i] * (a[i] - 1)
    Z = null_space(L)
    Z[np.abs(Z) < 1e-14] = 0.0
    return np.array(mons, dtype=int), Z


def neumann_harmonic_basis(A0, d: int, m: int) -> list[HomogeneousPolynomial]:
    """Degree-``m`` solutions of ``div(A0∇P) = 0`` in the upper half-space
    with ``(A0∇P)_d = 0`` on its boundary, as ``Q ∘ Ψ`` with ``Ψ`` the
    normalizing map of ``A0`` and ``Q`` Laplace-Neumann harmonics."""
    if d not in (2, 3):
        raise ValueError(f"unsupported dimension {d}")
    if m < 0:
        raise ValueError("degree must be nonnegative")
    A0 = np.eye(d) if A0 is None else np.asarray(A0, dtype=float)
    L = normalizing_map(A0).matrix
    T = None if np.allclose(L, np.eye(d), atol=0, rtol=0) else L
    if d == 2:
        # Re (x + i y)^m
        exps = np.array([(m - k, k) for k in range(0, m + 1, 2)], dtype=int).reshape(-1, 2)
        from math import comb

        coefs = np.array([comb(m, k) * (-1) ** (k // 2) for k in range(0, m + 1, 2)], dtype=float)
        return [HomogeneousPolynomial(exps, coefs, T)]
    exps, Z = _laplace_nullspace(d, m)
    return [HomogeneousPolynomial(exps, Z[:, j].copy(), T) for j in range(Z.shape[1])]


# ---------------------------------------------------------------------------
# blowup


def reference_grid(dim: int = 2, n: int = 64):
    """Tensor polar Gauss grid on ``B_1^+`` (``n`` radial × ``n`` angular in d=2)."""
    if dim == 2:
        return half_ball_rule(1.0, 2, n_radial=n, n_angular=n)
    return half_ball_rule(1.0, 3, n_radial=n // 2, n_angular=n // 2)


@dataclass
class BlowupSequence:
    lambdas: np.ndarray
    snapshots: np.ndarray
    normalizers: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    A0: np.ndarray
    center: np.ndarray
    normalization: str = "mapped"

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def mean_square(self, k: int) -> float:
        s = self.snapshots[k]
        return float(self.weights @ (s * s) / self.weights.sum())

    def distance(self, a: int, b: int) -> float:
        d = self.snapshots[a] - self.snapshots[b]
        return float(np.sqrt(self.weights @ (d * d) / self.weights.sum()))

    def snapshot_csv(self, k: int) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        p = self.points
        if self.dim == 2:
            w.writerow(["theta", "rho", "value"])
            th = np.arctan2(p[:, 1], p[:, 0])
            rho = np.linalg.norm(p, axis=1)
            for t, r, v in zip(th, rho, self.snapshots[k]):
                w.writerow([repr(float(t)), repr(float(r)), repr(float(v))])
        else:
            w.writerow(["x", "y", "z", "value"])
            for q, v in zip(p, self.snapshots[k]):
                w.writerow([repr(float(c)) for c in q] + [repr(float(v))])
        return buf.getvalue()


def rescale_blowup(u, lambdas, A0=None, normalization: str = "mapped", center=None,
                   grid_n: int = 64, dim: int | None = None) -> BlowupSequence:
    """``u_λ(x) = u(c + λx) / (⨍_{λΨ(B_1^+)} |u|²)^{1/2}`` on the reference grid.

    ``normalization="plain"`` averages over ``B_λ^+`` instead of its image
    under the normalizing map of ``A0``.
    """
    u = as_field(u) if isinstance(u, str) else u
    d = dim or int(getattr(u, "dim", 2))
    lambdas = np.asarray(list(lambdas), dtype=float)
    if lambdas.size == 0 or np.any(lambdas <= 0):
        raise BlowupError("lambdas must be positive")
    if normalization not in ("mapped", "plain"):
        raise BlowupError(f"unknown normalization {normalization!r}")
    A0 = np.eye(d) if A0 is None else np.asarray(A0, dtype=float)
    c = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    L = normalizing_map(A0).matrix if normalization == "mapped" else np.eye(d)
    pts, w = reference_grid(d, grid_n)
    ref = pts @ L.T
    snaps, norms = [], []
    for lam in lambdas:
        vals = u(c + lam * ref)
        ns = float(w @ (vals * vals) / w.sum())
        if not ns > 1e-300:
            raise BlowupError(f"normalizer underflow at lambda={lam:g}: infinite-order vanishing suspected")
        nrm = np.sqrt(ns)
        # the mapped region's mean-square normalizes the snapshot on the plain grid
        snaps.append(u(c + lam * pts) / nrm)
        norms.append(nrm)
    return BlowupSequence(lambdas, np.array(snaps), np.array(norms), pts, w, A0, c, normalization)


@dataclass
class HomogeneousFit:
    degree: int
    coefficients: np.ndarray
    residual: float
    residuals: np.ndarray
    convergent: bool
    basis: list = field(repr=False, default_factory=list)

    def polynomial(self, x) -> np.ndarray:
        return sum(c * p(x) for c, p in zip(self.coefficients, self.basis))


def fit_homogeneous(seq: BlowupSequence, m_hint: int, strict: bool = True,
                    inconsistency: float = 0.5) -> HomogeneousFit:
    """Weighted least-squares projection of each snapshot onto the degree-``m``
    basis; the reported fit is that of the last (smallest-λ) snapshot."""
    if m_hint < 0:
        raise ValueError("m_hint must be nonnegative")
    basis = neumann_harmonic_basis(seq.A0, seq.dim, m_hint)
    sw = np.sqrt(seq.weights)
    B = np.stack([p(seq.points) for p in basis], axis=1) * sw[:, None]
    res, coefs = [], []
    for s in seq.snapshots:
        t = s * sw
        c, *_ = np.linalg.lstsq(B, t, rcond=None)
        nt = np.linalg.norm(t)
        res.append(float(np.linalg.norm(t - B @ c) / nt) if nt > 0 else 0.0)
        coefs.append(c)
    res = np.array(res)
    tail = res[-3:]
    convergent = bool(len(tail) >= 2 and np.all(tail[1:] <= 1.1 * tail[:-1] + 1e-14))
    fit = HomogeneousFit(m_hint, coefs[-1], float(res[-1]), res, convergent, basis)
    if strict and fit.residual > inconsistency:
        raise InconsistentDegreeError(
            f"degree {m_hint} inconsistent with the blowup: relative residual {fit.residual:.3f}", fit
        )
    return fit


# ---------------------------------------------------------------------------
# boundary zero sets


@dataclass
class BoundaryZeroSet:
    dim: int
    roots: np.ndarray
    plateaus: list
    cells: dict
    scales: np.ndarray
    counts: np.ndarray
    dim_estimate: float = float("nan")
    region: tuple = ()

    @property
    def finite(self) -> bool:
        return not self.plateaus and self.dim == 2

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if self.dim == 2:
            w.writerow(["kind", "x", "x_end"])
            for r in self.roots:
                w.writerow(["root", repr(float(r)), ""])
            for a, b in self.plateaus:
                w.writerow(["plateau", repr(float(a)), repr(float(b))])
        else:
            s = float(self.scales[-1])
            w.writerow(["scale", "x", "y"])
            for c in self.cells.get(s, np.zeros((0, 2))):
                w.writerow([repr(s), repr(float(c[0])), repr(float(c[1]))])
        return buf.getvalue()

    def boxcount_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scale", "count"])
        for s, n in zip(self.scales, self.counts):
            w.writerow([repr(float(s)), int(n)])
        return buf.getvalue()


def _trace(u, d):
    def f(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        p = np.zeros((len(x), d))
        p[:, 0] = x
        return u(p)

    return f


def _roots_1d(f, a: float, b: float, resolution: float, plateau_rel: float,
              plateau_min: float):
    n = max(int(np.ceil((b - a) / resolution)), 2)
    xs = np.linspace(a, b, n + 1)
    ys = f(xs)
    sup = float(np.max(np.abs(ys)))
    eps = plateau_rel * sup
    small = np.abs(ys) < eps
    plateaus = []
    in_plateau = np.zeros_like(small)
    k = 0
    while k <= n:
        if small[k]:
            j = k
            while j + 1 <= n and small[j + 1]:
                j += 1
            if xs[j] - xs[k] >= plateau_min:
                plateaus.append((float(xs[k]), float(xs[j])))
                in_plateau[k:j + 1] = True
            k = j + 1
        else:
            k += 1
    roots = []
    scalar = lambda t: float(f(np.array([t]))[0])
    for i in range(n):
        if in_plateau[i] or in_plateau[i + 1]:
            continue
        y0, y1 = ys[i], ys[i + 1]
        if y0 == 0.0:
            roots.append(xs[i])
        elif y0 * y1 < 0:
            roots.append(brentq(scalar, xs[i], xs[i + 1], xtol=1e-12, rtol=4 * np.finfo(float).eps))
    if ys[n] == 0.0 and not in_plateau[n]:
        roots.append(xs[n])
    # touching roots: local minima of |u| without a sign change
    ay = np.abs(ys)
    for i in range(1, n):
        if in_plateau[i] or ys[i] == 0.0:
            continue
        if ay[i] <= ay[i - 1] and ay[i] <= ay[i + 1] and ys[i - 1] * ys[i] > 0 and ys[i] * ys[i + 1] > 0:
            r = minimize_scalar(lambda t: abs(scalar(t)), bounds=(xs[i - 1], xs[i + 1]),
                                method="bounded", options={"xatol": 1e-12})
            if abs(scalar(r.x)) <= eps:
                roots.append(float(r.x))
    roots = np.unique(np.round(np.sort(np.array(roots, dtype=float)), 12))
    return roots, plateaus, sup


def _grad_bound(u, centers, s):
    """Max finite-difference gradient norm over the cell centre and corners."""
    d = centers.shape[1] + 1
    h = 0.25 * s
    G = np.zeros(len(centers))
    offsets = [(0.0, 0.0)] + [(sx * 0.5 * s, sy * 0.5 * s) for sx in (-1, 1) for sy in (-1, 1)]
    for ox, oy in offsets:
        p = np.zeros((len(centers), d))
        p[:, 0] = centers[:, 0] + ox
        p[:, 1] = centers[:, 1] + oy
        g2 = np.zeros(len(centers))
        for i in range(2):
            e = np.zeros(d)
            e[i] = h
            g2 += ((u(p + e) - u(p - e)) / (2 * h)) ** 2
        G = np.maximum(G, np.sqrt(g2))
    return G


def boundary_zero_set(u, rho: float = 0.9, resolution: float = 1e-3, dim: int | None = None,
                      plateau_rel: float = 1e-8, plateau_min: float | None = None,
                      levels: int = 8, coarsest: int = 2) -> BoundaryZeroSet:
    """Zero set of ``u`` on the flat boundary ``Γ_ρ``.

    d=2: roots on ``(-ρ, ρ)`` by sign-change bracketing and Brent refinement,
    touching roots via local minimisation, and plateau intervals where
    ``|u| < plateau_rel · sup|u|`` over at least ``plateau_min``.
    d=3: dyadic cells of ``[-ρ, ρ]²`` whose centre value is below the cell
    half-diagonal times a finite-difference gradient bound.
    """
    d = dim or int(getattr(u, "dim", 2))
    if resolution >= 2 * rho:
        raise ValueError(f"resolution {resolution} coarser than the boundary segment")
    if d == 2:
        pm = 0.025 * 2 * rho if plateau_min is None else plateau_min
        roots, plateaus, _ = _roots_1d(_trace(u, 2), -rho, rho, resolution, plateau_rel, pm)
        scales = 2 * rho / 2.0 ** np.arange(coarsest, coarsest + levels)
        counts = np.array([len(np.unique(np.floor((roots + rho) / s))) for s in scales])
        zs = BoundaryZeroSet(2, roots, plateaus, {}, scales, counts, region=(-rho, rho))
    elif d == 3:
        cells, scales, counts = {}, [], []
        for k in range(coarsest, coarsest + levels):
            nk = 2**k
            s = 2 * rho / nk
            c1 = -rho + s * (np.arange(nk) + 0.5)
            C = np.array(np.meshgrid(c1, c1, indexing="ij")).reshape(2, -1).T
            p = np.c_[C, np.zeros(len(C))]
            val = np.abs(u(p))
            G = _grad_bound(u, C, s)
            covered = val <= (s / np.sqrt(2.0)) * G
            cells[float(s)] = C[covered]
            scales.append(s)
            counts.append(int(covered.sum()))
        zs = BoundaryZeroSet(3, np.zeros(0), [], cells, np.array(scales), np.array(counts),
                             region=(-rho, rho))
    else:
        raise ValueError(f"unsupported dimension {d}")
    zs.dim_estimate = box_count_dimension(zs)
    return zs


def box_count_dimension(zs: BoundaryZeroSet) -> float:
    """Least-squares slope of ``log count`` against ``log(1/scale)`` over the
    finest half of the scales; ``-inf`` for an empty set."""
    if len(zs.scales) < 4:
        raise ValueError("box counting needs at least 4 scales")
    if np.all(zs.counts == 0):
        return float("-inf")
    order = np.argsort(zs.scales)[::-1]
    s, n = zs.scales[order], zs.counts[order]
    half = len(s) // 2
    s, n = s[half:], n[half:]
    keep = n > 0
    if keep.sum() < 2:
        return 0.0
    slope = np.polyfit(np.log(1.0 / s[keep]), np.log(n[keep]), 1)[0]
    return float(slope)


# ---------------------------------------------------------------------------
# tangent sets


@dataclass
class TangentSet:
    center: np.ndarray
    zero_set: BoundaryZeroSet
    sequence: BlowupSequence
    homogeneous: bool
    dilation_gaps: dict


class _Rescaled:
    def __init__(self, u, center, lam, norm, dim):
        self.u, self.c, self.lam, self.norm, self.dim = u, center, lam, norm, dim

    def __call__(self, x):
        return self.u(self.c + self.lam * np.atleast_2d(x)) / self.norm


def _dilation_gap(zs: BoundaryZeroSet, rho: float) -> float:
    """Distance between ``ρ·Z ∩ region`` and ``Z``, in units of the finest scale."""
    lo, hi = zs.region
    if zs.dim == 2:
        Z = zs.roots
        img = rho * Z
        img = img[(img > lo) & (img < hi)]
        ref = Z[(Z > lo * min(1, rho)) & (Z < hi * min(1, rho))]
        if len(img) == 0 and len(ref) == 0:
            return 0.0
        if len(img) == 0 or len(ref) == 0:
            return float("inf")
        a = np.abs(img[:, None] - ref[None, :])
        return float(max(a.min(axis=1).max(), a.min(axis=0).max()))
    s = float(zs.scales[-1])
    Z = zs.cells[s]
    if len(Z) == 0:
        return 0.0
    img = rho * Z
    img = img[np.all(np.abs(img) < hi - s, axis=1)]
    if len(img) == 0:
        return 0.0
    dist, _ = cKDTree(Z).query(img)
    return float(dist.max() / s)


def tangent_set(zs: BoundaryZeroSet | None, y, lambdas, u, A0=None, rho: float = 0.9,
                resolution: float = 1e-3, tol: float | None = None) -> TangentSet:
    """Blow up ``u`` at the boundary zero ``y`` and extract the zero set of the
    limit snapshot on ``Γ_1``; homogeneity means dilation by ``1/2`` and ``2``
    leaves it unchanged within resolution."""
    y = np.asarray(y, dtype=float)
    d = len(y)
    lambdas = np.asarray(list(lambdas), dtype=float)
    if abs(float(u(y[None, :])[0])) > 1e-8 * max(1.0, float(np.max(np.abs(u(np.zeros((1, d))))))):
        if zs is None or zs.dim != 2 or not np.any(np.abs(zs.roots - y[0]) < resolution):
            raise ValueError(f"{y.tolist()} is not a detected zero")
    if np.linalg.norm(y) + lambdas.max() > rho + 1e-12:
        raise ValueError("translated rescalings leave the domain")
    seq = rescale_blowup(u, lambdas, A0, center=y, dim=d)
    w = _Rescaled(u, y, float(lambdas[-1]), float(seq.normalizers[-1]), d)
    res = resolution if d == 2 else None
    tz = boundary_zero_set(w, rho=1.0, resolution=res or 1e-3, dim=d)
    gaps = {r: _dilation_gap(tz, r) for r in (0.5, 2.0)}
    thr = (tol if tol is not None else (10 * resolution if d == 2 else 1.5))
    homogeneous = bool(all(g <= thr for g in gaps.values()))
    return TangentSet(y, tz, seq, homogeneous, gaps)
