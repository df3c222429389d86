"""Doubling index, Almgren frequency, the identities tying them together, and
the vanishing-order estimate read off the dyadic doubling logarithm."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .fields import AnalyticField
from .quadrature import gauss_legendre, half_ball_rule

__all__ = [
    "FrequencyError",
    "RadialProfile",
    "VanishingOrderEstimate",
    "as_field",
    "default_radii",
    "half_ball_mean",
    "radial_profile",
    "rigidity_check",
    "vanishing_order",
    "verify_identities",
]

DEFAULT_RULE = dict(n_radial=16, n_angular=64)


class FrequencyError(ValueError):
    pass


def as_field(v, dim: int = 2):
    """Anything with ``__call__`` and ``gradient``; strings become analytic fields."""
    if isinstance(v, str):
        return AnalyticField(v, dim=dim)
    if not hasattr(v, "gradient"):
        raise FrequencyError("field must provide a gradient (use AnalyticField for expressions)")
    return v


def _dim(v, default: int = 2) -> int:
    return int(getattr(v, "dim", default))


def default_radii(R: float = 1.0, n: int = 40, lo: float = 0.005, hi: float = 0.5) -> np.ndarray:
    return np.geomspace(lo * R, hi * R, n)


class _Sampler:
    """Evaluates ``v`` and ``∇v`` on half-ball rules, optionally through a
    linear map ``x ↦ L x`` and about a centre."""

    def __init__(self, v, mapping=None, center=None, rule=None):
        self.v = as_field(v)
        self.dim = _dim(self.v)
        self.L = None if mapping is None else np.asarray(mapping.matrix, dtype=float)
        self.center = np.zeros(self.dim) if center is None else np.asarray(center, dtype=float)
        self.rule = dict(DEFAULT_RULE, **(rule or {}))

    def points(self, x):
        y = x if self.L is None else x @ self.L.T
        return y + self.center

    def integrals(self, r: float):
        """``(⨍v², ⨍|∇v|²(r²-|x|²), ⨍ v x·∇v)`` over ``B_r^+``."""
        x, w = half_ball_rule(r, dim=self.dim, **self.rule)
        y = self.points(x)
        val = self.v(y)
        g = self.v.gradient(y)
        if self.L is not None:
            g = g @ self.L
        vol = w.sum()
        H = float(w @ (val * val) / vol)
        D = float(w @ (np.sum(g * g, axis=1) * (r * r - np.sum(x * x, axis=1))) / vol)
        X = float(w @ (val * np.sum(x * g, axis=1)) / vol)
        return H, D, X

    def H(self, r: float) -> float:
        x, w = half_ball_rule(r, dim=self.dim, **self.rule)
        val = self.v(self.points(x))
        return float(w @ (val * val) / w.sum())


def half_ball_mean(v, r: float, mapping=None, center=None, rule=None) -> float:
    """``⨍_{B_r^+} |v|²`` (through ``mapping`` when given)."""
    return _Sampler(v, mapping, center, rule).H(r)


@dataclass(frozen=True)
class RadialProfile:
    radii: np.ndarray
    H: np.ndarray
    N: np.ndarray
    F: np.ndarray
    dyadic_log: np.ndarray

    def __len__(self):
        return len(self.radii)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "H", "N", "F", "log2_sqrt_N"])
        for row in zip(self.radii, self.H, self.N, self.F, self.dyadic_log):
            w.writerow([repr(float(x)) for x in row])
        return buf.getvalue()

    def monotonicity_violations(self, slack: float = 1e-6) -> int:
        ok = np.isfinite(self.F) & np.isfinite(self.N)
        F, N = self.F[ok], self.N[ok]
        return int(np.sum(np.diff(F) < -slack) + np.sum(np.diff(N) < -slack))


def radial_profile(v, radii=None, mapping=None, center=None, rule=None,
                   strict: bool = True) -> RadialProfile:
    """``H``, ``N = H(2r)/H(r)``, ``F`` and ``log₂√N`` on the given radii.

    With ``strict=False`` radii where ``H`` underflows get NaN entries instead
    of raising.
    """
    radii = default_radii() if radii is None else np.asarray(list(radii), dtype=float)
    if radii.size == 0 or np.any(radii <= 0) or np.any(np.diff(radii) <= 0):
        raise FrequencyError("radii must be positive and strictly increasing")
    s = _Sampler(v, mapping, center, rule)
    H, N, F = (np.full(len(radii), np.nan) for _ in range(3))
    for k, r in enumerate(radii):
        h, d, _ = s.integrals(float(r))
        h2 = s.H(2.0 * float(r))
        if not (h > 1e-300) or not np.isfinite(h2):
            if strict:
                raise FrequencyError(f"H(r) below 1e-300 at r={r:.3g}: numerically zero on B_r^+")
            continue
        H[k], N[k], F[k] = h, h2 / h, d / h
    with np.errstate(invalid="ignore", divide="ignore"):
        dl = np.log2(np.sqrt(N))
    return RadialProfile(radii, H, N, F, dl)


# ---------------------------------------------------------------------------
# identities


def _d5(f, x: float, h: float) -> float:
    return (f(x - 2 * h) - 8 * f(x - h) + 8 * f(x + h) - f(x + 2 * h)) / (12 * h)


def verify_identities(v, r: float, R: float = 2.0, step: float = 0.01, n_s: int = 16,
                      mapping=None, rule=None) -> dict:
    """Gaps of the three derivative identities at radius ``r``.

    (i) ``H'`` (five-point difference) against ``2r⁻¹⨍v x·∇v`` and
    ``r⁻¹⨍|∇v|²(r²-|x|²)``, relative to ``H/r``; (ii) ``d log H / d log r``
    against ``F`` (absolute); (iii) ``N`` against ``exp(ln 2 ∫ F(2^s) ds)``
    over ``s ∈ [log₂ r, 1 + log₂ r]`` (relative).
    """
    h = step * r
    if r - 2 * h <= 0 or 2 * (r + 2 * h) > R:
        raise FrequencyError(f"r={r} too close to the domain edge for the difference stencil")
    s = _Sampler(v, mapping, None, rule)
    H, D, X = s.integrals(r)
    fd = _d5(s.H, r, h)
    via_x = 2.0 * X / r
    via_grad = D / r
    trio = np.array([fd, via_x, via_grad])
    scale = max(H / r, 1e-300)
    gap1 = float((trio.max() - trio.min()) / scale)

    F = D / H if H > 0 else 0.0
    lr = np.log(r)
    dlog = _d5(lambda t: np.log(s.H(np.exp(t))), lr, step)
    gap2 = abs(dlog - F)

    N = s.H(2 * r) / H
    a = np.log2(r)
    nodes, weights = gauss_legendre(n_s, a, a + 1.0)
    Fs = []
    for t in nodes:
        h_, d_, _ = s.integrals(float(2.0**t))
        Fs.append(d_ / h_)
    recon = float(np.exp(np.log(2.0) * np.dot(weights, Fs)))
    gap3 = abs(recon - N) / abs(N)
    return {
        "derivative": {"lhs": fd, "rhs": via_x, "rhs_alt": via_grad, "gap": gap1},
        "log_derivative": {"lhs": dlog, "rhs": F, "gap": gap2},
        "exp_integral": {"lhs": N, "rhs": recon, "gap": gap3},
    }


# ---------------------------------------------------------------------------
# vanishing order


@dataclass(frozen=True)
class VanishingOrderEstimate:
    m_hat: float
    m_rounded: int
    deviation: float
    classification: str
    inconclusive: bool = False
    candidates: tuple = ()

    @property
    def finite(self) -> bool:
        return self.classification == "finite order"


def vanishing_order(profile: RadialProfile, cutoff: float = 12.0,
                    tie_tol: float = 0.01) -> VanishingOrderEstimate:
    """Median of ``log₂√N`` over the smallest quartile of resolved radii."""
    ok = np.isfinite(profile.dyadic_log)
    r = profile.radii[ok]
    dl = profile.dyadic_log[ok]
    if len(profile.radii) < 8 or profile.radii[-1] / profile.radii[0] < 100.0 * (1 - 1e-12):
        raise FrequencyError("profile too short: need at least 8 radii spanning 2 decades")
    if len(r) == 0:
        return VanishingOrderEstimate(np.inf, 0, np.inf, "infinite-order suspicion")
    k = max(1, int(np.ceil(len(r) / 4)))
    m_hat = float(np.median(dl[np.argsort(r, kind="stable")[:k]]))
    lo = int(np.floor(m_hat))
    frac = m_hat - lo
    if abs(frac - 0.5) < tie_tol:
        m_rounded, inconclusive, cands = max(lo, 0), True, (max(lo, 0), lo + 1)
        deviation = 0.5
    else:
        m_rounded = max(int(np.rint(m_hat)), 0)
        inconclusive, cands = False, (m_rounded,)
        deviation = abs(m_hat - m_rounded)
    cls = "infinite-order suspicion" if m_hat > cutoff else "finite order"
    return VanishingOrderEstimate(m_hat, m_rounded, deviation, cls, inconclusive, cands)


# ---------------------------------------------------------------------------
# rigidity


def _mode_energies(v, r: float, n_modes: int = 16, n_theta: int = 128):
    th, w = gauss_legendre(n_theta, 0.0, np.pi)
    vals = v(np.c_[r * np.cos(th), r * np.sin(th)])
    total = float(w @ (vals * vals))
    E = []
    for m in range(n_modes + 1):
        c = np.cos(m * th)
        norm = float(w @ (c * c))
        coef = float(w @ (vals * c)) / norm
        E.append(coef * coef * norm)
    return np.array(E), total


def rigidity_check(v, s: float, t: float, tol: float = 1e-6, rule=None,
                   purity_threshold: float = 0.999) -> dict:
    """Compare ``F(s)`` and ``F(t)`` and decompose the half-circle traces at
    ``s``, ``(s+t)/2`` and ``t`` into the Neumann modes ``cos mθ``."""
    if not 0 < s < t:
        raise FrequencyError(f"need 0 < s < t, got s={s}, t={t}")
    v = as_field(v)
    if _dim(v) != 2:
        raise FrequencyError("rigidity check is implemented for d=2")
    smp = _Sampler(v, rule=rule)
    Fs, Ft = (d / h if h > 0 else np.nan for h, d, _ in (smp.integrals(s), smp.integrals(t)))
    purities, dominant = [], []
    for r in (s, 0.5 * (s + t), t):
        E, total = _mode_energies(v, r)
        m = int(np.argmax(E))
        dominant.append(m)
        purities.append(float(E[m] / total) if total > 0 else 0.0)
    flat = abs(Ft - Fs) < tol
    same = len(set(dominant)) == 1
    homogeneous = bool(flat and same and min(purities) > purity_threshold)
    return {
        "F_s": float(Fs),
        "F_t": float(Ft),
        "homogeneous": homogeneous,
        "dominant_mode": dominant[-1],
        "mode_purity": float(min(purities)),
    }
