"""Built-in fields: Neumann-harmonic test fields, exact Robin solutions with a
prescribed vanishing order at the origin, and 3-d nodal presets."""

from __future__ import annotations

import numpy as np

__all__ = [
    "NEUMANN_HARMONIC",
    "NODAL_3D",
    "ROBIN_EXACT",
    "neumann_catalog",
    "random_mixtures",
]


def _mode(m: int) -> str:
    if m == 0:
        return "1"
    return f"r^{m}*cos({m}*theta)"


# homogeneous Neumann-harmonic modes on the half-disk
NEUMANN_HARMONIC = {f"mode{m}": _mode(m) for m in range(5)}


def random_mixtures(n: int = 5, seed: int = 20240611, max_mode: int = 4) -> dict[str, str]:
    """Random combinations of the pure modes (fixed seed, deterministic strings)."""
    rng = np.random.default_rng(seed)
    out = {}
    for k in range(n):
        coef = rng.normal(size=max_mode + 1)
        terms = [f"({c:.6f})*{_mode(m)}" for m, c in enumerate(coef)]
        out[f"mixture{k}"] = " + ".join(terms)
    return out


def neumann_catalog(n_mixtures: int = 5, seed: int = 20240611) -> dict[str, str]:
    return {**NEUMANN_HARMONIC, **random_mixtures(n_mixtures, seed)}


# harmonic in the upper half-plane with u_y = u on y = 0, i.e. the Robin
# condition with eta = -1; key = vanishing order at the origin
_E2 = "(exp(2*y) + exp(-2*y)/3)"
ROBIN_EXACT = {
    0: "exp(y)*cos(x)",
    1: "exp(y)*sin(x)",
    2: f"{_E2}*cos(2*x) - (4/3)*exp(y)*cos(x)",
    3: f"{_E2}*sin(2*x) - (8/3)*exp(y)*sin(x)",
}

# 3-d analytic presets: expression and the dimension of the zero set on {x3 = 0}
NODAL_3D = {
    "cross": ("x1*x2", 1),
    "line": ("x1", 1),
    "points": ("x1^2 + x2^2 - 2*x3^2", 0),
}
