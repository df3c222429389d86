"""Numerical laboratory for unique continuation at Robin boundaries.

Submodules: ``geometry`` (half-balls, graph domains, changes of variables),
``fields`` (coefficient sets), ``solver`` (P1 finite elements), ``transforms``
(gauge and reflection), ``frequency`` (Almgren-type profiles), ``asymptotics``
(blowups, homogeneous fits, boundary zero sets) and ``cli``.
"""

from __future__ import annotations

from .fields import AnalyticField, CoefficientSet
from .geometry import FullBall, GraphDomain, HalfBall, normalizing_map
from .solver import BoundaryConditions, SolutionField, assemble, build_mesh, solve_system

__version__ = "0.1.0"

__all__ = [
    "AnalyticField",
    "BoundaryConditions",
    "CoefficientSet",
    "FullBall",
    "GraphDomain",
    "HalfBall",
    "SolutionField",
    "assemble",
    "build_mesh",
    "normalizing_map",
    "solve_system",
]
