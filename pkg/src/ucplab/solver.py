"""Meshing, assembly and linear solves under one import."""

from __future__ import annotations

from .fem import (
    BoundaryConditions,
    CompatibilityError,
    DiscreteSystem,
    EdgeValues,
    SolutionField,
    SolverError,
    assemble,
    boundary_flux,
    interpolate,
    solve_system,
    weak_residual,
)
from .mesh import Mesh, MeshError, build_mesh, load_mesh, mirror_mesh, save_mesh

__all__ = [
    "BoundaryConditions",
    "CompatibilityError",
    "DiscreteSystem",
    "EdgeValues",
    "Mesh",
    "MeshError",
    "SolutionField",
    "SolverError",
    "assemble",
    "boundary_flux",
    "build_mesh",
    "interpolate",
    "load_mesh",
    "mirror_mesh",
    "save_mesh",
    "solve_system",
    "weak_residual",
]
