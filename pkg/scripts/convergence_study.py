#!/usr/bin/env python3
"""Mesh-refinement study for the manufactured Robin problem.

Prints, per h: L2 error of u, conormal residual of u and of the gauged v on
Γ ∩ B_rho, and the interior weak residual of the evenly reflected v, with
observed rates between consecutive meshes.  Optionally writes a CSV.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from ucplab.fields import CoefficientSet
from ucplab.geometry import HalfBall
from ucplab.solver import BoundaryConditions, assemble, build_mesh, solve_system
from ucplab.transforms import conormal_residual, gauge_transform, reflect_even_extension, solve_gauge_potential

EXACT = "exp(y)*cos(x)"


def study(hs, radius: float = 2.0, rho: float = 0.9):
    c = CoefficientSet.laplace(eta="-1")
    exact = lambda p: np.exp(p[:, 1]) * np.cos(p[:, 0])
    rows = []
    for h in hs:
        mesh = build_mesh(HalfBall(radius), h, breaks=(1.0,))
        u = solve_system(assemble(c, mesh, BoundaryConditions.robin_dirichlet(EXACT)))
        g = gauge_transform(u, c, solve_gauge_potential(c, mesh), rho=rho)
        refl = reflect_even_extension(g.v, g.transformed, ball_radius=1.0).residual(rho=rho)
        rows.append((h, mesh.n_vertices, u.l2_error(exact),
                     conormal_residual(u, CoefficientSet.laplace(), rho), g.conormal_residual, refl))
    return np.array(rows)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--h", type=float, nargs="+", default=[0.1, 0.05, 0.025])
    ap.add_argument("--radius", type=float, default=2.0)
    ap.add_argument("--rho", type=float, default=0.9)
    ap.add_argument("--csv", type=Path, default=None)
    args = ap.parse_args(argv)

    rows = study(args.h, args.radius, args.rho)
    header = ["h", "n_vertices", "l2_error", "u_conormal", "v_conormal", "reflect_residual"]
    print("  ".join(f"{k:>16s}" for k in header))
    for i, r in enumerate(rows):
        print("  ".join(f"{v:16.6g}" for v in r))
        if i:
            rate = rows[i - 1, [2, 4, 5]] / r[[2, 4, 5]]
            print(f"{'ratios':>16s}  {'':16s}  {rate[0]:16.3f}  {'':16s}  {rate[1]:16.3f}  {rate[2]:16.3f}")
    if args.csv:
        lines = [",".join(header)] + [",".join(repr(float(v)) for v in r) for r in rows]
        args.csv.write_text("\n".join(lines) + "\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
