#!/usr/bin/env python3
"""Run every built-in preset through its natural pipeline and print the gates.

    python3 scripts/run_presets.py -o out/presets [--only neumann_order2 ...]
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from ucplab.cli import preset_names, preset_path
from ucplab.config import load_config
from ucplab.pipeline import run_experiment
from ucplab.report import emit_report

PIPELINE = {
    "verify_catalog": "verify",
    "neumann_order1": "frequency",
    "neumann_order2": "frequency",
    "neumann_order3": "frequency",
    "frequency_robin": "frequency",
    "robin_gauge": "gauge",
    "robin_convergence": "solve",
    "neumann_convergence": "solve",
    "reflect_mode3": "gauge",
    "reflect_anisotropic": "gauge",
    "blowup_two_mode": "blowup",
    "blowup_homogeneous": "blowup",
    "robin_order1": "blowup",
    "robin_order2": "blowup",
    "robin_order3": "nodal",
    "nodal_cross": "nodal",
    "nodal_line": "nodal",
    "nodal_points": "nodal",
}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("-o", "--out", type=Path, default=Path("out/presets"))
    ap.add_argument("--only", nargs="*", default=None)
    ap.add_argument("--no-svg", action="store_true")
    args = ap.parse_args(argv)

    names = args.only or preset_names()
    failed = []
    for name in names:
        pipeline = PIPELINE.get(name, "solve")
        t0 = time.perf_counter()
        rep = run_experiment(load_config(preset_path(name)), pipeline)
        emit_report(rep, args.out / name, svg=not args.no_svg)
        dt = time.perf_counter() - t0
        gates = " ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in sorted(rep.gates.items()))
        print(f"{name:22s} {pipeline:9s} {dt:6.1f}s  {gates}")
        if not rep.passed:
            failed.append(name)
    if failed:
        print("failed:", ", ".join(failed), file=sys.stderr)
    return 1 if failed else 0


if __name__ == "__main__":
    raise SystemExit(main())
