"""Report emission: summary.json, CSV tables and small SVG line plots."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .pipeline import Report

__all__ = ["emit_report", "metrics_csv", "svg_line_plot"]


def metrics_csv(metrics: dict) -> str:
    lines = ["key,value"]
    for k, v in sorted(metrics.items()):
        if isinstance(v, bool):
            cell = "true" if v else "false"
        elif isinstance(v, float):
            cell = repr(v)
        else:
            cell = str(v)
        lines.append(f"{k},{cell}")
    return "\n".join(lines) + "\n"


def svg_line_plot(xlabel: str, ylabel: str, x, y, logx: bool = False, logy: bool = False,
                  width: int = 480, height: int = 320) -> str:
    """Polyline with a frame and min/max tick labels."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y)
    if logx:
        ok &= x > 0
    if logy:
        ok &= y > 0
    x, y = x[ok], y[ok]
    tx = np.log10(x) if logx else x
    ty = np.log10(y) if logy else y
    m = 50
    w, h = width - 2 * m, height - 2 * m
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect x="{m}" y="{m}" width="{w}" height="{h}" fill="none" stroke="black"/>']
    if len(tx) >= 1:
        x0, x1 = float(tx.min()), float(tx.max())
        y0, y1 = float(ty.min()), float(ty.max())
        x1 = x1 if x1 > x0 else x0 + 1.0
        y1 = y1 if y1 > y0 else y0 + 1.0
        px = m + (tx - x0) / (x1 - x0) * w
        py = m + h - (ty - y0) / (y1 - y0) * h
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="steelblue" stroke-width="1.5"/>')
        fmt = lambda v, lg: f"{10**v:.3g}" if lg else f"{v:.3g}"
        parts += [
            f'<text x="{m}" y="{m + h + 15}" font-size="10">{fmt(x0, logx)}</text>',
            f'<text x="{m + w}" y="{m + h + 15}" font-size="10" text-anchor="end">{fmt(x1, logx)}</text>',
            f'<text x="{m - 4}" y="{m + h}" font-size="10" text-anchor="end">{fmt(y0, logy)}</text>',
            f'<text x="{m - 4}" y="{m + 8}" font-size="10" text-anchor="end">{fmt(y1, logy)}</text>',
        ]
    parts += [
        f'<text x="{m + w / 2}" y="{height - 10}" font-size="12" text-anchor="middle">{xlabel}</text>',
        f'<text x="12" y="{m + h / 2}" font-size="12" transform="rotate(-90 12 {m + h / 2})" '
        f'text-anchor="middle">{ylabel}</text>',
        "</svg>",
    ]
    return "\n".join(parts) + "\n"


def _finite_json(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _finite_json(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite_json(v) for v in obj]
    return obj


def emit_report(report: Report, directory, svg: bool = True) -> list[Path]:
    """Write the report files; returns the paths written (sorted)."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def write(name: str, text: str):
        p = out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
        written.append(p)

    summary = _finite_json(report.summary())
    if report.metrics:
        write("metrics.csv", metrics_csv(report.metrics))
        summary["tables"] = sorted(set(summary["tables"]) | {"metrics.csv"})
    write("summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for name in sorted(report.tables):
        write(name, report.tables[name])
    if svg:
        for name in sorted(report.svgs):
            write(name, svg_line_plot(*report.svgs[name]))
    return sorted(written)
