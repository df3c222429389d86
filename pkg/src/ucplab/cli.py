"""Command-line entry point: ``ucplab <pipeline> -c cfg.ini -o outdir``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .pipeline import PIPELINES, run_experiment
from .report import emit_report

PRESET_DIR = Path(__file__).parent / "presets"


def preset_names() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.ini"))


def preset_path(name: str) -> Path:
    p = PRESET_DIR / f"{name}.ini"
    if not p.exists():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return p


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ucplab", description="Robin unique-continuation laboratory")
    sub = ap.add_subparsers(dest="pipeline", required=True)
    for name in PIPELINES:
        sp = sub.add_parser(name, help=f"run the {name} pipeline")
        src = sp.add_mutually_exclusive_group()
        src.add_argument("-c", "--config", type=Path, help="INI config file")
        src.add_argument("--preset", help="built-in config by name")
        sp.add_argument("-o", "--out", type=Path, help="output directory (default: config's output)")
        sp.add_argument("--no-svg", action="store_true", help="skip SVG plots")
    sub.add_parser("presets", help="list built-in configs")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.pipeline == "presets":
        print("\n".join(preset_names()))
        return 0
    try:
        if args.preset:
            cfg = load_config(preset_path(args.preset))
        elif args.config:
            cfg = load_config(args.config)
        else:
            cfg = RunConfig(catalog=args.pipeline == "verify")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = args.out or Path(cfg.output)
    if args.no_svg:
        cfg = replace(cfg, svg=False)
    rep = run_experiment(cfg, args.pipeline)
    emit_report(rep, out, svg=cfg.svg)
    for name, ok in sorted(rep.gates.items()):
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    if rep.error:
        print(f"error in stage {rep.error['stage']}: {rep.error['message']}", file=sys.stderr)
    return 0 if rep.passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
