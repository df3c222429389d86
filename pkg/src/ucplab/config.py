"""Run configuration: sectioned INI text with quoted expression strings."""

from __future__ import annotations

import configparser
import math
import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .expr import ExprError, parse_expr

__all__ = [
    "AnalysisSpec",
    "BoundarySpec",
    "CoefficientSpec",
    "ConfigError",
    "DomainSpec",
    "RunConfig",
    "dumps_config",
    "load_config",
    "loads_config",
]


class ConfigError(ValueError):
    def __init__(self, message: str, section: str | None = None, key: str | None = None):
        loc = f"[{section}]" + (f" {key}" if key else "") + ": " if section else ""
        super().__init__(loc + message)
        self.section = section
        self.key = key


INF = math.inf


@dataclass(frozen=True)
class DomainSpec:
    type: str = "half_ball"
    radius: float = 1.0
    phi: str = "0"
    h: float = 0.05
    grading: float | None = None
    h_sweep: tuple = ()
    dim: int = 2


@dataclass(frozen=True)
class CoefficientSpec:
    a11: str = "1"
    a12: str = "0"
    a22: str = "1"
    b1: str = "0"
    b2: str = "0"
    W1: str = "0"
    W2: str = "0"
    V: str = "0"
    eta: str = "0"
    lam: float = 0.5
    Lam: float = 2.0
    p: float = INF
    q: float = INF
    s: float = INF


@dataclass(frozen=True)
class BoundarySpec:
    flat: str = "robin"
    flat_data: str = "0"
    arc: str = "dirichlet"
    arc_data: str = "0"
    exact: str = ""
    compat: str = "error"


@dataclass(frozen=True)
class AnalysisSpec:
    r_min: float = 0.005
    r_max: float = 0.5
    n_radii: int = 40
    lambdas: tuple = (0.4, 0.2, 0.1, 0.05)
    cutoff: float = 12.0
    m_hint: int | None = None
    rho: float = 0.9
    resolution: float = 1e-3
    reflect: bool = False
    normalization: str = "mapped"
    ball_radius: float = 1.0
    levels: int = 8
    seed: int = 20240611
    n_mixtures: int = 5
    gauge_tol: float = 0.25
    reflect_tol: float = INF
    min_ratio: float = 0.0
    min_order: float = 0.0


@dataclass(frozen=True)
class RunConfig:
    name: str = "run"
    field: str = ""
    catalog: bool = False
    output: str = "out"
    svg: bool = True
    domain: DomainSpec = dataclasses.field(default_factory=DomainSpec)
    coefficients: CoefficientSpec = dataclasses.field(default_factory=CoefficientSpec)
    boundary: BoundarySpec = dataclasses.field(default_factory=BoundarySpec)
    analysis: AnalysisSpec = dataclasses.field(default_factory=AnalysisSpec)

    @property
    def analytic(self) -> bool:
        return bool(self.field) or self.catalog


SECTIONS = {"domain": DomainSpec, "coefficients": CoefficientSpec,
            "boundary": BoundarySpec, "analysis": AnalysisSpec}
EXPR_KEYS = {
    "coefficients": {"a11", "a12", "a22", "b1", "b2", "W1", "W2", "V", "eta"},
    "boundary": {"flat_data", "arc_data", "exact"},
    "domain": {"phi"},
    "run": {"field"},
}
CHOICES = {
    ("domain", "type"): ("half_ball", "graph"),
    ("boundary", "flat"): ("robin", "neumann"),
    ("boundary", "arc"): ("dirichlet", "neumann"),
    ("boundary", "compat"): ("error", "project"),
    ("analysis", "normalization"): ("mapped", "plain"),
}


def _unquote(s: str) -> str:
    s = s.strip()
    if len(s) >= 2 and s[0] == s[-1] and s[0] in "\"'":
        return s[1:-1]
    return s


def _convert(raw: str, default, section: str, key: str):
    text = _unquote(raw)
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(f"not a boolean: {text!r}")
            return low in ("true", "yes", "1")
        if isinstance(default, tuple):
            return tuple(float(t) for t in text.split(",") if t.strip())
        if isinstance(default, int) or (default is None and key == "m_hint"):
            return None if text.lower() in ("", "none") else int(text)
        if isinstance(default, float) or default is None:
            return None if text.lower() in ("", "none") else float(text)
        return text
    except ValueError as exc:
        raise ConfigError(str(exc), section, key) from None


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return f'"{value}"'
    return str(value)


def _section(parser, name: str, cls):
    kw = {}
    if not parser.has_section(name):
        return cls()
    defaults = {f.name: f.default for f in fields(cls)}
    for key, raw in parser.items(name):
        if key not in defaults:
            raise ConfigError("unknown key", name, key)
        kw[key] = _convert(raw, defaults[key], name, key)
    return cls(**kw)


def _check_expr(text: str, dim: int, section: str, key: str):
    if not text:
        return
    try:
        parse_expr(text, dim=dim)
    except ExprError as exc:
        raise ConfigError(f"parse error: {exc}", section, key) from None


def validate(cfg: RunConfig) -> RunConfig:
    d = cfg.domain.dim
    if d not in (2, 3):
        raise ConfigError(f"dimension must be 2 or 3, got {d}", "domain", "dim")
    if d == 3 and not cfg.analytic:
        raise ConfigError("d=3 is available only with an analytic field", "domain", "dim")
    for (sec, key), allowed in CHOICES.items():
        val = getattr(getattr(cfg, sec), key)
        if val not in allowed:
            raise ConfigError(f"must be one of {', '.join(allowed)}, got {val!r}", sec, key)
    for sec, keys in EXPR_KEYS.items():
        obj = cfg if sec == "run" else getattr(cfg, sec)
        for key in sorted(keys):
            _check_expr(getattr(obj, key), d, sec, key)
    c = cfg.coefficients
    if not c.p > d:
        raise ConfigError(f"requires p > d (p={c.p}, d={d})", "coefficients", "p")
    if not c.q > d / 2:
        raise ConfigError(f"requires q > d/2 (q={c.q}, d={d})", "coefficients", "q")
    if not c.s > d - 1:
        raise ConfigError(f"requires s > d-1 (s={c.s}, d={d})", "coefficients", "s")
    if not 0 < c.lam <= c.Lam:
        raise ConfigError("ellipticity bounds must satisfy 0 < lam <= Lam", "coefficients", "lam")
    dm = cfg.domain
    if not dm.h > 0 or any(h <= 0 for h in dm.h_sweep):
        raise ConfigError("mesh sizes must be positive", "domain", "h")
    if not dm.radius > 0:
        raise ConfigError("radius must be positive", "domain", "radius")
    a = cfg.analysis
    if not 0 < a.r_min < a.r_max:
        raise ConfigError("need 0 < r_min < r_max", "analysis", "r_min")
    if 2 * a.r_max > a.ball_radius * (1 + 1e-12):
        raise ConfigError("doubled radii leave the analysis ball", "analysis", "r_max")
    if a.ball_radius > dm.radius * (1 + 1e-12):
        raise ConfigError("analysis ball larger than the domain", "analysis", "ball_radius")
    if any(not 0 < lam <= a.ball_radius for lam in a.lambdas):
        raise ConfigError("lambdas must lie in (0, ball_radius]", "analysis", "lambdas")
    if a.n_radii < 2:
        raise ConfigError("need at least 2 radii", "analysis", "n_radii")
    return cfg


def loads_config(text: str, name: str = "run") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    for sec in parser.sections():
        if sec != "run" and sec not in SECTIONS:
            raise ConfigError("unknown section", sec)
    run = {}
    if parser.has_section("run"):
        defaults = {f.name: f.default for f in fields(RunConfig) if f.name not in SECTIONS}
        for key, raw in parser.items("run"):
            if key not in defaults:
                raise ConfigError("unknown key", "run", key)
            run[key] = _convert(raw, defaults[key], "run", key)
    run.setdefault("name", name)
    parts = {sec: _section(parser, sec, cls) for sec, cls in SECTIONS.items()}
    return validate(RunConfig(**run, **parts))


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return loads_config(path.read_text(), name=path.stem)


def dumps_config(cfg: RunConfig) -> str:
    """INI text that :func:`loads_config` maps back to ``cfg``."""
    lines = ["[run]"]
    for f in fields(RunConfig):
        if f.name in SECTIONS:
            continue
        lines.append(f"{f.name} = {_fmt(getattr(cfg, f.name))}")
    for sec in SECTIONS:
        lines += ["", f"[{sec}]"]
        obj = getattr(cfg, sec)
        for f in fields(obj):
            v = getattr(obj, f.name)
            lines.append(f"{f.name} = {'none' if v is None else _fmt(v)}")
    return "\n".join(lines) + "\n"
