"""Experiment orchestration: solve -> gauge -> flatten/normalize -> reflect ->
analyses, with every stage's residuals recorded in a :class:`Report`."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .asymptotics import (
    BlowupError,
    boundary_zero_set,
    fit_homogeneous,
    rescale_blowup,
    tangent_set,
)
from .catalog import neumann_catalog
from .config import RunConfig
from .fem import BoundaryConditions, SolutionField, assemble, interpolate, solve_system
from .fields import AnalyticField, CoefficientSet, pushforward_coefficients
from .frequency import radial_profile, rigidity_check, vanishing_order, verify_identities
from .geometry import (
    GraphDomain,
    HalfBall,
    flatten_map,
    normalizing_map,
    random_spd,
    theta_matrix,
)
from .mesh import FLAT, build_mesh
from .transforms import (
    conormal_residual,
    gauge_transform,
    pushforward_field,
    reflect_even_extension,
    solve_gauge_potential,
)

__all__ = ["PIPELINES", "Report", "StageError", "run_experiment"]

PIPELINES = ("solve", "gauge", "frequency", "blowup", "nodal", "verify")
SOLVER_GATE = 1e-10


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"stage {stage!r} failed: {type(exc).__name__}: {exc}")
        self.stage = stage
        self.cause = exc


@dataclass
class Report:
    name: str
    pipeline: str
    metrics: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    svgs: dict = field(default_factory=dict)
    gates: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    stages: list = field(default_factory=list)
    error: dict | None = None

    @property
    def passed(self) -> bool:
        return self.error is None and all(self.gates.values())

    def gate(self, name: str, ok) -> None:
        self.gates[name] = bool(ok) and self.gates.get(name, True)

    def metric(self, key: str, value) -> None:
        if isinstance(value, (bool, np.bool_)):
            value = bool(value)
        elif isinstance(value, (int, np.integer)):
            value = int(value)
        elif isinstance(value, (float, np.floating)):
            value = float(value)
        self.metrics[key] = value

    @contextmanager
    def stage(self, name: str):
        try:
            yield
        except StageError:
            raise
        except Exception as exc:  # noqa: BLE001 - stage failures are reported, not swallowed
            raise StageError(name, exc) from exc
        self.stages.append(name)

    def summary(self) -> dict:
        out = {
            "name": self.name,
            "pipeline": self.pipeline,
            "stages": list(self.stages),
            "passed": self.passed,
            "gates": dict(sorted(self.gates.items())),
            "metrics": {k: _jsonable(v) for k, v in sorted(self.metrics.items())},
            "tables": sorted(self.tables),
        }
        out.update({k: v for k, v in sorted(self.extra.items())})
        if self.error is not None:
            out["error"] = self.error
        return out


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    return "\n".join(lines) + "\n"


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("UCPLAB_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# problem set-up


def coefficient_set(cfg: RunConfig) -> CoefficientSet:
    c = cfg.coefficients
    return CoefficientSet.from_expressions(
        dim=2, A=[c.a11, c.a12, c.a22], b=[c.b1, c.b2], W=[c.W1, c.W2], V=c.V, eta=c.eta,
        ellipticity=(c.lam, c.Lam), integrability=(c.p, c.q, c.s),
    )


def _domain(cfg: RunConfig):
    d = cfg.domain
    if d.type == "graph":
        return GraphDomain(d.phi, radius=d.radius)
    return HalfBall(d.radius, 2)


def _mesh(cfg: RunConfig, h: float):
    dom = _domain(cfg)
    br = cfg.analysis.ball_radius
    breaks = (br,) if isinstance(dom, HalfBall) and br < dom.radius else ()
    return build_mesh(dom, h, grading=cfg.domain.grading, breaks=breaks)


def _boundary(cfg: RunConfig):
    b = cfg.boundary
    bc = BoundaryConditions()
    if b.flat == "robin":
        bc.robin = (FLAT,)
        if b.flat_data.strip() not in ("0", "0.0"):
            bc.neumann[FLAT] = b.flat_data
    else:
        bc.neumann[FLAT] = b.flat_data
    if b.arc == "dirichlet":
        bc.dirichlet["arc"] = b.arc_data
    else:
        bc.neumann["arc"] = b.arc_data
    return bc


@dataclass
class Prepared:
    h: float
    field: object
    coefficients: CoefficientSet | None
    A0: np.ndarray
    row: dict


def _solve_chain(cfg: RunConfig, h: float, through: str) -> Prepared:
    """Solve on one mesh and, unless ``through == "solve"``, gauge, flatten,
    normalize and (optionally) reflect."""
    a = cfg.analysis
    row = {"h": h}
    c = coefficient_set(cfg)
    mesh = _mesh(cfg, h)
    row["n_vertices"] = mesh.n_vertices
    bc = _boundary(cfg)
    mean_zero = not bc.dirichlet
    u = solve_system(assemble(c, mesh, bc, mean_zero=mean_zero, compat=cfg.boundary.compat))
    row["solver_residual"] = u.residual
    if mean_zero:
        row["solution_mean"] = u.mean()
    if cfg.boundary.exact:
        exact = AnalyticField(cfg.boundary.exact)
        shift = interpolate(mesh, exact).mean() if mean_zero else 0.0
        row["l2_error"] = u.with_values(u.values + shift).l2_error(exact)
    if through == "solve":
        return Prepared(h, u, c, c.A(np.zeros((1, 2)))[0], row)

    psi = solve_gauge_potential(c, mesh, ball_radius=a.ball_radius)
    g = gauge_transform(u, c, psi, rho=a.rho)
    row["gauge_residual"] = g.conormal_residual
    row["u_conormal_residual"] = conormal_residual(u, c, a.rho)
    v, tc = g.v, g.transformed

    # flatten when the boundary is curved or the conormal is not normal
    flat_pts = mesh.vertices[mesh.boundary_vertices(FLAT)]
    flat_pts = flat_pts[np.linalg.norm(flat_pts, axis=1) < a.ball_radius]
    if cfg.domain.type == "graph" or np.max(np.abs(tc.A(flat_pts)[:, 0, 1]), initial=0) > 1e-12:
        dom = _domain(cfg) if cfg.domain.type == "graph" else GraphDomain("0", radius=cfg.domain.radius)
        phi_map = flatten_map(dom, boundary_coefficients=tc.A)
        v = pushforward_field(v, phi_map)
        tc = pushforward_coefficients(tc, phi_map)
    A0 = tc.A(np.zeros((1, 2)))[0]
    L = normalizing_map(A0)
    if not np.allclose(L.matrix, np.eye(2), atol=1e-14, rtol=0):
        v = pushforward_field(v, L)
        tc = pushforward_coefficients(tc, L)
    fv = v.mesh.vertices[v.mesh.boundary_vertices(FLAT)]
    fv = fv[np.linalg.norm(fv, axis=1) < a.ball_radius]
    row["flat_offdiag_max"] = float(np.max(np.abs(tc.A(fv)[:, 0, 1]), initial=0.0))
    if a.reflect:
        # the gauge cancels the conormal term only inside the analysis ball
        rp = reflect_even_extension(v, tc, ball_radius=a.ball_radius)
        row["reflect_residual"] = rp.residual(rho=a.rho)
    return Prepared(h, v, tc, tc.A(np.zeros((1, 2)))[0], row)


def _analytic_chain(cfg: RunConfig, h: float) -> Prepared:
    d = cfg.domain.dim
    v = AnalyticField(cfg.field, dim=d)
    row = {"h": h}
    A0 = np.eye(d)
    if d == 2:
        c = coefficient_set(cfg)
        A0 = c.A(np.zeros((1, 2)))[0]
        if cfg.analysis.reflect:
            mesh = build_mesh(HalfBall(cfg.domain.radius), h, grading=cfg.domain.grading)
            row["n_vertices"] = mesh.n_vertices
            rp = reflect_even_extension(interpolate(mesh, v), c.with_(eta=lambda p: np.zeros(len(p))))
            row["reflect_residual"] = rp.residual()
    return Prepared(h, v, None, A0, row)


SWEEP_RATIOS = (("gauge_residual", "min_ratio"), ("reflect_residual", "min_ratio"),
                ("l2_error", "min_order"))


def _prepare(cfg: RunConfig, through: str, rep: Report) -> Prepared:
    hs = tuple(cfg.domain.h_sweep) or (cfg.domain.h,)
    with rep.stage("solve" if not cfg.analytic else "field"):
        if cfg.analytic:
            work = lambda h: _analytic_chain(cfg, h)
        else:
            work = lambda h: _solve_chain(cfg, h, through)
        with ThreadPoolExecutor(max_workers=min(_threads(), len(hs))) as pool:
            results = list(pool.map(work, hs))
    rows = [r.row for r in results]
    cols = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    rep.tables["sweep.csv"] = _csv(cols, [[r.get(k, "") for k in cols] for r in rows])
    final = results[-1]
    for k, v in final.row.items():
        rep.metric(k, v)
    if "solver_residual" in final.row:
        rep.gate("solver_residual", max(r["solver_residual"] for r in rows) <= SOLVER_GATE)
    if "solution_mean" in final.row:
        rep.gate("mean_zero", max(abs(r["solution_mean"]) for r in rows) <= 1e-10)
    if "gauge_residual" in final.row:
        rep.gate("gauge_residual", final.row["gauge_residual"] <= cfg.analysis.gauge_tol)
    if "reflect_residual" in final.row:
        rep.gate("reflect_residual", final.row["reflect_residual"] <= cfg.analysis.reflect_tol)
    if len(rows) > 1:
        for key, knob in SWEEP_RATIOS:
            if key not in final.row:
                continue
            vals = np.array([r[key] for r in rows])
            hh = np.array([r["h"] for r in rows])
            ratio = vals[:-1] / vals[1:]
            order = np.log(ratio) / np.log(hh[:-1] / hh[1:])
            stat = ratio.min() if knob == "min_ratio" else order.min()
            rep.metric(f"{key}_{'ratio' if knob == 'min_ratio' else 'order'}_min", stat)
            rep.gate(f"{key}_rate", stat >= getattr(cfg.analysis, knob))
    return final


# ---------------------------------------------------------------------------
# analyses


def _radii(cfg: RunConfig) -> np.ndarray:
    a = cfg.analysis
    return np.geomspace(a.r_min, a.r_max, a.n_radii)


def _frequency(cfg: RunConfig, prep: Prepared, rep: Report):
    with rep.stage("frequency"):
        prof = radial_profile(prep.field, _radii(cfg), strict=False)
        vo = vanishing_order(prof, cutoff=cfg.analysis.cutoff)
    rep.tables["profile.csv"] = prof.to_csv()
    rep.extra["profile"] = {
        "r": [float(x) for x in prof.radii],
        "N": [float(x) if math.isfinite(x) else repr(float(x)) for x in prof.N],
        "F": [float(x) if math.isfinite(x) else repr(float(x)) for x in prof.F],
    }
    rep.metric("m_hat", vo.m_hat)
    rep.metric("m_rounded", vo.m_rounded)
    rep.metric("deviation", vo.deviation)
    rep.metric("inconclusive", vo.inconclusive)
    rep.metric("classification", vo.classification)
    rep.metric("monotonicity_violations", prof.monotonicity_violations())
    rep.svgs["profile_F.svg"] = ("r", "F", prof.radii, prof.F, True, False)
    rep.svgs["profile_log2_sqrt_N.svg"] = ("r", "log2 sqrt N", prof.radii, prof.dyadic_log, True, False)
    return vo


def _blowup(cfg: RunConfig, prep: Prepared, rep: Report):
    a = cfg.analysis
    m = a.m_hint
    if m is None:
        m = _frequency(cfg, prep, rep).m_rounded
    rep.metric("m_hint", m)
    with rep.stage("blowup"):
        try:
            seq = rescale_blowup(prep.field, a.lambdas, prep.A0, normalization=a.normalization,
                                 dim=cfg.domain.dim)
        except BlowupError as exc:
            rep.metric("infinite_order_flag", True)
            raise exc
        fit = fit_homogeneous(seq, m, strict=False)
    rows = []
    for k, lam in enumerate(seq.lambdas):
        rep.tables[f"snapshots/lambda_{lam:.6f}.csv"] = seq.snapshot_csv(k)
        rows.append([lam, seq.normalizers[k], seq.mean_square(k), fit.residuals[k]])
    rep.tables["fits.csv"] = _csv(["lambda", "normalizer", "mean_square", "residual"], rows)
    rep.tables["fit_coefficients.csv"] = _csv(["index", "coefficient"], enumerate(fit.coefficients))
    rep.metric("fit_residual", fit.residual)
    rep.metric("fit_convergent", fit.convergent)
    if len(fit.residuals) >= 2:
        rep.metric("fit_residual_ratio_last", fit.residuals[-1] / fit.residuals[-2]
                   if fit.residuals[-2] > 0 else 0.0)
    rep.gate("fit_consistent", fit.residual <= 0.5)
    if a.normalization == "plain" or np.allclose(prep.A0, np.eye(len(prep.A0))):
        worst = max(abs(seq.mean_square(k) - 1.0) for k in range(len(seq.lambdas)))
        rep.gate("blowup_normalization", worst < 1e-6)


def _nodal(cfg: RunConfig, prep: Prepared, rep: Report):
    a = cfg.analysis
    d = cfg.domain.dim
    with rep.stage("nodal"):
        zs = boundary_zero_set(prep.field, rho=a.rho, resolution=a.resolution, dim=d, levels=a.levels)
    rep.tables["zeros.csv"] = zs.to_csv()
    rep.tables["boxcount.csv"] = zs.boxcount_csv()
    rep.svgs["boxcount.svg"] = ("1/scale", "count", 1.0 / zs.scales, zs.counts, True, True)
    rep.metric("dim_estimate", zs.dim_estimate)
    if d == 2:
        rep.metric("n_roots", len(zs.roots))
        rep.metric("n_plateaus", len(zs.plateaus))
        rep.extra["roots"] = [float(r) for r in zs.roots]
        rep.gate("finite_zero_set", len(zs.plateaus) == 0)
    else:
        rep.gate("dimension_bound", zs.dim_estimate <= d - 2 + 0.15)
    y = np.zeros(d)
    is_zero = (d == 2 and np.any(np.abs(zs.roots) < a.resolution)) or (
        d == 3 and abs(float(prep.field(y[None, :])[0])) < 1e-12)
    if is_zero:
        if d == 2:
            y[0] = float(zs.roots[np.argmin(np.abs(zs.roots))])
        with rep.stage("tangent"):
            ts = tangent_set(zs, y, a.lambdas, prep.field, prep.A0, rho=a.rho, resolution=a.resolution)
        rep.metric("tangent_homogeneous", ts.homogeneous)
        rep.metric("tangent_dim_estimate", ts.zero_set.dim_estimate)


def _verify(cfg: RunConfig, rep: Report):
    a = cfg.analysis
    radii = _radii(cfg)
    fields_ = neumann_catalog(a.n_mixtures, a.seed) if cfg.catalog else {"field": cfg.field}
    id_rows, prof_rows = [], []
    worst = {"F_dev": 0.0, "N_dev": 0.0, "identity_gap": 0.0, "exp_integral_gap": 0.0}
    violations = 0
    with rep.stage("verify"):
        for name, expr in fields_.items():
            v = AnalyticField(expr)
            prof = radial_profile(v, radii)
            violations += prof.monotonicity_violations()
            for row in zip(prof.radii, prof.H, prof.N, prof.F, prof.dyadic_log):
                prof_rows.append([name, *row])
            if name.startswith("mode"):
                m = int(name[4:])
                worst["F_dev"] = max(worst["F_dev"], float(np.max(np.abs(prof.F - 2 * m))))
                worst["N_dev"] = max(worst["N_dev"], float(np.max(np.abs(prof.N - 4.0**m))))
                rc = rigidity_check(v, 0.3, 0.6)
                rep.gate("rigidity_homogeneous", rc["homogeneous"] and rc["dominant_mode"] == m)
            for r in (0.2, 0.4, 0.6):
                ids = verify_identities(v, r)
                for key, item in ids.items():
                    id_rows.append([name, r, key, item["lhs"], item["rhs"], item["gap"]])
                    slot = "exp_integral_gap" if key == "exp_integral" else "identity_gap"
                    worst[slot] = max(worst[slot], item["gap"])
        rng = np.random.default_rng(a.seed)
        spd_rows = []
        for k in range(20):
            A0 = random_spd(rng, 2 + k % 2)
            T = theta_matrix(A0)
            L = normalizing_map(A0).matrix
            d = len(A0)
            e1 = float(np.max(np.abs(L @ A0 @ L.T - np.eye(d))))
            e2 = float(np.max(np.abs((T @ A0 @ T.T)[:-1, -1])))
            e3 = float(np.max(np.abs(L[-1, :-1])))
            spd_rows.append([k, d, e1, e2, e3, float(L[-1, -1])])
    rep.tables["profile.csv"] = _csv(["field", "r", "H", "N", "F", "log2_sqrt_N"], prof_rows)
    rep.tables["identities.csv"] = _csv(["field", "r", "identity", "lhs", "rhs", "gap"], id_rows)
    rep.tables["normalizing.csv"] = _csv(["trial", "d", "pushforward_err", "theta_offdiag", "last_row_offdiag",
                                          "last_row_diag"], spd_rows)
    for k, v in worst.items():
        rep.metric(k, v)
    rep.metric("monotonicity_violations", violations)
    rep.metric("normalizing_err", max(r[2] for r in spd_rows))
    rep.metric("theta_err", max(r[3] for r in spd_rows))
    rep.gate("rigidity_F", worst["F_dev"] < 1e-6)
    rep.gate("rigidity_N", worst["N_dev"] < 1e-5)
    rep.gate("identities", worst["identity_gap"] < 1e-5 and worst["exp_integral_gap"] < 1e-5)
    rep.gate("monotonicity", violations == 0)
    rep.gate("normalizing_map", max(r[2] for r in spd_rows) < 1e-10 and max(r[3] for r in spd_rows) < 1e-12
             and max(r[4] for r in spd_rows) == 0.0 and min(r[5] for r in spd_rows) > 0)


def run_experiment(cfg: RunConfig, pipeline: str) -> Report:
    """Run ``pipeline`` on ``cfg``; a failing stage aborts with a partial report."""
    if pipeline not in PIPELINES:
        raise ValueError(f"unknown pipeline {pipeline!r}; choose from {', '.join(PIPELINES)}")
    rep = Report(cfg.name, pipeline)
    try:
        if pipeline == "verify":
            _verify(cfg, rep)
            return rep
        if cfg.catalog:
            raise StageError("field", ValueError("the catalog is only available to verify"))
        through = "solve" if pipeline == "solve" else "all"
        prep = _prepare(cfg, through, rep)
        if pipeline == "frequency":
            _frequency(cfg, prep, rep)
        elif pipeline == "blowup":
            _blowup(cfg, prep, rep)
        elif pipeline == "nodal":
            _nodal(cfg, prep, rep)
    except StageError as exc:
        rep.error = {"stage": exc.stage, "message": str(exc.cause)}
        rep.gates[f"stage_{exc.stage}"] = False
    return rep
