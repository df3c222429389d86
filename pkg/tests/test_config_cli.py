from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ucplab.cli import main, preset_names, preset_path
from ucplab.config import (
    AnalysisSpec,
    ConfigError,
    DomainSpec,
    RunConfig,
    dumps_config,
    load_config,
    loads_config,
)
from ucplab.pipeline import Report, run_experiment
from ucplab.report import emit_report


def test_minimal_config_defaults():
    cfg = loads_config('[coefficients]\neta = "0"\n')
    assert cfg.domain.type == "half_ball" and cfg.domain.radius == 1.0
    assert cfg.coefficients.a11 == "1"


@pytest.mark.parametrize("text, where, msg", [
    ("[coefficients]\ns = 1\n", "[coefficients] s", "requires s > d-1"),
    ("[coefficients]\np = 2\n", "[coefficients] p", "requires p > d"),
    ('[coefficients]\na11 = "x+*y"\n', "[coefficients] a11", "parse error"),
    ("[domain]\nbogus = 1\n", "[domain] bogus", "unknown key"),
    ("[nonsense]\n", "[nonsense]", "unknown section"),
    ('[boundary]\nflat = "dirichlet"\n', "[boundary] flat", "must be one of"),
    ("[analysis]\nr_max = 0.7\n", "[analysis] r_max", "leave"),
    ("[domain]\nh = abc\n", "[domain] h", "could not convert"),
])
def test_config_errors(text, where, msg):
    with pytest.raises(ConfigError) as info:
        loads_config(text)
    assert str(info.value).startswith(where)
    assert msg in str(info.value)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.ini")


@pytest.mark.parametrize("name", preset_names())
def test_presets_load_and_round_trip(name):
    cfg = load_config(preset_path(name))
    assert loads_config(dumps_config(cfg), name=cfg.name) == cfg


@settings(max_examples=40, deadline=None)
@given(
    h=st.floats(0.01, 0.5),
    grading=st.one_of(st.none(), st.floats(1.0, 3.0)),
    sweep=st.lists(st.floats(0.01, 0.5), max_size=3),
    lambdas=st.lists(st.floats(0.01, 1.0), min_size=1, max_size=5),
    reflect=st.booleans(),
    m_hint=st.one_of(st.none(), st.integers(0, 6)),
    eta=st.sampled_from(["0", "-1", "x^2", "exp(-x)*cos(3*x)"]),
)
def test_round_trip_property(h, grading, sweep, lambdas, reflect, m_hint, eta):
    from ucplab.config import CoefficientSpec

    cfg = RunConfig(name="p", domain=DomainSpec(h=h, grading=grading, h_sweep=tuple(sweep)),
                    coefficients=CoefficientSpec(eta=eta),
                    analysis=AnalysisSpec(lambdas=tuple(lambdas), reflect=reflect, m_hint=m_hint))
    assert loads_config(dumps_config(cfg), name="p") == cfg


def test_empty_report_writes_summary_only(tmp_path):
    written = emit_report(Report("r", "solve"), tmp_path)
    assert [p.name for p in written] == ["summary.json"]
    assert json.loads((tmp_path / "summary.json").read_text())["passed"]


def test_blowup_snapshot_names(tmp_path):
    cfg = RunConfig(field="x^2 - y^2", analysis=AnalysisSpec(lambdas=(0.4, 0.2, 0.1, 0.05, 0.025), m_hint=2))
    rep = run_experiment(cfg, "blowup")
    emit_report(rep, tmp_path)
    snaps = sorted(p.name for p in (tmp_path / "snapshots").iterdir())
    assert snaps == [f"lambda_{lam:.6f}.csv" for lam in (0.025, 0.05, 0.1, 0.2, 0.4)]


def test_frequency_profile_csv(tmp_path):
    rep = run_experiment(RunConfig(field="r^2*cos(2*theta)"), "frequency")
    emit_report(rep, tmp_path)
    assert (tmp_path / "profile.csv").read_text().splitlines()[0] == "r,H,N,F,log2_sqrt_N"
    assert rep.metrics["m_rounded"] == 2
    # every JSON metric also lives in a CSV
    rows = dict(line.split(",", 1) for line in (tmp_path / "metrics.csv").read_text().splitlines()[1:])
    assert set(rows) == set(rep.metrics)


def test_stage_failure_gives_partial_report(tmp_path):
    # the normalizer underflows: flat vanishing aborts the blowup stage
    cfg = RunConfig(field="exp(-1/r^2)", analysis=AnalysisSpec(lambdas=(0.02,)))
    rep = run_experiment(cfg, "blowup")
    assert not rep.passed
    assert rep.error["stage"] == "blowup"
    emit_report(rep, tmp_path)
    assert json.loads((tmp_path / "summary.json").read_text())["error"]["stage"] == "blowup"


def test_flat_profile_flags_infinite_order():
    rep = run_experiment(RunConfig(field="exp(-1/r)"), "frequency")
    assert rep.metrics["classification"] == "infinite-order suspicion"


def test_cli_presets_listing(capsys):
    assert main(["presets"]) == 0
    out = capsys.readouterr().out.split()
    assert "verify_catalog" in out and "neumann_order2" in out


def test_cli_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[coefficients]\ns = 1\n")
    assert main(["solve", "-c", str(bad), "-o", str(tmp_path / "o")]) == 2
    assert "requires s > d-1" in capsys.readouterr().err


def test_cli_gate_failure_exit_code(tmp_path):
    cfg = tmp_path / "strict.ini"
    cfg.write_text('[run]\nfield = "r^3*cos(3*theta)"\n\n[domain]\nh_sweep = 0.1, 0.05\n\n'
                   "[analysis]\nreflect = true\nmin_ratio = 5.0\n")
    assert main(["gauge", "-c", str(cfg), "-o", str(tmp_path / "o"), "--no-svg"]) == 1


def test_cli_verify_is_deterministic(tmp_path):
    outs = [tmp_path / "a", tmp_path / "b"]
    for o in outs:
        assert main(["verify", "--preset", "verify_catalog", "-o", str(o)]) == 0
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


def test_thread_count_does_not_change_results(tmp_path, monkeypatch):
    cfg = RunConfig(field="r^3*cos(3*theta)", domain=DomainSpec(h_sweep=(0.1, 0.05)),
                    analysis=AnalysisSpec(reflect=True))
    monkeypatch.setenv("UCPLAB_THREADS", "1")
    one = run_experiment(cfg, "gauge").tables["sweep.csv"]
    monkeypatch.setenv("UCPLAB_THREADS", "4")
    four = run_experiment(cfg, "gauge").tables["sweep.csv"]
    assert one == four


def test_gauged_robin_order_two_blowup():
    # regression: blowup of the gauged order-2 Robin solution fits a degree-2 profile
    rep = run_experiment(load_config(preset_path("robin_order2")), "blowup")
    assert rep.error is None
    assert rep.metrics["fit_residual"] < 0.05
