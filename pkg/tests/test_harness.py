import json
import math

import numpy as np
import pytest

from conftest import sweep_for
from poincare_stability import harness
from poincare_stability.errors import InvalidParameter, InvariantViolation
from poincare_stability.perturb import named_direction


def test_config_roundtrip(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text('model = "sphere_2"\neps_steps = 3\ndirections = ["cubic"]\n[tolerances]\nipp_slack = 1e-7\n')
    cfg = harness.load_config(path, grid_size=1024)
    assert cfg["model"] == "sphere_2" and cfg["eps_steps"] == 3 and cfg["grid_size"] == 1024
    assert cfg["tolerances"]["ipp_slack"] == 1e-7
    assert cfg["tolerances"]["constraint"] == 1e-9  # defaults survive
    with pytest.raises(InvalidParameter):
        harness.load_config(eps_steps=0)
    with pytest.raises(InvalidParameter):
        harness.resolve_model("cauchy")


def test_model_from_table(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text('[model]\nfamily = "gamma"\ns = 2\ntheta = 0.5\n')
    cfg = harness.load_config(path)
    assert harness.resolve_model(cfg["model"]).lambda_mu == 2.0
    assert harness.model_id(cfg["model"]) == "family=gamma_s=2_theta=0.5"


def test_eps_ladder():
    d = type("D", (), {"eps_max": 0.8})()
    assert harness.eps_ladder(d, 4) == pytest.approx([0.2, 0.4, 0.6, 0.8])
    assert harness.eps_ladder(d, 2, 0.5) == pytest.approx([0.2, 0.4])


def test_gaussian_sweep():
    ctx, reports, _ = sweep_for("gaussian")
    assert len(reports) == 5 * 8
    assert [(r.direction, r.eps) for r in reports] == sorted((r.direction, r.eps) for r in reports)
    for r in reports:
        assert r.ok
        assert all(b.applicable for b in r.bounds)
        assert r.dual_w1_gap <= 1e-8


def test_gamma_applicability_gates():
    ctx, reports, _ = sweep_for("gamma_1_1")
    assert ctx.kappa is None and ctx.ch.finite
    for r in reports:
        assert not r.bound("tv_elliptic").applicable and not r.bound("kolmogorov_elliptic").applicable
        assert r.bound("w1_stein").applicable and r.bound("kolmogorov_density").applicable
        assert r.ok
        assert math.isnan(r.bound("tv_elliptic").ratio)


def test_unbounded_density_gate():
    ctx, reports, _ = sweep_for("sphere_1")
    assert ctx.density_sup == math.inf
    assert all(not r.bound("kolmogorov_density").applicable for r in reports)
    assert all(r.bound("w1_stein").applicable for r in reports)


def test_zero_eps_report():
    cfg = harness.load_config(model="gaussian")
    ctx, _, _ = sweep_for("gaussian")
    r = harness.evaluate(ctx, named_direction(ctx.measure, "cubic"), 0.0, cfg)
    assert r.distances.w1 < 1e-12 and r.distances.tv == 0.0
    for b in r.bounds:
        assert b.ratio == 0.0


def test_full_span_ladder_still_satisfies_bounds():
    # up to the positivity limit the deficit leaves the quadratic regime, but the inequalities still hold
    ctx, _, _ = sweep_for("quartic")
    cfg = harness.load_config(model="quartic", directions=["left_bump"], eps_steps=2, eps_span=1.0)
    reports = harness.run_sweep(cfg, ctx=ctx)
    assert len(reports) == 2 and all(r.ok for r in reports)


def test_utev_check():
    ctx, reports, _ = sweep_for("gaussian")
    rep = harness.check_utev_gaussian(reports)
    assert rep.checked > 0 and rep.violations == 0
    assert rep.sharp_holds == rep.checked
    fake = [type("R", (), {"c_p_nu": 1.0, "distances": type("D", (), {"tv": 0.5})(), "direction": "x",
                           "eps": 0.1})()]
    with pytest.raises(InvariantViolation):
        harness.check_utev_gaussian(fake)


def test_asymptotics():
    _, reports, _ = sweep_for("gamma_1_1")
    out = harness.asymptotics(reports)
    assert len(out) == 5
    for a in out:
        assert a.ok, a
        assert a.eps2_coeff > 0


def test_emit_outputs(tmp_path):
    ctx, reports, _ = sweep_for("gaussian")
    cfg = harness.load_config(model="gaussian")
    out = harness.emit_outputs(reports, tmp_path / "o", cfg, ctx)
    doc = json.loads((out / "report.json").read_text())
    assert doc["schema_version"] == harness.SCHEMA_VERSION
    assert len(doc["records"]) == 40
    assert doc["config"]["tolerances"] == cfg["tolerances"]
    assert "c_p_nu" in doc["provenance"]
    for t in harness.THEOREMS:
        lines = (out / f"bound_{t}.csv").read_text().splitlines()
        assert len(lines) == 41
    eig = np.loadtxt(out / "eigenfunctions.csv", delimiter=",", skiprows=1)
    assert eig.shape[1] == 1 + 1 + 5
    assert (out / "ch_profile.csv").exists() and "40/40" in (out / "summary.txt").read_text()
    # determinism of the machine-readable report
    first = (out / "report.json").read_bytes()
    harness.write_report(reports, cfg, out / "again.json", ctx)
    assert (out / "again.json").read_bytes() == first
    with pytest.raises(InvalidParameter):
        harness.emit_outputs([], tmp_path / "none", cfg)


def test_single_report_output(tmp_path):
    ctx, reports, _ = sweep_for("gaussian")
    cfg = harness.load_config(model="gaussian")
    out = harness.emit_outputs(reports[:1], tmp_path, cfg)
    assert len(json.loads((out / "report.json").read_text())["records"]) == 1
    assert len((out / "bound_w1_stein.csv").read_text().splitlines()) == 2


def test_unwritable_output(tmp_path):
    ctx, reports, _ = sweep_for("gaussian")
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        harness.emit_outputs(reports[:1], blocker / "sub", harness.load_config())


def test_worker_pool_matches_serial():
    ctx, _, _ = sweep_for("sphere_2")
    cfg = harness.load_config(model="sphere_2", directions=["cubic", "left_bump"], eps_steps=2)
    serial = harness.run_sweep(cfg, ctx=ctx)
    pooled = harness.run_sweep(cfg, ctx=ctx, workers=2)
    text = lambda reps: json.dumps(harness.report_document(reps, cfg), sort_keys=True)
    assert text(serial) == text(pooled)
