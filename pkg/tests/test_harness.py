import json

import numpy as np
import pytest

from stagdid import harness
from stagdid.dgp import ScenarioConfig, generate_panel, load_preset, stream_seed, true_att
from stagdid.errors import EmptyPlan, InvalidConfig, NoConvergence
from stagdid.harness import (
    BenchPlan,
    ReplicationResult,
    emit_report,
    load_plan,
    load_replications,
    run_bench,
    run_replication,
    summarize,
)

FAST = ("twfe", "twfe-es", "sa", "cs", "etwfe", "bjs")


def tiny(name="a", **kw):
    base = dict(name=name, n_units=120, n_periods=8, effect_shape="trend_break", amplitude=0.05)
    base.update(kw)
    return ScenarioConfig(**base)


def test_replication_is_pure_and_truth_matches_generator():
    cfg = tiny()
    a = run_replication(cfg, FAST + ("mc",), seed=5, replication=3)
    b = run_replication(cfg, FAST + ("mc",), seed=5, replication=3)
    assert a.to_json() == b.to_json()
    gp = generate_panel(cfg, stream_seed(5, 3))
    assert a.truth_overall == true_att(gp)
    assert a.truth_path == true_att(gp, "event_time")
    assert set(a.estimates) == set(FAST) | {"mc"} and not a.errors


def test_homogeneous_step_twfe_is_close():
    cfg = ScenarioConfig(n_units=2000, effect_shape="step", amplitude=0.2)
    r = run_replication(cfg, ["twfe"], seed=1)
    bound = 5 * cfg.sigma_eps / np.sqrt(cfg.n_units * cfg.n_periods)
    assert abs(r.estimates["twfe"].overall - r.truth_overall) < bound


def test_trend_break_twfe_below_truth_imputation_on_it():
    cfg = load_preset("setup2")[0]
    r = run_replication(cfg, ["twfe", "bjs"], seed=4)
    assert r.estimates["twfe"].overall < 0.85 * r.truth_overall
    assert r.estimates["bjs"].overall == pytest.approx(r.truth_overall, rel=0.05)


def test_failing_estimator_is_recorded_not_fatal(monkeypatch):
    real = harness.run_estimator

    def flaky(name, panel, **kw):
        if name == "sa":
            raise NoConvergence("boom")
        return real(name, panel, **kw)

    monkeypatch.setattr(harness, "run_estimator", flaky)
    plan = BenchPlan((tiny(),), ("twfe", "sa"), replications=3, r_override={})
    rep = run_bench(plan, workers=1)
    assert rep.row("a", "sa")["n_failed"] == 3 and rep.row("a", "sa")["mean"] is None
    assert rep.row("a", "twfe")["n_reps"] == 3
    assert {(f[1], f[2]) for f in rep.failures} == {("sa", 0), ("sa", 1), ("sa", 2)}
    assert "NoConvergence" in rep.failures[0][3]


def test_plan_validation():
    with pytest.raises(EmptyPlan):
        BenchPlan((tiny(),), ())
    with pytest.raises(EmptyPlan):
        BenchPlan((), ("twfe",))
    with pytest.raises(EmptyPlan):
        run_replication(tiny(), [], seed=0)
    with pytest.raises(InvalidConfig):
        BenchPlan((tiny(),), ("ols",))
    with pytest.raises(InvalidConfig):
        BenchPlan((tiny(),), ("twfe",), replications=0)
    with pytest.raises(InvalidConfig):
        BenchPlan((tiny(), tiny()), ("twfe",))
    plan = BenchPlan((tiny(),), ("twfe", "mc"), replications=10, r_override={"mc": 50})
    assert plan.reps_for("mc") == 10 and plan.reps_for("twfe") == 10


def test_relative_bias_null_when_truth_zero():
    plan = BenchPlan((tiny(amplitude=0.0),), ("twfe",), replications=3)
    row = run_bench(plan, workers=1).row("a", "twfe")
    assert row["truth"] == 0.0 and row["rel_bias"] is None and row["mcse_rel"] is None
    assert row["abs_bias"] == pytest.approx(row["mean"])


def test_summary_statistics_by_hand():
    plan = BenchPlan((tiny(),), ("twfe", "cs"), replications=6)
    rep = run_bench(plan, workers=1)
    x = np.array([r.estimates["cs"].overall for r in rep.replications])
    truth = np.mean([r.truth_overall for r in rep.replications])
    row = rep.row("a", "cs")
    assert row["mean"] == pytest.approx(x.mean(), abs=1e-15)
    assert row["rel_bias"] == pytest.approx((x.mean() - truth) / truth)
    assert row["sd"] == pytest.approx(x.std(ddof=1))
    assert row["q50"] == pytest.approx(np.median(x))
    curve = rep.curve("a", "cs")
    assert -1 not in curve  # reference point is not reported
    assert all(curve[e]["in_sample"] is False for e in curve)
    assert rep.curve("a", "twfe") == {}


def test_seed_lattice_shares_panels_across_scenarios():
    plan = BenchPlan((tiny("a"), tiny("b", amplitude=0.1)), ("twfe",), replications=2, base_seed=9)
    reps = run_bench(plan, workers=1).replications
    # the trend-break path is linear in its amplitude and everything else is shared
    a = {r.replication: r for r in reps if r.scenario == "a"}
    b = {r.replication: r for r in reps if r.scenario == "b"}
    for k in (0, 1):
        assert b[k].truth_overall == pytest.approx(2 * a[k].truth_overall, rel=1e-12)


def test_relative_bias_is_scale_invariant():
    base = load_preset("setup4")[0].replace(n_units=600, name="x1")
    doubled = base.replace(amplitude=2 * base.amplitude, name="x2")
    plan = BenchPlan((base, doubled), ("twfe", "cs"), replications=8)
    rep = run_bench(plan, workers=1)
    for est in ("twfe", "cs"):
        r1, r2 = rep.row("x1", est), rep.row("x2", est)
        tol = 4 * max(r1["mcse_rel"], r2["mcse_rel"])
        assert r1["rel_bias"] == pytest.approx(r2["rel_bias"], abs=tol)


def test_report_files_and_manifest_rerun(tmp_path):
    plan = BenchPlan((tiny("a"), tiny("b", effect_shape="inverted_u", amplitude=0.3)),
                     ("twfe", "cs", "mc"), replications=3, r_override={"mc": 2})
    paths = emit_report(run_bench(plan, workers=1), tmp_path / "one")
    header = (tmp_path / "one" / "summary.csv").read_text().splitlines()[0].split(",")
    assert header[:2] == ["scenario", "estimator"] and {"rel_bias", "q05", "q95"} <= set(header)
    es_header = (tmp_path / "one" / "eventstudy.csv").read_text().splitlines()[0]
    assert es_header == "scenario,estimator,e,n,mean,sd,truth,in_sample"
    man = json.loads(paths["manifest"].read_text())
    assert set(man["scenario_hashes"]) == {"a", "b"} and man["seeds"]["replications"]["mc"] == 2
    assert "failures" not in paths

    again = emit_report(run_bench(load_plan(paths["manifest"]), workers=1), tmp_path / "two")
    for key in ("summary", "eventstudy", "pretrend", "manifest", "replications"):
        assert paths[key].read_bytes() == again[key].read_bytes(), key

    stored = load_replications(paths["replications"])
    redo = emit_report(summarize(plan, stored), tmp_path / "three")
    assert redo["summary"].read_bytes() == paths["summary"].read_bytes()


def test_worker_count_does_not_change_report(tmp_path):
    plan = BenchPlan((tiny("a"), tiny("b", rho=0.02)), ("twfe", "sa", "bjs", "mc"), replications=4,
                     r_override={"mc": 2})
    one = emit_report(run_bench(plan, workers=1), tmp_path / "w1")
    two = emit_report(run_bench(plan, workers=2), tmp_path / "w2")
    for key in ("summary", "eventstudy", "pretrend", "replications"):
        assert one[key].read_bytes() == two[key].read_bytes(), key


def test_workers_from_environment(monkeypatch):
    monkeypatch.setenv(harness.WORKERS_ENV, "3")
    assert harness._workers(None) == 3
    assert harness._workers(1) == 1
    monkeypatch.setenv(harness.WORKERS_ENV, "zero")
    with pytest.raises(InvalidConfig):
        harness._workers(None)


def test_degenerate_scenario_fails_every_estimator():
    cfg = ScenarioConfig(name="d", n_units=2, n_periods=5)
    seed = next(s for s in range(100) if _degenerate(cfg, s))
    r = run_replication(cfg, ["twfe", "cs"], seed=seed)
    assert set(r.errors) == {"twfe", "cs"} and not r.estimates
    assert ReplicationResult.from_json(json.loads(json.dumps(r.to_json()))).errors == r.errors


def _degenerate(cfg, seed):
    try:
        generate_panel(cfg, stream_seed(seed, 0))
    except Exception:
        return True
    return False
