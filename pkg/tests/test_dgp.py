import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stagdid.dgp import (
    DistributedTiming,
    ScenarioConfig,
    TwoTiming,
    build_effect_path,
    draw_timing,
    generate_panel,
    list_presets,
    load_preset,
    read_preset_json,
    stream_seed,
    true_att,
)
from stagdid.errors import DegenerateScenario, InvalidConfig


def small(**kw):
    base = dict(n_units=400, n_periods=15)
    base.update(kw)
    return ScenarioConfig(**base)


def test_same_seed_same_panel():
    cfg = small(effect_shape="inverted_u")
    a = generate_panel(cfg, stream_seed(3, 5))
    b = generate_panel(cfg, stream_seed(3, 5))
    assert a.panel == b.panel
    assert np.array_equal(a.truth, b.truth)
    c = generate_panel(cfg, stream_seed(3, 6))
    assert not np.array_equal(a.panel.y, c.panel.y)


def test_seed_lattice_shares_draws_across_scenarios():
    a = generate_panel(small(effect_shape="step"), stream_seed(1, 2))
    b = generate_panel(small(effect_shape="trend_break", amplitude=0.05, rho=0.02), stream_seed(1, 2))
    assert np.array_equal(a.alpha, b.alpha)
    assert np.array_equal(a.panel.cohort, b.panel.cohort)


def test_outcome_reconstruction():
    cfg = small(n_units=2000, effect_shape="inverted_u", rho=0.03, group_ratio=0.5, anticipation_periods=2)
    gp = generate_panel(cfg, 11)
    p = gp.panel
    t = np.arange(1, 16)
    ever = p.ever_treated.astype(float)
    eps = p.y - gp.alpha[:, None] - cfg.theta * t - cfg.rho * t * ever[:, None] - gp.truth
    bound = 3 / np.sqrt(eps.size)
    assert abs(eps.mean()) < bound
    assert abs(eps.std() - cfg.sigma_eps) < 3 * cfg.sigma_eps / np.sqrt(2 * eps.size)


def _trend_gap_slope(cfg, seed):
    gp = generate_panel(cfg, seed)
    p = gp.panel
    gap = p.y[p.ever_treated].mean(axis=0) - p.y[~p.ever_treated].mean(axis=0)
    t = np.arange(1, p.n_periods + 1)
    return np.polyfit(t, gap, 1)[0]


def test_parallel_trends_iff_rho_zero():
    base = small(n_units=1000, amplitude=0.0)
    flat = np.array([_trend_gap_slope(base, s) for s in range(30)])
    z = abs(flat.mean()) / (flat.std(ddof=1) / np.sqrt(flat.size))
    assert z < 3
    tilted = np.array([_trend_gap_slope(base.replace(rho=0.025), s) for s in range(30)])
    assert abs(tilted.mean() - 0.025) < 3 * tilted.std(ddof=1) / np.sqrt(tilted.size)


def test_no_anticipation_means_zero_pre_effects():
    gp = generate_panel(small(effect_shape="inverted_u"), 4)
    rel = gp.panel.relative_time()
    assert np.all(gp.truth[np.nan_to_num(rel, nan=0) < 0] == 0)
    assert np.all(gp.truth[~gp.panel.ever_treated] == 0)


def test_anticipation_path():
    cfg = small(effect_shape="step", amplitude=0.4, anticipation_periods=2, group_ratio=0.5)
    gp = generate_panel(cfg, 8)
    rel = gp.panel.relative_time()
    early = gp.panel.ever_treated & ~gp.late
    assert np.allclose(gp.truth[early][np.isin(rel[early], [-2, -1])], -0.2)
    assert np.allclose(gp.truth[gp.late][np.isin(rel[gp.late], [-2, -1])], -0.1)
    assert np.all(gp.truth[early][rel[early] == -3] == 0)


def test_anticipation_magnitude_override():
    path = build_effect_path("inverted_u", 1.0, 15, anticipation_periods=2, anticipation_magnitude=0.3)
    assert path(np.array([-3, -2, -1])).tolist() == [0.0, -0.3, -0.3]


def test_two_timing_split_by_unit_order():
    cfg = small(n_units=20, timing=TwoTiming(4, 12))
    treated = np.zeros(20, bool)
    treated[[1, 3, 4, 7, 8, 10, 13, 15, 17, 19]] = True
    g = draw_timing(cfg, treated, np.random.default_rng(0))
    assert g[[1, 3, 4, 7, 8]].tolist() == [4] * 5
    assert g[[10, 13, 15, 17, 19]].tolist() == [12] * 5
    assert np.all(g[~treated] == 0)


def test_distributed_timing_is_bell_shaped_and_clamped():
    gp = generate_panel(small(n_units=20000), 0)
    g = gp.panel.cohort[gp.panel.ever_treated]
    assert g.min() >= 2 and g.max() <= 14
    counts = np.bincount(g, minlength=15)
    assert counts.argmax() == 8
    assert counts[8] > counts[6] > counts[4] and counts[8] > counts[10] > counts[12]


def test_literal_timing_piles_onto_early_periods():
    cfg = small(n_units=5000, timing=DistributedTiming(literal=True))
    g = generate_panel(cfg, 0).panel.cohort
    g = g[g > 0]
    assert g.min() >= 2 and g.max() <= 14
    assert np.bincount(g).argmax() <= 3


def test_late_flag_cutoff():
    gp = generate_panel(small(n_units=3000, group_ratio=0.5), 1)
    g = gp.panel.cohort
    assert np.array_equal(gp.late, g >= 9)


def test_step_truth_is_amplitude():
    gp = generate_panel(small(effect_shape="step", amplitude=0.37), 2)
    assert true_att(gp) == pytest.approx(0.37, abs=1e-15)


@pytest.mark.parametrize("shape", ["inverted_u", "trend_break", "fade_out", "step"])
def test_homogeneous_event_time_truth_is_the_path(shape):
    cfg = small(effect_shape=shape, amplitude=0.3)
    gp = generate_panel(cfg, 5)
    by_e = true_att(gp, "event_time")
    for e, v in by_e.items():
        assert v == pytest.approx(float(gp.path(np.array([e]))[0]), abs=1e-12)


def test_group_ratio_tilts_late_event_times_toward_early_effects():
    cfg = small(n_units=4000, effect_shape="step", amplitude=1.0, group_ratio=0.5)
    by_e = true_att(generate_panel(cfg, 6), "event_time")
    # early units (full effect) dominate the long horizons
    assert by_e[0] < by_e[4] < by_e[8] == pytest.approx(1.0)


def test_effect_shapes():
    e = np.arange(0, 10)
    inv = build_effect_path("inverted_u", 1.0, 15)(e)
    assert inv[3] == 1.0 and np.argmax(inv) == 3
    assert np.all(np.diff(inv[:4]) > 0) and np.all(np.diff(inv[3:9]) < 0) and inv[8] == 0
    tb = build_effect_path("trend_break", 0.05, 15)(e)
    assert np.allclose(tb, 0.05 * (e + 1))
    fo = build_effect_path("fade_out", 0.2, 15, decline_periods=4)(e)
    assert fo[0] == 0.2 and fo[4] == 0 and np.all(np.diff(fo[:5]) < 0)


def test_invalid_configs():
    with pytest.raises(InvalidConfig):
        ScenarioConfig(effect_shape="zigzag")
    with pytest.raises(InvalidConfig):
        ScenarioConfig(timing=TwoTiming(12, 4))
    with pytest.raises(InvalidConfig):
        ScenarioConfig(group_ratio=0)
    with pytest.raises(InvalidConfig):
        ScenarioConfig(amplitude=-1)


def test_all_treated_is_degenerate():
    cfg = ScenarioConfig(n_units=2, n_periods=5)
    raised = 0
    for s in range(40):
        try:
            generate_panel(cfg, s)
        except DegenerateScenario:
            raised += 1
    assert raised > 0


@given(st.integers(0, 2**31 - 1))
def test_generation_is_pure(seed):
    cfg = ScenarioConfig(n_units=30, n_periods=6, effect_shape="fade_out")
    a, b = generate_panel(cfg, seed), generate_panel(cfg, seed)
    assert a.panel == b.panel


def test_config_dict_roundtrip():
    cfg = small(timing=TwoTiming(3, 9), effect_shape="fade_out", anticipation_periods=2)
    again = ScenarioConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg


def test_shipped_presets():
    names = set(list_presets())
    wanted = {f"table1-setup{k}" for k in range(1, 7)} | {
        "figure2-grid", "supplement-fadeout", "supplement-twotiming", "supplement-smallN-largeT"}
    assert wanted <= names
    assert len(load_preset("table1")) == 6
    assert load_preset("setup4")[0].name == "table1-setup4"
    grid = load_preset("figure2-grid")
    assert [s.n_units for s in grid] == [1000] * 5
    assert grid[0].n_periods == 30 and grid[0].timing == TwoTiming(8, 24)
    assert grid[1].timing == TwoTiming(4, 12)
    large = load_preset("supplement-smallN-largeT")
    assert {(s.n_units, s.n_periods) for s in large} == {(300, 50)}
    assert "calibration" in read_preset_json("setup4")


def test_preset_from_path(tmp_path):
    p = tmp_path / "mine.json"
    p.write_text(json.dumps({"scenarios": [small(name="x").to_dict()]}))
    assert load_preset(p)[0].name == "x"
    with pytest.raises(InvalidConfig):
        load_preset("no-such-preset")


def test_setup4_preset_hits_calibrated_att():
    cfg = load_preset("setup4")[0]
    atts = [true_att(generate_panel(cfg, stream_seed(0, r))) for r in range(5)]
    assert np.mean(atts) == pytest.approx(0.128, abs=0.004)
