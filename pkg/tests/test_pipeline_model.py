from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semidense import pipeline_model as pm
from semidense.depth_search import UpdateTrace
from semidense.errors import DimensionMismatch, IncompleteTrace, Infeasible
from semidense.keyframe import Verdict

from oracles import cycle_stepped


def trace_from(verdict, steps):
    verdict = np.asarray(verdict, dtype=np.uint8)
    z = np.zeros(verdict.shape)
    return UpdateTrace(verdict, np.asarray(steps, dtype=np.int32), z, z, z.astype(np.uint8))


# --- workloads ------------------------------------------------------------


def test_workload_all_skips():
    tr = trace_from(np.full((3, 4), Verdict.SKIP_LOW_GRADIENT), np.zeros((3, 4)))
    w = pm.workload_from_trace(tr)
    assert w.n_points == 12 and (w.steps == 0).all()
    assert all(r == ("skip", 0) for r in w.records)


def test_workload_one_scan():
    v = np.full((3, 4), Verdict.SKIP_GEOMETRY)
    s = np.zeros((3, 4))
    v[1, 2], s[1, 2] = Verdict.SCAN, 11
    w = pm.workload_from_trace(trace_from(v, s))
    assert w.records[1 * 4 + 2] == ("scan", 11)
    assert w.scan_fraction == pytest.approx(1 / 12)


def test_workload_recount():
    rng = np.random.default_rng(0)
    v = rng.integers(0, 5, (20, 30))
    s = np.where(v == Verdict.SCAN, rng.integers(1, 100, (20, 30)), 0)
    w = pm.workload_from_trace(trace_from(v, s))
    assert (w.steps > 0).sum() == (v == Verdict.SCAN).sum()
    assert (w.steps == 0).sum() == (v != Verdict.SCAN).sum()
    assert w.steps.sum() == s.sum()


def test_workload_incomplete_trace():
    v = np.full((2, 2), Verdict.SCAN)
    v[0, 0] = Verdict.UNSET
    with pytest.raises(IncompleteTrace):
        pm.workload_from_trace(trace_from(v, np.ones((2, 2))))


def test_workload_length_checked():
    with pytest.raises(DimensionMismatch):
        pm.FrameWorkload(np.zeros(5), 2, 3)


# --- analytic model --------------------------------------------------------


def test_analytic_row_2240():
    row = pm.synthetic_workload(640, 1, 0.25, 11).row(0)
    assert (row > 0).sum() == 160
    assert pm.analytic_row_cycles(row) == 2240
    assert pm.analytic_row_cycles(row) / 640 == 3.5


def test_analytic_row_all_skip():
    assert pm.analytic_row_cycles(np.zeros(640, dtype=int)) == 640


@given(st.lists(st.integers(0, 200), max_size=700), st.integers(1, 4), st.integers(1, 4))
def test_analytic_row_matches_sum(row, scan_cost, skip_cost):
    cfg = pm.PipelineConfig(scan_cost=scan_cost, skip_cost=skip_cost)
    expect = 0
    for s in row:
        expect += s * scan_cost if s > 0 else skip_cost
    assert pm.analytic_row_cycles(row, cfg) == expect


# --- simulation -----------------------------------------------------------


def test_all_skip_frame():
    r = pm.simulate_frame(pm.synthetic_workload(640, 480, 0.0, 1))
    assert 1_536_000 <= r.total_cycles <= 1_536_000 * 1.005
    assert r.fast_busy == 307_200 < r.front_busy


def test_quarter_scan_frame_is_slow_bound():
    cfg = pm.PipelineConfig()
    r = pm.simulate_frame(pm.synthetic_workload(640, 480, 0.25, 11), cfg)
    t = pm.frame_time_ms(r, cfg)
    assert t.compute_ms == pytest.approx(15.36, rel=0.005)
    assert r.fast_busy < r.front_busy  # margin of safety for the fast stage


def test_fifo_depth_one_stalls_on_bursts():
    w = pm.synthetic_workload(640, 20, 0.25, 11, pattern="bursty")
    deep = pm.simulate_frame(w, pm.PipelineConfig())
    shallow = pm.simulate_frame(w, pm.PipelineConfig(fifo_depth=1))
    assert shallow.stall_cycles > 0
    assert shallow.total_cycles >= deep.total_cycles


def test_simulation_deterministic():
    w = pm.synthetic_workload(64, 16, 0.3, lambda rng, n: rng.integers(1, 40, n), pattern="random", seed=5)
    cfg = pm.PipelineConfig(fifo_depth=4)
    assert pm.simulate_frame(w, cfg) == pm.simulate_frame(w, cfg)


def test_empty_workload():
    r = pm.simulate_frame(pm.FrameWorkload(np.zeros(0), 0, 0))
    assert r.total_cycles == 0


workload_steps = st.lists(st.one_of(st.just(0), st.integers(1, 30)), min_size=1, max_size=120)
configs = st.builds(
    pm.PipelineConfig,
    slow_rate=st.integers(1, 8),
    scan_cost=st.integers(1, 3),
    skip_cost=st.integers(1, 3),
    init_cost=st.integers(0, 5),
    fifo_depth=st.integers(1, 6),
    fast_parallelism=st.integers(1, 2),
)


@settings(max_examples=150, deadline=None)
@given(workload_steps, configs)
def test_simulator_matches_cycle_stepped_oracle(steps, cfg):
    w = pm.FrameWorkload(steps, len(steps), 1)
    r = pm.simulate_frame(w, cfg)
    total, stall, q1, q2 = cycle_stepped(steps, cfg)
    assert r.total_cycles == total
    assert r.stall_cycles == stall
    assert (r.max_fifo_in, r.max_fifo_out) == (q1, q2)
    assert max(q1, q2) <= cfg.fifo_depth


@settings(max_examples=150, deadline=None)
@given(workload_steps, configs)
def test_total_at_least_lower_bound(steps, cfg):
    w = pm.FrameWorkload(steps, len(steps), 1)
    r = pm.simulate_frame(w, cfg)
    assert r.total_cycles >= r.lower_bound == pm.frame_lower_bound(w, cfg)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 64), st.sampled_from(["random", "bursty", "uniform"]))
def test_dominant_slow_stage_total_near_bound(seed, depth, pattern):
    # every fast-stage service fits inside one slow-stage slot
    cfg = pm.PipelineConfig(fifo_depth=depth, init_cost=0)
    w = pm.synthetic_workload(64, 8, 0.4, lambda rng, n: rng.integers(1, 6, n), pattern=pattern, seed=seed)
    assert pm.fast_stage_costs(w.steps, cfg).max() <= cfg.slow_rate
    r = pm.simulate_frame(w, cfg)
    assert r.lower_bound <= r.total_cycles <= r.lower_bound + 3 * cfg.slow_rate + depth


def test_starved_back_stage_loses_time():
    # a long burst of scans idles the back stage and no FIFO depth recovers that
    w = pm.synthetic_workload(64, 8, 0.25, 11, pattern="bursty")
    r = pm.simulate_frame(w, pm.PipelineConfig(fifo_depth=1024))
    assert r.front_busy > r.fast_busy
    assert r.total_cycles > r.lower_bound + 3 * 15 + 64


@settings(max_examples=100, deadline=None)
@given(
    workload_steps,
    configs,
    st.sampled_from(["slow_rate", "scan_cost", "skip_cost", "init_cost"]),
    st.integers(1, 3),
)
def test_costlier_config_never_faster(steps, cfg, name, inc):
    w = pm.FrameWorkload(steps, len(steps), 1)
    base = pm.simulate_frame(w, cfg).total_cycles
    worse = replace(cfg, **{name: getattr(cfg, name) + inc})
    assert pm.simulate_frame(w, worse).total_cycles >= base
    if cfg.fifo_depth > 1:
        shallower = replace(cfg, fifo_depth=cfg.fifo_depth - 1)
        assert pm.simulate_frame(w, shallower).total_cycles >= base


# --- frame time -----------------------------------------------------------


def _report(cycles):
    return pm.SimReport(cycles, 0, 0, 0, 0, 0, 0, 0, 0)


def test_frame_time_compute():
    assert pm.frame_time_ms(_report(1_536_000)).compute_ms == pytest.approx(15.36)


def test_frame_time_memory():
    fb, mb = pm.frame_bytes_for(640, 480)
    assert (fb, mb) == (307_200, 7_372_800)
    t = pm.frame_time_ms(_report(0), pm.PipelineConfig(), fb, mb)
    assert t.memory_ms == pytest.approx(18.816)
    t16 = pm.frame_time_ms(_report(0), pm.PipelineConfig(mem_bandwidth=16), fb, mb)
    assert t16.memory_ms == pytest.approx(9.408)
    assert 8 <= t16.memory_ms <= 10


def test_frame_time_overlap_modes():
    fb, mb = pm.frame_bytes_for(640, 480)
    over = pm.frame_time_ms(_report(1_536_000), pm.PipelineConfig(), fb, mb)
    serial = pm.frame_time_ms(_report(1_536_000), pm.PipelineConfig(overlap_memory=False), fb, mb)
    assert over.total_ms == pytest.approx(max(15.36, 18.816))
    assert serial.total_ms == pytest.approx(15.36 + 18.816)
    assert pm.frame_time_ms(_report(100)).memory_ms == 0


# --- tuning ---------------------------------------------------------------


@pytest.fixture(scope="module")
def average_load():
    return [pm.synthetic_workload(640, 480, 0.18, 11, pattern="random", seed=s) for s in range(2)]


def test_tune_60fps_at_125mhz(average_load):
    cfg = pm.PipelineConfig(clock_mhz=125.0, slow_rate=5)
    assert pm.evaluate_config(average_load, cfg) <= 1000 / 60
    res = pm.tune_rates(60, average_load, 125.0)
    assert res.achieved_ms <= res.budget_ms == pytest.approx(1000 / 60)
    assert res.config.clock_mhz == 125.0


def test_tune_32_5fps_relaxes_slow_rate(average_load):
    cfg = pm.PipelineConfig(slow_rate=9, mem_bandwidth=16)
    assert pm.evaluate_config(average_load, cfg) <= 1000 / 32.5
    res = pm.tune_rates(32.5, average_load, 100.0, base=pm.PipelineConfig(mem_bandwidth=16))
    assert res.config.slow_rate >= 9
    assert res.achieved_ms <= 1000 / 32.5


def test_tune_infeasible(average_load):
    with pytest.raises(Infeasible):
        pm.tune_rates(10_000, average_load[:1], 100.0)


def test_tune_picks_cheapest_feasible(average_load):
    res = pm.tune_rates(45, average_load[:1], 100.0, base=pm.PipelineConfig(mem_bandwidth=16))
    proxy = pm.resource_proxy(res.config.slow_rate, res.config.fast_parallelism)
    for s, p, _, feasible in res.evaluated[:-1]:
        assert not feasible
        assert pm.resource_proxy(s, p) <= proxy


# --- statistics -----------------------------------------------------------


def test_heatmap_single_trace():
    v = np.full((4, 5), Verdict.SKIP_LOW_GRADIENT)
    v[2, 3] = Verdict.SCAN
    freq, rows = pm.scan_frequency_heatmap([trace_from(v, v == Verdict.SCAN)])
    expect = np.zeros((4, 5))
    expect[2, 3] = 1.0
    np.testing.assert_array_equal(freq, expect)
    np.testing.assert_allclose(rows, [0, 0, 0.2, 0])


def test_heatmap_disjoint_traces():
    v1 = np.full((2, 2), Verdict.SKIP_GEOMETRY)
    v2 = v1.copy()
    v1[0, 0] = Verdict.SCAN
    v2[1, 1] = Verdict.SCAN
    freq, _ = pm.scan_frequency_heatmap([trace_from(v1, np.ones((2, 2))), trace_from(v2, np.ones((2, 2)))])
    assert freq[0, 0] == freq[1, 1] == 0.5 and freq[0, 1] == 0


def test_heatmap_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        pm.scan_frequency_heatmap([trace_from(np.zeros((2, 2)), np.zeros((2, 2))), trace_from(np.zeros((3, 2)), np.zeros((3, 2)))])


def test_heatmap_pgm_scaling():
    out = pm.heatmap_to_pgm16(np.array([[0.0, 0.5, 1.0]]))
    assert out.dtype == np.uint16 and out.tolist() == [[0, 32768, 65535]]


def test_workload_stats_and_histogram():
    v = np.array([[Verdict.SCAN, Verdict.SCAN, Verdict.SKIP_LOW_GRADIENT]])
    s = np.array([[3, 5, 0]])
    stats = pm.workload_stats([trace_from(v, s)] * 2)
    assert stats.mean_scan_fraction == pytest.approx(2 / 3)
    assert stats.mean_steps == 4.0
    assert pm.step_histogram([trace_from(v, s)] * 2) == {3: 2, 5: 2}


def test_sim_report_csv_round_trip(tmp_path):
    w = pm.synthetic_workload(32, 4, 0.5, 7)
    sim, ft = pm.simulate_time(w, pm.PipelineConfig())
    pm.write_sim_reports(tmp_path / "r.csv", [sim], [ft], ["f0"])
    [(name, back, t)] = pm.read_sim_reports(tmp_path / "r.csv")
    assert name == "f0" and back == sim and t == ft
