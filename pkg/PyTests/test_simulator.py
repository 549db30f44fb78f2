import sys
import os
from fractions import Fraction
import numpy as np
import pandas as pd
import pytest

# caution: path[0] is reserved for script path (or '' in REPL)
THIS_DIR = os.path.dirname(os.path.abspath(__file__))
PARENT_DIR = os.path.dirname(THIS_DIR)

# add parent directory to path so we can import gpumix
sys.path.insert(1, PARENT_DIR)

from gpumix.allocator import formulate, solve_exact
from gpumix.profiles import (
    DEFAULT_MODEL,
    GpuType,
    ThroughputProfile,
    load_gpu_registry,
    load_matrix,
    step_time,
    synth_profile,
)
from gpumix.simulator import (
    GpuInstanceState,
    LbState,
    SimConfig,
    estimate_bucket,
    export_cdf_csv,
    export_samples_csv,
    route,
    routing_weights,
    run,
    slo_attainment,
)
from gpumix.workload import DEFAULT_GRID, BucketGrid, RequestRecord, load_preset, scale_rate, slice_workload


def test_idle_fleet_tpot_is_single_request_step_time():
    a100 = synth_profile(get_gpu("A100"), slo_tpot_ms=120.0)
    config = SimConfig(
        allocation={"A100": 1},
        profiles=[a100],
        workload=load_preset("mixed-80-20"),
        rate=1e-5,
        n_requests=50,
        seed=4,
    )
    result = run(config)

    assert result.n_completed == 50
    for i, o, tpot, ttft in zip(result.input_tokens, result.output_tokens, result.tpot_ms, result.ttft_ms):
        bucket = DEFAULT_GRID.representative(bucket_of(i, o))
        alone = step_time(a100.gpu, DEFAULT_MODEL, 1, *bucket)
        assert tpot == pytest.approx(alone * 1000.0, rel=1e-6)
        assert ttft == pytest.approx(alone * (1 + i / 512) * 1000.0, rel=1e-6)


def test_same_seed_same_result():
    config = make_config(seed=12)
    first = run(config)
    second = run(config)
    other = run(make_config(seed=13))

    assert first == second
    assert not first == other


def test_request_sizes_do_not_depend_on_rate():
    slow = run(make_config(rate=1.0, seed=5))
    fast = run(make_config(rate=3.0, seed=5))

    assert np.array_equal(slow.input_tokens, fast.input_tokens)
    assert np.array_equal(slow.output_tokens, fast.output_tokens)
    assert np.allclose(slow.arrival_s, 3.0 * fast.arrival_s)


def test_sampled_sizes_follow_the_histogram():
    hist = load_preset("short", total_rate=2.0)
    result = run(make_config(rate=2.0, seed=1, n_requests=400))

    for i, o in zip(result.input_tokens, result.output_tokens):
        assert hist.rates[bucket_of(i, o)] > 0


def test_routing_frequencies_follow_max_tput():
    grid = BucketGrid((10,), (10,))
    fast = make_flat_profile("fast", grid, 3.0)
    slow = make_flat_profile("slow", grid, 1.0)
    instances = [GpuInstanceState(0, fast, DEFAULT_MODEL), GpuInstanceState(1, slow, DEFAULT_MODEL)]
    rng = np.random.default_rng(0)

    draws = 100000
    picks = np.array([route((0, 0), instances, rng) for _ in range(draws)])
    expected = 0.75 * draws
    sigma = np.sqrt(draws * 0.75 * 0.25)

    assert abs(np.count_nonzero(picks == 0) - expected) <= 3 * sigma
    assert np.allclose(routing_weights((0, 0), instances), [0.75, 0.25])


def test_routing_without_capable_instance_still_draws():
    grid = BucketGrid((10,), (10,))
    blocked = ThroughputProfile(GpuType("blocked", 1.0, 24, 100, 100), 120.0, grid, [[np.nan]])
    instances = [GpuInstanceState(0, blocked, DEFAULT_MODEL)]

    rng = np.random.default_rng(21)
    reference = np.random.default_rng(21)
    assert route((0, 0), instances, rng) is None
    reference.random()
    assert rng.random() == reference.random()

    assert route((0, 0), [], np.random.default_rng(0)) is None


def test_lb_running_mean():
    lb = LbState(DEFAULT_GRID)
    assert lb.mean_output(1) is None
    # cold start: midpoint of the lower median output bucket (100, 250]
    assert lb.cold_start_output() == 175.0
    assert estimate_bucket(lb, 60) == (1, 2)

    lb.observe(50, 100)
    lb.observe(50, 301)
    assert lb.mean_output(1) == Fraction(401, 2)
    assert estimate_bucket(lb, 60) == (1, 2)

    lb.observe(90, 999)
    assert lb.mean_output(1) == Fraction(1400, 3)
    assert estimate_bucket(lb, 60) == (1, 3)
    # other input buckets are still cold
    assert estimate_bucket(lb, 5) == (0, 2)


def test_short_workload_meets_slo_with_headroom():
    profiles = [synth_profile(gpu, slo_tpot_ms=120.0) for gpu in load_gpu_registry()]
    hist = load_preset("short", total_rate=4.0)
    slices = slice_workload(scale_rate(hist, 1.1), slice_factor=8)
    plan = solve_exact(formulate(slices, load_matrix(slices, profiles)))

    for seed in range(5):
        result = run(SimConfig(plan, profiles, workload=hist, rate=4.0, n_requests=2000, seed=seed))
        assert result.n_dropped == 0
        assert slo_attainment(result) >= 0.99


def test_attainment_counts_drops_as_misses():
    profiles = [synth_profile(gpu, slo_tpot_ms=120.0) for gpu in load_gpu_registry()[:2]]
    # L4 and A10G cannot serve the longest inputs of the long preset
    config = SimConfig(
        allocation={"L4": 2, "A10G": 2},
        profiles=profiles,
        workload=load_preset("long"),
        rate=0.5,
        n_requests=300,
        seed=2,
    )
    result = run(config)

    assert result.n_dropped > 0
    assert result.n_completed + result.n_dropped == result.n_requests == 300
    assert np.all(np.isnan(result.tpot_ms[~result.completed]))
    assert np.all(np.isfinite(result.tpot_ms[result.completed]))

    met = np.count_nonzero(result.tpot_ms[result.completed] <= 120.0)
    assert slo_attainment(result) == met / 300
    assert result.attainment == slo_attainment(result)
    assert slo_attainment(result, 1e9) == result.n_completed / 300


def test_attainment_never_rises_with_rate():
    # same seed and fleet: the sizes and arrival gaps are shared across rates
    for seed in range(3):
        attainments = [
            slo_attainment(run(make_config(rate=rate, seed=seed, n_requests=1000))) for rate in (1, 2, 4, 8, 16, 32)
        ]
        assert all(later <= earlier for earlier, later in zip(attainments, attainments[1:])), attainments
        assert attainments[-1] < attainments[0]


def test_requests_are_conserved_at_every_event():
    events = []
    result = run(make_config(rate=6.0, seed=8, n_requests=500), on_event=events.append)

    for event in events:
        assert event.completed + event.in_flight + event.dropped == event.arrived
    assert [e.time for e in events] == sorted(e.time for e in events)
    assert {e.kind for e in events} == {"arrive", "admit", "complete"}
    assert max(e.in_batch for e in events) > 1
    assert events[-1].arrived == result.n_requests == 500
    assert events[-1].in_flight == 0


def test_conservation_with_drops():
    profiles = [synth_profile(gpu, slo_tpot_ms=120.0) for gpu in load_gpu_registry()[:2]]
    config = SimConfig({"L4": 2, "A10G": 2}, profiles, workload=load_preset("long"), rate=0.5, n_requests=200, seed=2)
    events = []
    result = run(config, on_event=events.append)

    for event in events:
        assert event.completed + event.in_flight + event.dropped == event.arrived
    assert events[-1].dropped == result.n_dropped > 0


def test_every_request_is_accounted_for():
    result = run(make_config(rate=6.0, seed=8, n_requests=500))

    assert result.n_requests == 500
    assert result.n_completed == 500
    assert np.all(np.diff(result.arrival_s) >= 0)
    assert np.all(result.tpot_ms > 0)
    assert set(result.gpu) <= {"A10G", "A100"}


def test_trace_replay_uses_recorded_arrivals():
    trace = [RequestRecord(80, 60, 2.0), RequestRecord(20, 30, 0.5), RequestRecord(300, 200, 1.0)]
    profiles = [synth_profile(get_gpu("A100"), slo_tpot_ms=120.0)]
    result = run(SimConfig({"A100": 1}, profiles, trace=trace, n_requests=10))

    assert result.arrival_s.tolist() == [0.5, 1.0, 2.0]
    assert result.input_tokens.tolist() == [20, 300, 80]
    assert result.n_completed == 3


def test_trace_resampled_at_rate():
    trace = [RequestRecord(80, 60), RequestRecord(20, 30)]
    profiles = [synth_profile(get_gpu("A100"), slo_tpot_ms=120.0)]
    result = run(SimConfig({"A100": 1}, profiles, trace=trace, rate=2.0, n_requests=5))

    assert result.input_tokens.tolist() == [80, 20, 80, 20, 80]


def test_config_validation():
    profiles = [synth_profile(get_gpu("A100"), slo_tpot_ms=120.0)]
    hist = load_preset("short")

    with pytest.raises(ValueError):
        SimConfig({"A100": 1}, profiles, rate=1.0)
    with pytest.raises(ValueError):
        SimConfig({"A100": 1}, profiles, workload=hist)
    with pytest.raises(ValueError):
        SimConfig({"H100": 1}, profiles, workload=hist, rate=1.0)
    with pytest.raises(ValueError):
        SimConfig({"A100": -1}, profiles, workload=hist, rate=1.0)
    with pytest.raises(ValueError):
        SimConfig({"A100": 1}, profiles, workload=hist, rate=1.0, n_requests=0)
    with pytest.raises(ValueError):
        SimConfig({"A100": 1}, profiles, trace=[RequestRecord(5, 5)])


def test_cdf_and_exports(tmp_path):
    result = run(make_config(seed=3, n_requests=200))
    x, frac = result.cdf()

    assert np.all(np.diff(x) >= 0)
    assert frac[-1] == pytest.approx(1.0)
    assert result.percentile(50) <= result.percentile(99)

    cdf = pd.read_csv(export_cdf_csv(result, tmp_path / "cdf.csv"))
    samples = pd.read_csv(export_samples_csv(result, tmp_path / "out" / "samples.csv"))

    assert list(cdf.columns) == ["tpot_ms", "cumulative_fraction"]
    assert len(cdf) == result.n_completed
    assert len(samples) == 200
    assert "ttft_ms" in samples.columns

    summary = result.summary()
    assert summary["requests"] == 200
    assert summary["slo_tpot_ms"] == 120.0


def get_gpu(name):
    return next(g for g in load_gpu_registry() if g.name == name)


def bucket_of(i, o):
    from gpumix.workload import bucket_index

    return bucket_index(DEFAULT_GRID, int(i), int(o))


def make_flat_profile(name, grid, tput):
    return ThroughputProfile(GpuType(name, 1.0, 24, 100, 100), 120.0, grid, np.full(grid.shape, tput))


def make_config(rate=2.0, seed=0, n_requests=300):
    profiles = [synth_profile(get_gpu(name), slo_tpot_ms=120.0) for name in ("A10G", "A100")]
    return SimConfig(
        allocation={"A10G": 2, "A100": 1},
        profiles=profiles,
        workload=load_preset("short", total_rate=rate),
        rate=rate,
        n_requests=n_requests,
        seed=seed,
    )
