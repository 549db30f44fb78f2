import sys
import os
import numpy as np
import pytest

# caution: path[0] is reserved for script path (or '' in REPL)
THIS_DIR = os.path.dirname(os.path.abspath(__file__))
PARENT_DIR = os.path.dirname(THIS_DIR)

# add parent directory to path so we can import gpumix
sys.path.insert(1, PARENT_DIR)
sys.path.insert(1, THIS_DIR)

from allocation_checks import check_allocation, random_instance
from gpumix.allocator import (
    BaselineInfeasibleError,
    GloballyInfeasibleError,
    IlpInstance,
    InstanceTooLargeError,
    SolverTimeoutError,
    brute_force_oracle,
    formulate,
    savings,
    solve_exact,
    solve_single_type,
)
from gpumix.profiles import load_gpu_registry, load_matrix, synth_profile
from gpumix.workload import DEFAULT_GRID, Slice, WorkloadHistogram, load_preset, slice_workload


def test_exact_matches_oracle_on_random_instances():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        m = int(rng.integers(2, 4))
        n = int(rng.integers(3, 11))
        loads, costs = random_instance(rng, n, m, load_range=(0.05, 1.5))
        instance = IlpInstance.from_arrays(loads, costs)

        exact = solve_exact(instance)
        oracle = brute_force_oracle(instance)

        check_allocation(instance, exact)
        check_allocation(instance, oracle)
        assert exact.total_cost == oracle.total_cost
        assert exact.counts == oracle.counts
        assert exact.lower_bound <= exact.total_cost + 1e-9


def test_exact_never_worse_than_single_type():
    rng = np.random.default_rng(7)
    for _ in range(50):
        loads, costs = random_instance(rng, 10, 3, forbid_share=0.1)
        instance = IlpInstance.from_arrays(loads, costs)
        exact = solve_exact(instance)

        for j in range(instance.n_gpu_types):
            try:
                baseline = solve_single_type(instance, j)
            except BaselineInfeasibleError:
                continue
            check_allocation(instance, baseline)
            assert exact.total_cost <= baseline.total_cost + 1e-12


def test_more_demand_never_costs_less():
    rng = np.random.default_rng(11)
    for _ in range(50):
        loads, costs = random_instance(rng, 6, 3)
        extra, _ = random_instance(rng, 1, 3)
        # lower MaxTput on random pairs means higher loads there
        slower = loads * np.where(rng.random(loads.shape) < 0.5, 1.25, 1.0)

        base = solve_exact(IlpInstance.from_arrays(loads, costs)).total_cost
        assert solve_exact(IlpInstance.from_arrays(np.vstack([loads, extra]), costs)).total_cost >= base
        assert solve_exact(IlpInstance.from_arrays(loads * 2, costs)).total_cost >= base
        assert solve_exact(IlpInstance.from_arrays(slower, costs)).total_cost >= base


def test_finer_slices_never_cost_more():
    registry = load_gpu_registry()
    profiles = [synth_profile(gpu, slo_tpot_ms=120.0) for gpu in registry]
    rng = np.random.default_rng(17)

    for _ in range(50):
        rates = np.zeros(DEFAULT_GRID.shape)
        for _ in range(3):
            rates[int(rng.integers(0, 6)), int(rng.integers(0, 6))] = round(float(rng.uniform(0.05, 1.0)), 3)
        hist = WorkloadHistogram(DEFAULT_GRID, rates)
        types = sorted(rng.choice(4, size=int(rng.integers(2, 4)), replace=False))
        chosen = [profiles[j] for j in types]

        previous = None
        for factor in (1, 2, 4, 8):
            slices = slice_workload(hist, slice_factor=factor)
            cost = solve_exact(formulate(slices, load_matrix(slices, chosen))).total_cost
            if previous is not None:
                assert cost <= previous + 1e-9
            previous = cost


def test_single_type_baseline_is_ceiling_of_load():
    instance = IlpInstance.from_arrays([[1.2], [1.2]], [1.0])
    baseline = solve_single_type(instance, 0)
    assert baseline.counts == (3,)
    assert baseline.total_cost == pytest.approx(3.0)

    exact = solve_exact(instance)
    assert exact.counts == (3,)

    # 0.1 + 0.2 + 0.7 is exactly one instance in integer units
    instance = IlpInstance.from_arrays([[0.1], [0.2], [0.7]], [2.0])
    assert solve_single_type(instance, 0).counts == (1,)
    assert solve_exact(instance).counts == (1,)


def test_single_type_baseline_on_random_instances():
    rng = np.random.default_rng(23)
    for _ in range(100):
        loads, costs = random_instance(rng, int(rng.integers(1, 30)), 2, forbid_share=0.0)
        instance = IlpInstance.from_arrays(loads, costs)
        for j in range(2):
            baseline = solve_single_type(instance, j)
            # loads carry three decimals, so the float sum is exact enough to ceil
            expected = int(np.ceil(round(loads[:, j].sum(), 6)))
            assert baseline.counts[j] == expected
            assert baseline.counts[1 - j] == 0
            check_allocation(instance, baseline)


def test_single_type_baseline_rejects_forbidden_slices():
    instance = IlpInstance.from_arrays([[0.5, np.nan], [0.5, 0.5]], [1.0, 2.0], ["cheap", "big"])
    with pytest.raises(BaselineInfeasibleError) as info:
        solve_single_type(instance, "big")
    assert info.value.gpu == "big"
    assert solve_single_type(instance, "cheap").counts == (1, 0)


def test_mixed_plan_uses_cheap_gpu_for_small_slices():
    # slice 0 only fits the big GPU; the rest are cheaper on the small one
    loads = [[np.nan, 0.5], [0.6, 0.2], [0.6, 0.2]]
    instance = IlpInstance.from_arrays(loads, [1.0, 3.0], ["small", "big"])
    plan = solve_exact(instance)

    check_allocation(instance, plan)
    # big alone: 0.9 -> 1 instance = 3.0, the mix would cost 3.0 + 2 x 1.0
    assert plan.counts == (0, 1)
    assert plan.total_cost == pytest.approx(3.0)


def test_tie_goes_to_smallest_count_vector():
    # one instance of either type costs the same
    instance = IlpInstance.from_arrays([[0.5, 0.5]], [2.0, 2.0])
    assert solve_exact(instance).counts == (0, 1)
    assert brute_force_oracle(instance).counts == (0, 1)


def test_globally_infeasible_slice():
    slices = [Slice((0, 0), 1.0), Slice((9, 5), 1.0)]
    loads = [[0.1, 0.2], [np.nan, np.nan]]
    instance = IlpInstance(np.array(loads), np.array([1.0, 2.0]), ("a", "b"), tuple(slices))

    with pytest.raises(GloballyInfeasibleError) as info:
        solve_exact(instance)
    assert info.value.buckets == [(9, 5)]
    assert info.value.slice_indices == [1]

    with pytest.raises(GloballyInfeasibleError):
        brute_force_oracle(instance)


def test_formulate_checks_feasibility():
    registry = load_gpu_registry()
    l4 = synth_profile(registry[0], slo_tpot_ms=120.0)
    slices = [Slice((0, 0), 0.5), Slice((9, 5), 0.1)]

    with pytest.raises(GloballyInfeasibleError) as info:
        formulate(slices, load_matrix(slices, [l4]))
    assert info.value.buckets == [(9, 5)]


def test_empty_instance_costs_nothing():
    instance = IlpInstance.from_arrays(np.zeros((0, 2)), [1.0, 2.0])
    plan = solve_exact(instance)

    assert plan.counts == (0, 0)
    assert plan.total_cost == 0.0
    assert brute_force_oracle(instance).counts == (0, 0)


def test_oracle_refuses_large_instances():
    instance = IlpInstance.from_arrays(np.full((12, 4), 0.1), [1.0, 2.0, 3.0, 4.0])
    with pytest.raises(InstanceTooLargeError):
        brute_force_oracle(instance)


def test_timeout_raises():
    rng = np.random.default_rng(5)
    loads, costs = random_instance(rng, 40, 4, forbid_share=0.0)
    with pytest.raises(SolverTimeoutError):
        solve_exact(IlpInstance.from_arrays(loads, costs), time_limit=1e-9)
    with pytest.raises(ValueError):
        solve_exact(IlpInstance.from_arrays(loads, costs), time_limit=0)


def test_instance_validation():
    with pytest.raises(ValueError):
        IlpInstance.from_arrays([[0.1]], [0.0])
    with pytest.raises(ValueError):
        IlpInstance.from_arrays([[-0.1]], [1.0])
    with pytest.raises(ValueError):
        IlpInstance.from_arrays([[np.inf]], [1.0])
    with pytest.raises(ValueError):
        IlpInstance(np.array([[0.1]]), np.array([1.0]), ("a", "b"))


def test_price_scaling_keeps_the_plan():
    rng = np.random.default_rng(3)
    for _ in range(20):
        loads, costs = random_instance(rng, 8, 3)
        plan = solve_exact(IlpInstance.from_arrays(loads, costs))
        doubled = solve_exact(IlpInstance.from_arrays(loads, costs * 2))

        assert doubled.counts == plan.counts
        assert doubled.total_cost == pytest.approx(2 * plan.total_cost)


def test_solver_is_deterministic():
    rng = np.random.default_rng(9)
    loads, costs = random_instance(rng, 12, 3)
    instance = IlpInstance.from_arrays(loads, costs)

    first = solve_exact(instance)
    second = solve_exact(instance)
    assert first.counts == second.counts
    assert first.choice == second.choice
    assert first.total_cost == second.total_cost


def test_full_grid_instance():
    registry = load_gpu_registry()
    profiles = [synth_profile(gpu, slo_tpot_ms=120.0) for gpu in registry]
    hist = WorkloadHistogram(DEFAULT_GRID, np.full(DEFAULT_GRID.shape, 4.0 / DEFAULT_GRID.n_buckets))
    slices = slice_workload(hist, slice_factor=8)
    instance = formulate(slices, load_matrix(slices, profiles))

    assert (instance.n_slices, instance.n_gpu_types) == (480, 4)

    plan = solve_exact(instance, time_limit=60.0)
    check_allocation(instance, plan, tol=1e-6)
    for name in ("A100", "H100"):
        assert plan.total_cost <= solve_single_type(instance, name).total_cost + 1e-12
    # L4 and A10G cannot take the longest contexts
    for name in ("L4", "A10G"):
        with pytest.raises(BaselineInfeasibleError):
            solve_single_type(instance, name)

    doc = plan.to_dict(slices)
    assert sum(sum(entry["slices"].values()) for entry in doc["assignment"]) == 480


def test_preset_workloads_solve_within_budget():
    registry = load_gpu_registry()
    for slo in (40.0, 120.0):
        profiles = [synth_profile(gpu, slo_tpot_ms=slo) for gpu in registry]
        for name in ("short", "mixed-80-20", "long"):
            previous = 0.0
            for rate in (1, 2, 4, 8, 16, 32):
                slices = slice_workload(load_preset(name, total_rate=rate), slice_factor=8)
                instance = formulate(slices, load_matrix(slices, profiles))
                plan = solve_exact(instance, time_limit=60.0)

                check_allocation(instance, plan, tol=1e-6)
                assert plan.lower_bound <= plan.total_cost + 1e-9
                assert plan.total_cost >= previous, (name, slo, rate)
                previous = plan.total_cost
                for j in range(instance.n_gpu_types):
                    try:
                        baseline = solve_single_type(instance, j)
                    except BaselineInfeasibleError:
                        continue
                    assert plan.total_cost <= baseline.total_cost + 1e-12, (name, slo, rate, j)


def test_savings():
    assert round(savings(1.71, 7.516), 2) == 77.25
    assert round(savings(1.71, 3.67), 2) == 53.41
    assert round(savings(11.186, 15.032), 2) == 25.59
    assert round(savings(11.186, 14.68), 2) == 23.80
    assert round(savings(3.67, 7.516), 2) == 51.17
    with pytest.raises(ValueError):
        savings(1.0, 0.0)


def test_allocation_to_dict():
    slices = [Slice((0, 0), 0.2, 0), Slice((0, 0), 0.2, 1), Slice((1, 2), 0.4)]
    instance = IlpInstance(
        np.array([[0.3, 0.1], [0.3, 0.1], [np.nan, 0.5]]), np.array([1.0, 4.0]), ("L4", "A100"), tuple(slices)
    )
    plan = solve_exact(instance)
    doc = plan.to_dict(slices)

    assert doc["counts"] == plan.counts_by_name
    assert doc["total_cost"] == plan.total_cost
    assert [entry["bucket"] for entry in doc["assignment"]] == [[0, 0], [1, 2]]
