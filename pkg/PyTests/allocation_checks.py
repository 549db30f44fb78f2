import numpy as np


# independent of the solver: recompute everything from the float loads
def check_allocation(instance, allocation, tol=1e-9):
    loads = instance.loads
    n, m = loads.shape
    counts = np.asarray(allocation.counts)
    assignment = allocation.assignment

    assert assignment.shape == (n, m)
    # every slice on exactly one GPU type
    assert np.all(assignment.sum(axis=1) == 1)
    # never on a forbidden type
    assert not np.any(assignment.astype(bool) & np.isnan(loads))
    assert np.all(counts >= 0)

    column_loads = np.where(assignment.astype(bool), np.nan_to_num(loads), 0.0).sum(axis=0)
    assert np.all(column_loads <= counts + tol), (column_loads, counts)

    cost = float(counts @ instance.costs)
    assert abs(cost - allocation.total_cost) <= 1e-6 * max(1.0, cost)
    return column_loads


def random_instance(rng, n, m, forbid_share=0.2, load_range=(0.05, 0.9)):
    loads = np.round(rng.uniform(*load_range, size=(n, m)), 3)
    forbid = rng.random((n, m)) < forbid_share
    # keep one permitted type per slice
    forbid[np.arange(n), rng.integers(0, m, size=n)] = False
    loads[forbid] = np.nan
    costs = np.round(rng.uniform(0.5, 8.0, size=m), 2)
    return loads, costs
