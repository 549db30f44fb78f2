import logging
import math
import time
from dataclasses import dataclass, field
from functools import reduce
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from gpumix.profiles import LoadMatrix
from gpumix.workload import Bucket, Slice

# loads and prices are compared as integer multiples of 1e-9
NANO = 10**9

INTEGRALITY_TOL = 1e-6
# capacity slack (in instances) handed to the floating-point solvers
CAPACITY_TOL = 1e-7
ORACLE_LIMIT = 10**7
_HIGHS_OPTIONS = {"presolve": True, "primal_feasibility_tolerance": 1e-10}


class GloballyInfeasibleError(ValueError):
    """Some slices cannot be placed on any of the GPU types."""

    def __init__(self, buckets: Sequence[Bucket], slice_indices: Sequence[int] = ()):
        self.buckets = sorted(set(tuple(b) for b in buckets))
        self.slice_indices = list(slice_indices)
        listed = ", ".join(str(b) for b in self.buckets) or f"slices {self.slice_indices}"
        super().__init__(f"no GPU type can serve bucket(s) {listed}")


class BaselineInfeasibleError(ValueError):
    """A single-type baseline cannot serve every slice."""

    def __init__(self, gpu: str, n_infeasible: int):
        self.gpu = gpu
        super().__init__(f"{gpu} cannot serve {n_infeasible} slice(s) of this workload")


class InstanceTooLargeError(ValueError):
    pass


class SolverTimeoutError(RuntimeError):
    pass


def _to_units(values: np.ndarray) -> np.ndarray:
    # np.rint rounds half to even
    return np.rint(np.asarray(values, dtype=float) * NANO).astype(np.int64)


def _ceil_units(column_units: np.ndarray) -> np.ndarray:
    return -(-column_units // NANO)


@dataclass(frozen=True, eq=False)
class IlpInstance:
    """
    Cost-aware bin packing: place every slice (row) on one GPU type (column), then buy
    enough instances of each type to cover the summed loads. NaN loads mark forbidden pairs.
    """

    loads: np.ndarray
    costs: np.ndarray
    gpu_names: Tuple[str, ...]
    slices: Tuple[Slice, ...] = ()
    load_units: np.ndarray = field(init=False, repr=False)
    cost_units: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        costs = np.array(self.costs, dtype=float).reshape(-1)
        loads = np.array(self.loads, dtype=float).reshape(-1, costs.size)
        if costs.size == 0:
            raise ValueError("at least one GPU type is required")
        if np.any(~(costs > 0)):
            raise ValueError("GPU costs must be positive")
        if np.any(loads[~np.isnan(loads)] < 0) or np.any(np.isinf(loads)):
            raise ValueError("loads must be finite and non-negative")
        if len(self.gpu_names) != costs.size:
            raise ValueError("one name is required per GPU type")
        if self.slices and len(self.slices) != loads.shape[0]:
            raise ValueError("one slice is required per load row")

        allowed = ~np.isnan(loads)
        load_units = np.where(allowed, _to_units(np.nan_to_num(loads)), 0)
        cost_units = _to_units(costs)
        if np.any(cost_units < 1):
            raise ValueError("GPU costs must be at least 1e-9")

        for arr in (loads, costs, load_units, cost_units):
            arr.setflags(write=False)
        object.__setattr__(self, "loads", loads)
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "gpu_names", tuple(self.gpu_names))
        object.__setattr__(self, "slices", tuple(self.slices))
        object.__setattr__(self, "load_units", load_units)
        object.__setattr__(self, "cost_units", cost_units)

    @classmethod
    def from_arrays(
        cls, loads, costs, gpu_names: Optional[Sequence[str]] = None
    ) -> "IlpInstance":
        costs = np.asarray(costs, dtype=float).reshape(-1)
        names = tuple(gpu_names) if gpu_names is not None else tuple(f"gpu{j}" for j in range(costs.size))
        return cls(np.asarray(loads, dtype=float).reshape(-1, costs.size), costs, names)

    @property
    def n_slices(self) -> int:
        return self.loads.shape[0]

    @property
    def n_gpu_types(self) -> int:
        return self.loads.shape[1]

    @property
    def allowed(self) -> np.ndarray:
        return ~np.isnan(self.loads)

    @property
    def forbidden(self) -> frozenset:
        return frozenset((int(i), int(j)) for i, j in np.argwhere(np.isnan(self.loads)))

    def gpu_index(self, gpu: Union[int, str]) -> int:
        if isinstance(gpu, str):
            try:
                return self.gpu_names.index(gpu)
            except ValueError:
                raise ValueError(f"Unknown GPU type {gpu!r}") from None
        if not 0 <= gpu < self.n_gpu_types:
            raise ValueError(f"GPU index {gpu} out of range")
        return int(gpu)

    def check_feasible(self) -> None:
        """Raises `GloballyInfeasibleError` when a slice has no permitted GPU type."""
        stranded = np.flatnonzero(~self.allowed.any(axis=1))
        if stranded.size:
            buckets = [self.slices[i].bucket for i in stranded] if self.slices else []
            raise GloballyInfeasibleError(buckets, stranded.tolist())


@dataclass(frozen=True)
class Allocation:
    """
    Instance count per GPU type (`counts`), the GPU type chosen for each slice (`choice`)
    and the hourly cost. `lower_bound` is the relaxation bound the optimum was proven against.
    """

    counts: Tuple[int, ...]
    choice: Tuple[int, ...]
    total_cost: float
    gpu_names: Tuple[str, ...]
    lower_bound: float = 0.0
    nodes: int = 0

    @property
    def assignment(self) -> np.ndarray:
        """Binary slice x GPU-type matrix."""
        matrix = np.zeros((len(self.choice), len(self.counts)), dtype=np.int8)
        matrix[np.arange(len(self.choice)), np.asarray(self.choice, dtype=np.int64)] = 1
        return matrix

    @property
    def counts_by_name(self) -> Dict[str, int]:
        return dict(zip(self.gpu_names, self.counts))

    def to_dict(self, slices: Sequence[Slice] = ()) -> dict:
        """
        >>> Allocation.to_dict(slices: Sequence[Slice] = ()) -> dict

        Serializable summary: counts per GPU name, total cost, proof bound, node count and,
        when the slices are given, how many slices of each bucket went to each GPU type.
        """
        doc = {
            "counts": self.counts_by_name,
            "total_cost": self.total_cost,
            "lower_bound": self.lower_bound,
            "nodes": self.nodes,
        }
        if slices:
            summary: Dict[Bucket, Dict[str, int]] = {}
            for s, j in zip(slices, self.choice):
                per_gpu = summary.setdefault(tuple(s.bucket), {})
                per_gpu[self.gpu_names[j]] = per_gpu.get(self.gpu_names[j], 0) + 1
            doc["assignment"] = [
                {"bucket": list(bucket), "slices": per_gpu} for bucket, per_gpu in summary.items()
            ]
        return doc


def formulate(
    slices: Sequence[Slice], load_matrix: LoadMatrix, costs: Optional[Sequence[float]] = None
) -> IlpInstance:
    """
    >>> formulate(slices: Sequence[Slice], load_matrix: LoadMatrix, costs: Optional[Sequence[float]] = None) -> IlpInstance

    Builds the packing instance. Costs default to the hourly price of each GPU type in the
    load matrix. Infeasible loads become forbidden assignments.

    Raises
    ------
    * `ValueError` :
        If the dimensions do not agree.
    * `GloballyInfeasibleError` :
        If some slice has no feasible GPU type. The error lists the buckets.

    Examples
    --------
    >>> instance = formulate(slices, load_matrix(slices, profiles))
    >>> instance.n_slices, instance.n_gpu_types
    (480, 4)
    """
    if len(slices) != load_matrix.shape[0]:
        raise ValueError(f"{len(slices)} slices but the load matrix has {load_matrix.shape[0]} rows")
    if costs is None:
        costs = [g.hourly_cost for g in load_matrix.gpus]
    if len(costs) != load_matrix.shape[1]:
        raise ValueError(f"{len(costs)} costs but the load matrix has {load_matrix.shape[1]} GPU types")

    instance = IlpInstance(
        load_matrix.entries, np.asarray(costs, dtype=float), tuple(g.name for g in load_matrix.gpus), tuple(slices)
    )
    instance.check_feasible()
    return instance


def _allocation(instance, counts, choice, total_units, lower_bound, nodes) -> Allocation:
    return Allocation(
        counts=tuple(int(b) for b in counts),
        choice=tuple(int(j) for j in choice),
        total_cost=int(total_units) / NANO,
        gpu_names=instance.gpu_names,
        lower_bound=float(lower_bound),
        nodes=int(nodes),
    )


def _empty_allocation(instance: IlpInstance) -> Allocation:
    return _allocation(instance, [0] * instance.n_gpu_types, [], 0, 0.0, 0)


def solve_single_type(instance: IlpInstance, gpu: Union[int, str]) -> Allocation:
    """
    >>> solve_single_type(instance: IlpInstance, gpu: Union[int, str]) -> Allocation

    Baseline that rents only one GPU type: every slice goes to it and the count is the
    ceiling of the summed loads.

    Raises
    ------
    * `BaselineInfeasibleError` :
        If some slice is infeasible on that GPU type.

    Examples
    --------
    >>> instance = IlpInstance.from_arrays([[1.2], [1.2]], [1.0])
    >>> solve_single_type(instance, 0).counts
    (3,)
    """
    j = instance.gpu_index(gpu)
    blocked = int((~instance.allowed[:, j]).sum())
    if blocked:
        raise BaselineInfeasibleError(instance.gpu_names[j], blocked)

    counts = np.zeros(instance.n_gpu_types, dtype=np.int64)
    counts[j] = _ceil_units(instance.load_units[:, j].sum())
    total_units = int(counts[j] * instance.cost_units[j])
    return _allocation(instance, counts, [j] * instance.n_slices, total_units, total_units / NANO, 0)


def brute_force_oracle(instance: IlpInstance, limit: int = ORACLE_LIMIT) -> Allocation:
    """
    >>> brute_force_oracle(instance: IlpInstance, limit: int = ORACLE_LIMIT) -> Allocation

    Enumerates every assignment of slices to GPU types (M^N of them) and keeps the cheapest.
    Ties go to the lexicographically smaller count vector, then to the first assignment in
    enumeration order (slice 0 varies slowest). Only meant for checking the exact solver.

    Raises
    ------
    * `InstanceTooLargeError` :
        If M^N exceeds `limit`.
    * `GloballyInfeasibleError` :
        If some slice has no feasible GPU type.
    """
    n, m = instance.n_slices, instance.n_gpu_types
    if m**n > limit:
        raise InstanceTooLargeError(f"{m}^{n} assignments exceed the enumeration limit of {limit}")
    if n == 0:
        return _empty_allocation(instance)
    instance.check_feasible()

    allowed = instance.allowed
    units = instance.load_units
    powers = m ** np.arange(n - 1, -1, -1, dtype=np.int64)
    rows = np.arange(n)
    total = m**n
    chunk = max(1, 2**18 // n)

    best = None
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total), dtype=np.int64)
        digits = (codes[:, None] // powers) % m
        ok = allowed[rows[None, :], digits].all(axis=1)
        if not ok.any():
            continue
        codes, digits = codes[ok], digits[ok]

        columns = np.stack(
            [np.where(digits == j, units[:, j], 0).sum(axis=1) for j in range(m)], axis=1
        )
        counts = _ceil_units(columns)
        costs = counts @ instance.cost_units

        sel = np.flatnonzero(costs == costs.min())
        keys = (codes[sel],) + tuple(counts[sel, j] for j in reversed(range(m)))
        k = sel[np.lexsort(keys)[0]]
        candidate = (int(costs[k]), tuple(int(c) for c in counts[k]), int(codes[k]))
        if best is None or candidate < best:
            best = candidate

    total_units, counts, code = best
    choice = (code // powers) % m
    return _allocation(instance, counts, choice, total_units, total_units / NANO, total)


class _GroupedProgram:
    """
    Slices with identical load rows are interchangeable, so the search works on how many
    slices of each group go to each GPU type (x) and on the instance counts (B):

        min c.B   s.t.   sum_j x[g, j] = size[g],   sum_g L[g, j] x[g, j] - B[j] <= 0

    Capacity rows are relaxed by `CAPACITY_TOL` so that an exactly full GPU never looks
    infeasible to the floating-point solver. Integral answers are re-checked in units.
    """

    def __init__(self, instance: IlpInstance):
        self.instance = instance
        m = instance.n_gpu_types

        groups: Dict[tuple, int] = {}
        self.members: List[List[int]] = []
        for i in range(instance.n_slices):
            key = tuple(np.where(instance.allowed[i], instance.load_units[i], -1).tolist())
            if key not in groups:
                groups[key] = len(self.members)
                self.members.append([])
            self.members[groups[key]].append(i)
        self.sizes = np.array([len(g) for g in self.members], dtype=np.int64)

        # x variables for permitted (group, type) pairs, row-major, then one B per type
        self.pairs = [
            (g, j)
            for g, rows in enumerate(self.members)
            for j in range(m)
            if instance.allowed[rows[0], j]
        ]
        self.nx = len(self.pairs)
        self.pair_group = np.array([g for g, _ in self.pairs], dtype=np.int64)
        self.pair_type = np.array([j for _, j in self.pairs], dtype=np.int64)
        self.pair_units = np.array(
            [instance.load_units[self.members[g][0], j] for g, j in self.pairs], dtype=np.int64
        )
        nv = self.nx + m

        self.c = np.concatenate([np.zeros(self.nx), instance.cost_units / NANO])
        self.a_eq = np.zeros((len(self.members), nv))
        self.a_eq[self.pair_group, np.arange(self.nx)] = 1.0
        self.b_eq = self.sizes.astype(float)
        self.a_ub = np.zeros((m, nv))
        self.a_ub[self.pair_type, np.arange(self.nx)] = self.pair_units / NANO
        self.a_ub[np.arange(m), self.nx + np.arange(m)] = -1.0
        self.b_ub = np.full(m, CAPACITY_TOL)

        most = np.zeros(m, dtype=np.int64)
        np.add.at(most, self.pair_type, self.pair_units * self.sizes[self.pair_group])
        self.bounds = np.zeros((nv, 2))
        self.bounds[: self.nx, 1] = self.sizes[self.pair_group]
        self.bounds[self.nx :, 1] = _ceil_units(most)

        granularity = reduce(math.gcd, (int(c) for c in instance.cost_units))
        self.slack = min(granularity / 2.0, 100.0)

    def solve_lp(self, bounds, cost_cap: Optional[int] = None, objective: Optional[np.ndarray] = None):
        a_ub, b_ub = self.a_ub, self.b_ub
        if cost_cap is not None:
            a_ub = np.vstack([a_ub, self.c])
            b_ub = np.append(b_ub, (cost_cap + self.slack) / NANO)
        res = linprog(
            self.c if objective is None else objective,
            A_ub=a_ub,
            b_ub=b_ub,
            A_eq=self.a_eq,
            b_eq=self.b_eq,
            bounds=bounds,
            method="highs",
            options=_HIGHS_OPTIONS,
        )
        if res.status == 2:
            return None
        if res.status != 0:
            raise RuntimeError(f"LP relaxation failed: {res.message}")
        return res.fun, res.x

    def column_units(self, x: np.ndarray) -> np.ndarray:
        columns = np.zeros(self.instance.n_gpu_types, dtype=np.int64)
        np.add.at(columns, self.pair_type, self.pair_units * x)
        return columns

    def fits(self, x: np.ndarray, counts: Sequence[int]) -> bool:
        """Exact check in integer units: every group placed, no GPU type over its counted capacity."""
        placed = np.zeros(len(self.members), dtype=np.int64)
        np.add.at(placed, self.pair_group, x)
        capacity = np.asarray(counts, dtype=np.int64) * NANO
        return bool(np.all(x >= 0) and np.array_equal(placed, self.sizes) and np.all(self.column_units(x) <= capacity))

    def cost_of(self, counts: np.ndarray) -> int:
        return int(counts @ self.instance.cost_units)

    def evaluate(self, x: np.ndarray) -> Tuple[int, Tuple[int, ...]]:
        counts = _ceil_units(self.column_units(x))
        return self.cost_of(counts), tuple(int(b) for b in counts)

    def assign(self, x: np.ndarray) -> List[int]:
        choice = [0] * self.instance.n_slices
        filled = [0] * len(self.members)
        for k, (g, j) in enumerate(self.pairs):
            for i in self.members[g][filled[g] : filled[g] + int(x[k])]:
                choice[i] = j
            filled[g] += int(x[k])
        return choice

    def split_on_overload(self, bounds, x: np.ndarray, column: int):
        """
        Children for an integral x whose exact column load exceeds the fixed count (a
        tolerance artifact). Returns the child bounds, possibly none.
        """
        in_column = np.flatnonzero((self.pair_type == column) & (x > bounds[: self.nx, 0]))
        if not in_column.size:
            return []
        k = int(in_column[np.argmax(self.pair_units[in_column])])
        down, up = bounds.copy(), bounds.copy()
        down[k, 1] = x[k] - 1
        up[k, 0] = x[k]
        return [down, up]


class _Search:
    def __init__(self, program: _GroupedProgram, time_limit: float):
        self.program = program
        self.time_limit = time_limit
        self.deadline = time.perf_counter() + time_limit
        self.nodes = 0
        self.root_bound: Optional[float] = None

    def tick(self):
        self.nodes += 1
        if time.perf_counter() > self.deadline:
            raise self.timeout()

    def timeout(self) -> SolverTimeoutError:
        return SolverTimeoutError(f"no proven optimum within {self.time_limit:g} s ({self.nodes} nodes explored)")

    def remaining(self) -> float:
        return max(self.deadline - time.perf_counter(), 1e-3)


def _integral(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    rounded = np.rint(values)
    return rounded, np.abs(values - rounded) > INTEGRALITY_TOL


def _branch(bounds, k: int, value: float) -> List[np.ndarray]:
    down, up = bounds.copy(), bounds.copy()
    down[k, 1] = math.floor(value)
    up[k, 0] = math.ceil(value)
    # popped last-in first-out: the up branch is explored first
    return [down, up]


def _initial_incumbent(program: _GroupedProgram):
    instance = program.instance
    candidates = []

    greedy = np.zeros(program.nx, dtype=np.int64)
    costs = instance.cost_units
    for g in range(len(program.members)):
        ks = np.flatnonzero(program.pair_group == g)
        k = ks[np.argmin(program.pair_units[ks].astype(float) * costs[program.pair_type[ks]])]
        greedy[k] = program.sizes[g]
    candidates.append((*program.evaluate(greedy), greedy))

    for j in range(instance.n_gpu_types):
        ks = np.flatnonzero(program.pair_type == j)
        if ks.size != len(program.members):
            continue
        single = np.zeros(program.nx, dtype=np.int64)
        single[ks] = program.sizes[program.pair_group[ks]]
        candidates.append((*program.evaluate(single), single))

    return min(candidates, key=lambda c: (c[0], c[1]))


def _count_vectors(search: _Search, cap: int) -> List[Tuple[int, Tuple[int, ...]]]:
    """
    Every integer count vector costing at most `cap` units whose LP relaxation admits a
    packing, cheapest first (ties in lexicographic order).

    Counts are fixed one GPU type at a time. With a prefix fixed, the feasible values of the
    next count form an interval whose ends are two LP solves.
    """
    program = search.program
    nx = program.nx
    cost_units = program.instance.cost_units
    m = len(cost_units)
    most = program.bounds[nx:, 1].astype(np.int64)
    found = []

    def span(prefix: Tuple[int, ...], spent: int) -> Optional[Tuple[int, int]]:
        d = len(prefix)
        bounds = program.bounds.copy()
        bounds[nx : nx + d, 0] = prefix
        bounds[nx : nx + d, 1] = prefix
        unit = np.zeros_like(program.c)
        unit[nx + d] = 1.0

        search.tick()
        low = program.solve_lp(bounds, cost_cap=cap, objective=unit)
        if low is None:
            return None
        lo = max(0, math.ceil(low[0] - INTEGRALITY_TOL))
        hi = min(int(most[d]), (cap - spent) // int(cost_units[d]))
        # the last count only has to cover what is left, so any value above lo works
        if d < m - 1:
            search.tick()
            high = program.solve_lp(bounds, cost_cap=cap, objective=-unit)
            if high is not None:
                hi = min(hi, math.floor(-high[0] + INTEGRALITY_TOL))
        return lo, hi

    def descend(prefix: Tuple[int, ...], spent: int):
        d = len(prefix)
        bracket = span(prefix, spent)
        if bracket is None:
            return
        for v in range(bracket[0], bracket[1] + 1):
            counts = prefix + (v,)
            total = spent + v * int(cost_units[d])
            if d == m - 1:
                found.append((total, counts))
            else:
                descend(counts, total)

    descend((), 0)
    return sorted(found)


def _branch_packing(search: _Search, counts: Sequence[int]) -> Optional[np.ndarray]:
    """Integral x under fixed instance counts by LP branch and bound, or None."""
    program = search.program
    nx = program.nx
    bounds = program.bounds.copy()
    bounds[nx:, 0] = counts
    bounds[nx:, 1] = counts
    capacity = np.asarray(counts, dtype=np.int64) * NANO
    stack = [bounds]
    feasibility = np.zeros_like(program.c)

    while stack:
        search.tick()
        bounds = stack.pop()
        solved = program.solve_lp(bounds, objective=feasibility)
        if solved is None:
            continue
        z = solved[1]
        x_round, x_frac = _integral(z[:nx])
        if x_frac.any():
            distance = np.minimum(z[:nx] - np.floor(z[:nx]), np.ceil(z[:nx]) - z[:nx])
            k = int(np.argmax(np.where(x_frac, distance, -1.0)))
            stack.extend(_branch(bounds, k, z[k]))
            continue
        x = x_round.astype(np.int64)
        over = np.flatnonzero(program.column_units(x) > capacity)
        if not over.size:
            return x
        stack.extend(program.split_on_overload(bounds, x, int(over[0])))

    return None


def _packing_for_counts(search: _Search, counts: Sequence[int]) -> Optional[np.ndarray]:
    """Integral x that fits under fixed instance counts, or None."""
    program = search.program
    nx = program.nx
    capacity = np.asarray(counts, dtype=float) + CAPACITY_TOL

    search.tick()
    res = milp(
        np.zeros(nx),
        integrality=np.ones(nx),
        bounds=Bounds(np.zeros(nx), program.bounds[:nx, 1]),
        constraints=[
            LinearConstraint(program.a_eq[:, :nx], program.b_eq, program.b_eq),
            LinearConstraint(program.a_ub[:, :nx], -np.inf, capacity),
        ],
        options={"presolve": True, "time_limit": search.remaining()},
    )
    if res.status == 2:
        return None
    if res.status == 1:
        raise search.timeout()
    if res.status == 0 and res.x is not None:
        x = np.rint(res.x).astype(np.int64)
        if program.fits(x, counts):
            return x
    # MILP tolerances can hide an overload of a few units
    logging.info(f"Re-checking counts {tuple(counts)} by exact branching")
    return _branch_packing(search, counts)


def _cheapest_packing(search: _Search, incumbent):
    """
    Walks count vectors in (cost, lexicographic) order from the LP bound upwards and
    returns the first one that admits an integral packing. The cost window doubles until
    it reaches the incumbent, which is returned when nothing cheaper packs.
    """
    program = search.program
    best_cost, best_counts, _ = incumbent
    step = int(program.instance.cost_units.min())
    start = max(0, math.ceil(search.root_bound * NANO - program.slack))
    cap = min(start + step, best_cost)
    checked = set()

    while True:
        for cost, counts in _count_vectors(search, cap):
            if counts in checked:
                continue
            checked.add(counts)
            if (cost, counts) >= (best_cost, best_counts):
                return incumbent
            x = _packing_for_counts(search, counts)
            if x is not None:
                return cost, counts, x
        if cap >= best_cost:
            return incumbent
        step *= 2
        cap = min(cap + step, best_cost)


def solve_exact(instance: IlpInstance, time_limit: float = 60.0) -> Allocation:
    """
    >>> solve_exact(instance: IlpInstance, time_limit: float = 60.0) -> Allocation

    Minimum-cost allocation, proven optimal. Instance count vectors are walked in cost
    order, each pruned by LP relaxations (HiGHS through `scipy.optimize.linprog`), and the
    first one whose slices pack integrally (`scipy.optimize.milp`, re-checked exactly) is
    the optimum. Among optimal allocations the lexicographically smallest count vector (in
    GPU type order) is returned.

    Parameters
    ----------
    instance : IlpInstance
        The packing instance.
    time_limit : float, optional
        Wall-clock budget in seconds. Defaults to `60.0`.

    Returns
    -------
    * `Allocation` :
        The optimal allocation. `lower_bound` holds the root relaxation value and `nodes`
        the number of LP and MILP solves.

    Raises
    ------
    * `GloballyInfeasibleError` :
        If some slice has no feasible GPU type.
    * `SolverTimeoutError` :
        If optimality is not proven within `time_limit`. No partial answer is returned.

    Examples
    --------
    >>> instance = IlpInstance.from_arrays([[0.1, 0.1]], [1.0, 2.0])
    >>> solve_exact(instance).counts
    (1, 0)
    """
    if not time_limit > 0:
        raise ValueError("time_limit must be positive")
    if instance.n_slices == 0:
        return _empty_allocation(instance)
    instance.check_feasible()

    program = _GroupedProgram(instance)
    search = _Search(program, time_limit)

    search.tick()
    root = program.solve_lp(program.bounds)
    if root is None:
        raise RuntimeError("LP relaxation is infeasible for a feasible instance")
    search.root_bound = root[0]

    cost, counts, x = _cheapest_packing(search, _initial_incumbent(program))

    lower_bound = min(search.root_bound, cost / NANO)
    logging.info(
        f"Optimal cost {cost / NANO:.4f} $/hr proven after {search.nodes} solves "
        f"(root bound {lower_bound:.4f})"
    )
    return _allocation(instance, counts, program.assign(x), cost, lower_bound, search.nodes)


def savings(candidate_cost: float, baseline_cost: float) -> float:
    """
    >>> savings(candidate_cost: float, baseline_cost: float) -> float

    Percent saved by the candidate relative to the baseline.

    Raises
    ------
    * `ValueError` :
        If `baseline_cost` is not positive.

    Examples
    --------
    >>> round(savings(1.71, 7.516), 2)
    77.25
    """
    if not baseline_cost > 0:
        raise ValueError(f"baseline cost must be positive, got {baseline_cost}")
    return 100.0 * (baseline_cost - candidate_cost) / baseline_cost
