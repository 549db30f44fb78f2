import heapq
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from gpumix.allocator import Allocation
from gpumix.file_utils.general_utils import PathLike
from gpumix.file_utils.spreadsheet_utils import print_dataframe
from gpumix.file_utils.text_utils import string_to_file
from gpumix.profiles import (
    DEFAULT_MODEL,
    ModelParams,
    ThroughputProfile,
    base_step_time,
    request_step_cost,
)
from gpumix.workload import Bucket, BucketGrid, RequestRecord, WorkloadHistogram, bucket_index

# events that share a timestamp: completions free capacity before admissions and arrivals
_COMPLETE, _ADMIT, _ARRIVE = 0, 1, 2
_EVENT_NAMES = {_COMPLETE: "complete", _ADMIT: "admit", _ARRIVE: "arrive"}

# virtual-clock slack when matching a completion event to finished requests
_CLOCK_TOL = 1e-9


@dataclass(frozen=True)
class SimConfig:
    """
    One simulation run. Requests come either from `workload` (bucket by rate share, size
    uniform within the bucket) or from `trace`; arrivals are Poisson at `rate` req/s unless a
    trace with arrival times is replayed with `rate=None`.
    """

    allocation: Union[Allocation, Mapping[str, int]]
    profiles: Sequence[ThroughputProfile]
    workload: Optional[WorkloadHistogram] = None
    trace: Optional[Sequence[RequestRecord]] = None
    rate: Optional[float] = None
    n_requests: int = 2000
    seed: int = 0
    slo_tpot_ms: Optional[float] = None
    model: ModelParams = DEFAULT_MODEL

    def __post_init__(self):
        if not self.profiles:
            raise ValueError("at least one profile is required")
        grid = self.profiles[0].grid
        if any(p.grid != grid for p in self.profiles):
            raise ValueError("all profiles must share one grid")
        if (self.workload is None) == (self.trace is None):
            raise ValueError("give exactly one of workload or trace")
        if self.workload is not None:
            if self.workload.grid != grid:
                raise ValueError("workload and profiles use different grids")
            if self.workload.total_rate <= 0:
                raise ValueError("cannot sample requests from an empty workload")
        if self.trace is not None and len(self.trace) == 0:
            raise ValueError("trace is empty")
        if self.rate is not None and not self.rate > 0:
            raise ValueError("rate must be positive")
        if self.rate is None and not self._replays_arrivals():
            raise ValueError("rate is required unless every trace record has an arrival time")
        if int(self.n_requests) != self.n_requests or self.n_requests < 1:
            raise ValueError("n_requests must be a positive integer")
        if self.slo_tpot_ms is not None and not self.slo_tpot_ms > 0:
            raise ValueError("slo_tpot_ms must be positive")
        self.instance_counts()

    def _replays_arrivals(self) -> bool:
        return self.trace is not None and all(r.arrival_time is not None for r in self.trace)

    @property
    def grid(self) -> BucketGrid:
        return self.profiles[0].grid

    @property
    def slo(self) -> float:
        return self.profiles[0].slo_tpot_ms if self.slo_tpot_ms is None else self.slo_tpot_ms

    def instance_counts(self) -> List[int]:
        """Instances to provision, aligned with `profiles`."""
        names = [p.gpu.name for p in self.profiles]
        if isinstance(self.allocation, Allocation):
            if list(self.allocation.gpu_names) != names:
                raise ValueError(
                    f"allocation types {list(self.allocation.gpu_names)} do not match profiles {names}"
                )
            return list(self.allocation.counts)
        unknown = set(self.allocation) - set(names)
        if unknown:
            raise ValueError(f"allocation names GPU types without a profile: {sorted(unknown)}")
        counts = [int(self.allocation.get(name, 0)) for name in names]
        if any(c < 0 for c in counts):
            raise ValueError("instance counts must be non-negative")
        return counts


class LbState:
    """Per input bucket: sum and count of the output lengths seen so far."""

    def __init__(self, grid: BucketGrid):
        self.grid = grid
        self.totals = [0] * len(grid.input_edges)
        self.counts = [0] * len(grid.input_edges)

    def observe(self, input_tokens: int, output_tokens: int) -> None:
        a, _ = bucket_index(self.grid, input_tokens, output_tokens)
        self.totals[a] += int(output_tokens)
        self.counts[a] += 1

    def mean_output(self, input_bucket: int) -> Optional[Fraction]:
        if self.counts[input_bucket] == 0:
            return None
        return Fraction(self.totals[input_bucket], self.counts[input_bucket])

    def cold_start_output(self) -> float:
        """Midpoint of the median output bucket (lower median for an even count)."""
        return self.grid.representative((0, (len(self.grid.output_edges) - 1) // 2))[1]


def estimate_bucket(lb: LbState, input_tokens: int) -> Bucket:
    """
    >>> estimate_bucket(lb: LbState, input_tokens: int) -> Tuple[int, int]

    The bucket a new request is routed as: its input bucket and the output bucket of the
    running mean output length seen for that input bucket (or the cold-start estimate).

    Raises
    ------
    * `ValueError` :
        If `input_tokens` is larger than the grid.

    Examples
    --------
    >>> lb = LbState(BucketGrid())
    >>> lb.observe(50, 100); lb.observe(50, 300)
    >>> estimate_bucket(lb, 60)
    (1, 2)
    """
    grid = lb.grid
    a, _ = bucket_index(grid, input_tokens, 1)
    estimate = lb.mean_output(a)
    if estimate is None:
        estimate = lb.cold_start_output()
    return bucket_index(grid, input_tokens, estimate)


class GpuInstanceState:
    """
    One provisioned GPU. In-flight requests all advance one token per decode step; the step
    time is the GPU's base time plus the per-request cost of every request in the batch.
    `clock` counts decode steps since start, so a request admitted at clock v finishes at v + o.
    """

    def __init__(self, index: int, profile: ThroughputProfile, model: ModelParams):
        self.index = index
        self.profile = profile
        self.gpu = profile.gpu
        self.model = model
        self.base = base_step_time(self.gpu, model)
        self.load = 0.0
        self.clock = 0.0
        self.updated = 0.0
        self.version = 0
        self._finish: List[Tuple[float, int]] = []
        self._cost: Dict[int, float] = {}

    @property
    def n(self) -> int:
        return len(self._cost)

    @property
    def step_time(self) -> float:
        return self.base + self.load

    def advance(self, now: float) -> None:
        if self._cost:
            self.clock += (now - self.updated) / self.step_time
        self.updated = now

    def admit(self, request: int, output_tokens: int, cost: float) -> None:
        heapq.heappush(self._finish, (self.clock + output_tokens, request))
        self._cost[request] = cost
        self.load += cost

    def pop_finished(self, due: bool = False) -> List[int]:
        """Removes finished requests. `due` marks a completion event: the head request is finished."""
        if due and self._finish:
            self.clock = max(self.clock, self._finish[0][0])
        done = []
        while self._finish and self._finish[0][0] <= self.clock + _CLOCK_TOL:
            _, request = heapq.heappop(self._finish)
            self.load -= self._cost.pop(request)
            done.append(request)
        if not self._cost:
            self.load = 0.0
        return done

    def next_completion(self, now: float) -> Optional[float]:
        if not self._finish:
            return None
        return now + max(self._finish[0][0] - self.clock, 0.0) * self.step_time


def routing_weights(bucket: Bucket, instances: Sequence[GpuInstanceState]) -> np.ndarray:
    """Selection probability per instance: its MaxTput for the bucket over the fleet's total (zeros if none)."""
    tput = np.array([inst.profile.lookup(bucket) for inst in instances], dtype=float)
    total = tput.sum()
    return tput / total if total > 0 else tput


def route(
    bucket: Bucket, instances: Sequence[GpuInstanceState], rng: np.random.Generator
) -> Optional[int]:
    """
    >>> route(bucket: Tuple[int, int], instances: Sequence[GpuInstanceState], rng: np.random.Generator) -> Optional[int]

    Weighted random choice of an instance, weights proportional to MaxTput of the instance's
    GPU type for the bucket. Returns None when no instance can serve the bucket. Draws
    exactly one number from `rng` either way.
    """
    cumulative = np.cumsum(routing_weights(bucket, instances))
    u = rng.random()
    if cumulative.size == 0 or cumulative[-1] <= 0:
        return None
    return int(min(np.searchsorted(cumulative, u * cumulative[-1], side="right"), len(instances) - 1))


@dataclass(frozen=True, eq=False)
class SimResult:
    """Per-request outcome of a run, in arrival order. Dropped requests have instance -1 and NaN latencies."""

    slo_tpot_ms: float
    arrival_s: np.ndarray
    input_tokens: np.ndarray
    output_tokens: np.ndarray
    instance: np.ndarray
    gpu: Tuple[str, ...]
    tpot_ms: np.ndarray
    ttft_ms: np.ndarray

    @property
    def n_requests(self) -> int:
        return int(self.arrival_s.size)

    @property
    def completed(self) -> np.ndarray:
        return self.instance >= 0

    @property
    def n_completed(self) -> int:
        return int(self.completed.sum())

    @property
    def n_dropped(self) -> int:
        return self.n_requests - self.n_completed

    @property
    def samples(self) -> np.ndarray:
        return self.tpot_ms[self.completed]

    @property
    def attainment(self) -> float:
        return slo_attainment(self)

    def cdf(self) -> Tuple[np.ndarray, np.ndarray]:
        """Sorted TPOT samples (ms) and the cumulative fraction of completed requests at each."""
        x = np.sort(self.samples)
        return x, np.arange(1, x.size + 1) / max(x.size, 1)

    def percentile(self, q: float, metric: str = "tpot") -> float:
        values = (self.tpot_ms if metric == "tpot" else self.ttft_ms)[self.completed]
        return float(np.percentile(values, q)) if values.size else float("nan")

    def summary(self) -> dict:
        return {
            "requests": self.n_requests,
            "completed": self.n_completed,
            "dropped": self.n_dropped,
            "slo_tpot_ms": self.slo_tpot_ms,
            "attainment": round(self.attainment, 4),
            "tpot_p50_ms": self.percentile(50),
            "tpot_p99_ms": self.percentile(99),
            "ttft_p50_ms": self.percentile(50, "ttft"),
            "ttft_p99_ms": self.percentile(99, "ttft"),
        }

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "arrival": self.arrival_s,
                "input_tokens": self.input_tokens,
                "output_tokens": self.output_tokens,
                "instance": self.instance,
                "gpu": [self.gpu[k] if k >= 0 else "" for k in self.instance],
                "tpot_ms": self.tpot_ms,
                "ttft_ms": self.ttft_ms,
            }
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, SimResult):
            return NotImplemented
        return (
            self.slo_tpot_ms == other.slo_tpot_ms
            and self.gpu == other.gpu
            and all(
                np.array_equal(getattr(self, f), getattr(other, f), equal_nan=True)
                for f in ("arrival_s", "input_tokens", "output_tokens", "instance", "tpot_ms", "ttft_ms")
            )
        )


def slo_attainment(result: SimResult, slo_tpot_ms: Optional[float] = None) -> float:
    """
    >>> slo_attainment(result: SimResult, slo_tpot_ms: Optional[float] = None) -> float

    Fraction of requests whose average TPOT met the SLO (the run's SLO by default).
    Dropped requests count as misses.

    Raises
    ------
    * `ValueError` :
        If the result holds no requests.
    """
    if result.n_requests == 0:
        raise ValueError("cannot compute attainment of an empty result")
    slo = result.slo_tpot_ms if slo_tpot_ms is None else slo_tpot_ms
    return int(np.count_nonzero(result.samples <= slo)) / result.n_requests


def _request_stream(config: SimConfig, size_rng, arrival_rng) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = int(config.n_requests)
    grid = config.grid

    if config.trace is not None:
        records = list(config.trace)
        if config.rate is None:
            records = sorted(records, key=lambda r: r.arrival_time)[:n]
            arrivals = np.array([r.arrival_time for r in records], dtype=float)
        else:
            records = [records[k % len(records)] for k in range(n)]
            arrivals = None
        inputs = np.array([r.input_tokens for r in records], dtype=np.int64)
        outputs = np.array([r.output_tokens for r in records], dtype=np.int64)
        for i, o in zip(inputs, outputs):
            bucket_index(grid, int(i), int(o))
    else:
        shares = config.workload.shares.reshape(-1)
        cumulative = np.cumsum(shares)
        picks = np.searchsorted(cumulative, size_rng.random(n) * cumulative[-1], side="right")
        picks = np.minimum(picks, shares.size - 1)
        rows, cols = np.divmod(picks, grid.shape[1])
        in_edges = np.array((0,) + grid.input_edges)
        out_edges = np.array((0,) + grid.output_edges)
        inputs = size_rng.integers(in_edges[rows] + 1, in_edges[rows + 1] + 1)
        outputs = size_rng.integers(out_edges[cols] + 1, out_edges[cols + 1] + 1)
        arrivals = None

    if arrivals is None:
        # scaling unit-rate gaps keeps the same random numbers across rates
        arrivals = np.cumsum(arrival_rng.exponential(1.0, inputs.size)) / config.rate
    return arrivals, inputs, outputs


@dataclass(frozen=True)
class SimEvent:
    """Counters right after one event was handled. `in_batch` counts requests decoding on some GPU."""

    time: float
    kind: str
    arrived: int
    prefilling: int
    in_batch: int
    completed: int
    dropped: int

    @property
    def in_flight(self) -> int:
        return self.prefilling + self.in_batch


def run(config: SimConfig, on_event: Optional[Callable[[SimEvent], None]] = None) -> SimResult:
    """
    >>> run(config: SimConfig, on_event: Optional[Callable[[SimEvent], None]] = None) -> SimResult

    Serves a request stream on the provisioned fleet. Each request is routed by the load
    balancer, waits its time to first token (the step time with it in the batch, stretched by
    its prefill length), then decodes its output tokens one per step. Average TPOT is
    (completion - first token) / output tokens.

    Randomness comes from one seed split into independent streams for arrivals, request sizes
    and routing, so equal seeds give equal results and runs at different rates share sizes.

    `on_event`, when given, is called with a `SimEvent` after every handled event.

    Examples
    --------
    >>> result = run(SimConfig(allocation, profiles, workload=hist, rate=4.0, n_requests=2000, seed=1))
    >>> result.attainment >= 0.99
    True
    """
    grid = config.grid
    model = config.model
    arrival_seq, size_seq, route_seq = np.random.SeedSequence(config.seed).spawn(3)
    arrival_rng = np.random.default_rng(arrival_seq)
    size_rng = np.random.default_rng(size_seq)
    route_rng = np.random.default_rng(route_seq)

    arrivals, inputs, outputs = _request_stream(config, size_rng, arrival_rng)
    n = inputs.size

    instances: List[GpuInstanceState] = []
    for profile, count in zip(config.profiles, config.instance_counts()):
        for _ in range(count):
            instances.append(GpuInstanceState(len(instances), profile, model))
    gpu_of_instance = tuple(inst.gpu.name for inst in instances)

    lb = LbState(grid)
    placed = np.full(n, -1, dtype=np.int64)
    admitted = np.full(n, np.nan)
    tpot = np.full(n, np.nan)
    ttft = np.full(n, np.nan)
    true_bucket = [bucket_index(grid, int(i), int(o)) for i, o in zip(inputs, outputs)]

    events: List[tuple] = []
    seq = 0
    for r in range(n):
        events.append((float(arrivals[r]), _ARRIVE, seq, r, 0))
        seq += 1
    heapq.heapify(events)

    def schedule_completion(inst: GpuInstanceState, now: float):
        nonlocal seq
        inst.version += 1
        when = inst.next_completion(now)
        if when is not None:
            heapq.heappush(events, (when, _COMPLETE, seq, inst.index, inst.version))
            seq += 1

    completed = dropped = arrived = prefilling = 0
    while events:
        now, kind, _, target, version = heapq.heappop(events)

        if kind == _ARRIVE:
            r = target
            arrived += 1
            k = route(estimate_bucket(lb, int(inputs[r])), instances, route_rng)
            if k is None:
                dropped += 1
            else:
                inst = instances[k]
                placed[r] = k
                i_rep, o_rep = grid.representative(true_bucket[r])
                cost = request_step_cost(inst.gpu, model, i_rep, o_rep)
                prefill = 1.0 + inputs[r] / model.prefill_tokens_per_step
                first_token = (inst.step_time + cost) * prefill
                ttft[r] = first_token * 1000.0
                heapq.heappush(events, (now + first_token, _ADMIT, seq, r, 0))
                seq += 1
                prefilling += 1

        elif kind == _ADMIT:
            r = target
            inst = instances[placed[r]]
            inst.advance(now)
            i_rep, o_rep = grid.representative(true_bucket[r])
            inst.admit(r, int(outputs[r]), request_step_cost(inst.gpu, model, i_rep, o_rep))
            admitted[r] = now
            prefilling -= 1
            schedule_completion(inst, now)

        else:
            inst = instances[target]
            if version != inst.version:
                continue
            inst.advance(now)
            for r in inst.pop_finished(due=True):
                tpot[r] = (now - admitted[r]) / outputs[r] * 1000.0
                lb.observe(int(inputs[r]), int(outputs[r]))
                completed += 1
            schedule_completion(inst, now)

        if on_event is not None:
            in_batch = sum(inst.n for inst in instances)
            on_event(SimEvent(now, _EVENT_NAMES[kind], arrived, prefilling, in_batch, completed, dropped))

    if dropped:
        logging.warning(f"{dropped} of {n} requests had no GPU able to serve them and were dropped")
    if completed + dropped != n:
        raise RuntimeError(f"simulation lost requests: {completed} completed + {dropped} dropped != {n}")

    return SimResult(
        slo_tpot_ms=float(config.slo),
        arrival_s=arrivals,
        input_tokens=inputs,
        output_tokens=outputs,
        instance=placed,
        gpu=gpu_of_instance,
        tpot_ms=tpot,
        ttft_ms=ttft,
    )


def export_samples_csv(result: SimResult, path: PathLike) -> str:
    """Writes one row per request (arrival, sizes, instance, GPU, TPOT, TTFT)."""
    return string_to_file(print_dataframe(result.to_frame(), fmt="csv"), str(path))


def export_cdf_csv(result: SimResult, path: PathLike) -> str:
    """Writes the TPOT CDF as (tpot_ms, cumulative_fraction) pairs."""
    x, frac = result.cdf()
    df = pd.DataFrame({"tpot_ms": x, "cumulative_fraction": frac})
    return string_to_file(print_dataframe(df, fmt="csv"), str(path))
