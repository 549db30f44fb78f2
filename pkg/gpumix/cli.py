import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Mapping, Optional, Sequence, Union

import pandas as pd

from gpumix.allocator import (
    Allocation,
    BaselineInfeasibleError,
    GloballyInfeasibleError,
    IlpInstance,
    SolverTimeoutError,
    formulate,
    savings,
    solve_exact,
    solve_single_type,
)
from gpumix.file_utils.general_utils import path_to_filetype, read_json
from gpumix.file_utils.spreadsheet_utils import print_dataframe
from gpumix.file_utils.table_utils import print_table, table_to_dataframe
from gpumix.file_utils.text_utils import string_to_file
from gpumix.profiles import (
    LoadMatrix,
    ProfileSchemaError,
    ThroughputProfile,
    best_gpu_map,
    export_profile,
    get_model,
    import_profile,
    load_gpu_registry,
    load_matrix,
    select_gpus,
    synth_profile,
)
from gpumix.simulator import SimConfig, SimResult, export_cdf_csv, export_samples_csv, run
from gpumix.workload import (
    DEFAULT_GRID,
    PRESETS,
    RecordOutOfGridError,
    RequestRecord,
    Slice,
    WorkloadHistogram,
    build_histogram,
    load_histogram,
    load_preset,
    read_trace,
    scale_rate,
    slice_workload,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_SCHEMA = 4
EXIT_TIMEOUT = 5


class ScenarioFileError(ValueError):
    """An input file (trace, histogram, scenario, allocation) could not be used."""


@dataclass
class ScenarioSpec:
    """
    Everything needed to reproduce a plan. `workload` is a preset name, a trace
    (`.csv`/`.xlsx`) or a histogram (`.json`); `profiles` optionally replaces the synthetic
    profiles with imported ones.
    """

    workload: str = "short"
    rate: float = 4.0
    slo_tpot_ms: float = 120.0
    gpus: Optional[List[str]] = None
    registry: Optional[str] = None
    slice_factor: int = 8
    over_provision: float = 1.0
    model: str = "llama2-7b"
    profiles: Optional[List[str]] = None
    time_limit: float = 60.0
    seed: int = 0
    n_requests: int = 2000

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("rate must be positive")
        if not self.slo_tpot_ms > 0:
            raise ValueError("slo_tpot_ms must be positive")
        if int(self.slice_factor) != self.slice_factor or self.slice_factor < 1:
            raise ValueError("slice_factor must be a positive integer")
        if not self.over_provision >= 1.0:
            raise ValueError("over_provision must be at least 1.0")
        if not self.time_limit > 0:
            raise ValueError("time_limit must be positive")
        if int(self.n_requests) != self.n_requests or self.n_requests < 1:
            raise ValueError("n_requests must be a positive integer")
        get_model(self.model)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_file(cls, path: str, **overrides) -> "ScenarioSpec":
        """Reads a scenario JSON file; keyword overrides that are not None win over file values."""
        try:
            doc = read_json(path, kind="scenario")
        except (OSError, ValueError) as e:
            raise ScenarioFileError(str(e)) from e
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known - {"schema_version", "kind"}
        if unknown:
            raise ScenarioFileError(f"{path}: unknown scenario field(s) {sorted(unknown)}")
        values = {k: v for k, v in doc.items() if k in known}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass(frozen=True)
class PreparedScenario:
    spec: ScenarioSpec
    histogram: WorkloadHistogram
    profiles: List[ThroughputProfile]
    slices: List[Slice]
    loads: LoadMatrix
    trace: Optional[List[RequestRecord]] = None

    @property
    def gpu_names(self) -> List[str]:
        return [p.gpu.name for p in self.profiles]

    def instance(self) -> IlpInstance:
        return formulate(self.slices, self.loads)


def resolve_workload(spec: ScenarioSpec, rate: Optional[float] = None):
    """Histogram at `rate` (defaults to the scenario's rate) and the trace, if the workload is one."""
    rate = spec.rate if rate is None else rate
    source = spec.workload
    if source in PRESETS:
        return load_preset(source, rate), None

    file_type = path_to_filetype(source)
    try:
        if file_type == "json":
            return load_histogram(source, total_rate=rate), None
        if file_type in ("csv", "xlsx", "txt"):
            records = read_trace(source)
            return build_histogram(records, DEFAULT_GRID, rate), records
    except RecordOutOfGridError:
        raise
    except (OSError, ValueError, pd.errors.ParserError) as e:
        raise ScenarioFileError(f"{source}: {e}") from e
    raise ValueError(f"workload must be one of {', '.join(PRESETS)} or a .csv/.xlsx/.json file, got {source!r}")


def resolve_profiles(spec: ScenarioSpec, grid=DEFAULT_GRID) -> List[ThroughputProfile]:
    """Imported profiles when the scenario lists files, synthetic ones for the registry GPUs otherwise."""
    if spec.profiles:
        profiles = [import_profile(path) for path in spec.profiles]
        if spec.gpus is not None:
            by_name = {p.gpu.name: p for p in profiles}
            missing = [name for name in spec.gpus if name not in by_name]
            if missing:
                raise ValueError(f"no imported profile for GPU(s) {', '.join(missing)}")
            profiles = [by_name[name] for name in spec.gpus]
        for p in profiles:
            if p.slo_tpot_ms != spec.slo_tpot_ms:
                raise ProfileSchemaError(
                    f"profile for {p.gpu.name} was measured at {p.slo_tpot_ms} ms, "
                    f"scenario asks for {spec.slo_tpot_ms} ms"
                )
            if p.grid != grid:
                raise ProfileSchemaError(f"profile for {p.gpu.name} uses a different bucket grid")
        return profiles

    gpus = select_gpus(load_gpu_registry(spec.registry), spec.gpus)
    model = get_model(spec.model)
    return [synth_profile(gpu, model, grid, spec.slo_tpot_ms) for gpu in gpus]


def prepare(spec: ScenarioSpec, rate: Optional[float] = None) -> PreparedScenario:
    """Histogram (over-provisioned) -> slices -> load matrix for one scenario."""
    histogram, trace = resolve_workload(spec, rate)
    histogram = scale_rate(histogram, spec.over_provision)
    profiles = resolve_profiles(spec, histogram.grid)
    slices = slice_workload(histogram, int(spec.slice_factor))
    return PreparedScenario(spec, histogram, profiles, slices, load_matrix(slices, profiles), trace)


@dataclass
class PlanReport:
    spec: ScenarioSpec
    allocation: Allocation
    slices: List[Slice]
    prices: List[float]
    wall_time_s: float

    def to_dict(self) -> dict:
        return {"scenario": self.spec.to_dict(), "allocation": self.allocation.to_dict(self.slices)}

    def to_text(self) -> str:
        rows = [
            [name, count, count * cost]
            for name, count, cost in zip(self.allocation.gpu_names, self.allocation.counts, self.prices)
        ]
        table = print_table(["gpu", "count", "cost ($/hr)"], rows)
        return "\n".join(
            [
                table,
                f"total cost: {self.allocation.total_cost:.4f} $/hr",
                f"lower bound: {self.allocation.lower_bound:.4f} $/hr",
                f"solver time: {self.wall_time_s:.3f} s",
            ]
        )


def cmd_plan(spec: ScenarioSpec) -> PlanReport:
    """
    >>> cmd_plan(spec: ScenarioSpec) -> PlanReport

    Minimum-cost GPU mix for the scenario.

    Raises
    ------
    * `GloballyInfeasibleError` :
        If a bucket cannot be served by any GPU type.
    * `SolverTimeoutError` :
        If the solver exceeds `spec.time_limit`.
    """
    scenario = prepare(spec)
    instance = scenario.instance()
    started = time.perf_counter()
    allocation = solve_exact(instance, time_limit=spec.time_limit)
    wall = time.perf_counter() - started
    prices = [p.gpu.hourly_cost for p in scenario.profiles]
    return PlanReport(spec, allocation, scenario.slices, prices, wall)


@dataclass
class ComparisonRow:
    label: str
    counts: Optional[Dict[str, int]]
    cost: Optional[float]
    note: str = ""


@dataclass
class ComparisonReport:
    """The mixed allocation next to every single-type baseline, for one rate."""

    rate: float
    gpu_names: List[str]
    rows: List[ComparisonRow]
    wall_time_s: float = 0.0

    @property
    def mixed(self) -> ComparisonRow:
        return self.rows[0]

    @property
    def baselines(self) -> List[ComparisonRow]:
        """Feasible baselines with a positive cost (the ones savings are reported against)."""
        return [row for row in self.rows[1:] if row.cost is not None and row.cost > 0]

    def to_frame(self) -> pd.DataFrame:
        """One row per solver: counts, cost and savings (%) of that row against each feasible baseline."""
        headers = ["rate", "solver"] + list(self.gpu_names) + ["cost"]
        headers += [f"savings_vs_{b.label}" for b in self.baselines] + ["note"]
        rows = []
        for row in self.rows:
            counts = [None if row.counts is None else row.counts.get(n, 0) for n in self.gpu_names]
            saved = [
                None if row.cost is None else round(savings(row.cost, b.cost), 2) for b in self.baselines
            ]
            rows.append([self.rate, row.label] + counts + [row.cost] + saved + [row.note])
        return table_to_dataframe(headers, rows)

    def normalized_frame(self) -> pd.DataFrame:
        """Each row's cost divided by the mixed cost (NaN for infeasible rows or a zero mixed cost)."""
        base = self.mixed.cost
        rows = [
            [
                self.rate,
                row.label,
                None if row.cost is None or not base else row.cost / base,
                row.note,
            ]
            for row in self.rows
        ]
        return table_to_dataframe(["rate", "solver", "normalized_cost", "note"], rows)

    def to_dict(self) -> dict:
        return {
            "rate": self.rate,
            "rows": [asdict(row) for row in self.rows],
            "savings": {
                b.label: round(savings(self.mixed.cost, b.cost), 4) for b in self.baselines
            },
        }


def _compare_prepared(scenario: PreparedScenario, rate: float) -> ComparisonReport:
    spec = scenario.spec
    instance = scenario.instance()
    started = time.perf_counter()
    mixed = solve_exact(instance, time_limit=spec.time_limit)
    rows = [ComparisonRow("mixed", mixed.counts_by_name, mixed.total_cost)]

    for name in instance.gpu_names:
        label = f"{name}-only"
        try:
            baseline = solve_single_type(instance, name)
        except BaselineInfeasibleError as e:
            logging.warning(f"Skipping {label} baseline: {e}")
            rows.append(ComparisonRow(label, None, None, "infeasible"))
            continue
        rows.append(ComparisonRow(label, baseline.counts_by_name, baseline.total_cost))

    return ComparisonReport(rate, list(instance.gpu_names), rows, time.perf_counter() - started)


def cmd_compare(spec: ScenarioSpec) -> ComparisonReport:
    """
    >>> cmd_compare(spec: ScenarioSpec) -> ComparisonReport

    Mixed allocation against each single-GPU-type baseline. Baselines that cannot serve the
    whole workload are kept as rows marked "infeasible".
    """
    return _compare_prepared(prepare(spec), spec.rate)


@dataclass
class SweepEntry:
    rate: float
    report: Optional[ComparisonReport] = None
    error: Optional[str] = None


def cmd_sweep(spec: ScenarioSpec, rates: Sequence[float]) -> List[SweepEntry]:
    """
    >>> cmd_sweep(spec: ScenarioSpec, rates: Sequence[float]) -> List[SweepEntry]

    `cmd_compare` at each rate. A rate that fails (infeasible, timeout) records its error and
    the sweep moves on.

    Raises
    ------
    * `ValueError` :
        If rates are not positive and ascending.
    """
    rates = [float(r) for r in rates]
    if not rates or any(r <= 0 for r in rates) or any(b <= a for a, b in zip(rates, rates[1:])):
        raise ValueError("rates must be positive and strictly ascending")

    entries = []
    for rate in rates:
        logging.info(f"Sweep: solving rate {rate:g} req/s")
        try:
            entries.append(SweepEntry(rate, _compare_prepared(prepare(spec, rate), rate)))
        except (GloballyInfeasibleError, SolverTimeoutError) as e:
            logging.error(f"Sweep: rate {rate:g} failed: {e}")
            entries.append(SweepEntry(rate, error=str(e)))
    return entries


def sweep_frames(entries: Sequence[SweepEntry]):
    """Concatenated cost table and normalized-cost table of a sweep."""
    reports = [e.report for e in entries if e.report is not None]
    if not reports:
        return pd.DataFrame(), pd.DataFrame()
    return (
        pd.concat([r.to_frame() for r in reports], ignore_index=True),
        pd.concat([r.normalized_frame() for r in reports], ignore_index=True),
    )


def load_allocation_counts(path: str) -> Dict[str, int]:
    """Instance counts from a plan written with `--format json`."""
    try:
        doc = read_json(path)
        counts = doc["allocation"]["counts"] if "allocation" in doc else doc["counts"]
        return {str(name): int(count) for name, count in counts.items()}
    except (OSError, KeyError, TypeError, ValueError, AttributeError) as e:
        raise ScenarioFileError(f"{path}: not an allocation file ({e})") from e


def cmd_simulate(
    spec: ScenarioSpec,
    allocation: Optional[Union[Allocation, Mapping[str, int]]] = None,
    seed: Optional[int] = None,
    n_requests: Optional[int] = None,
    cdf_path: Optional[str] = None,
    samples_path: Optional[str] = None,
    replay_arrivals: bool = False,
) -> SimResult:
    """
    >>> cmd_simulate(spec, allocation=None, seed=None, n_requests=None, cdf_path=None, samples_path=None, replay_arrivals=False) -> SimResult

    Simulates the scenario's workload at `spec.rate` (without over-provisioning) on an
    allocation, planning one first when none is given. With `replay_arrivals` a trace
    workload keeps its recorded arrival times instead of Poisson arrivals at `spec.rate`.
    Writes the CDF and per-request samples as CSV when paths are given.

    Raises
    ------
    * `ValueError` :
        If `replay_arrivals` is set but the workload is not a trace.
    * `ScenarioFileError` :
        If a trace replay is requested and some request has no `arrival_time`.
    """
    scenario = prepare(spec)
    if allocation is None:
        allocation = solve_exact(scenario.instance(), time_limit=spec.time_limit)

    histogram, trace = resolve_workload(spec)
    if replay_arrivals:
        if trace is None:
            raise ValueError("--replay-arrivals needs a trace workload (.csv/.xlsx)")
        missing = sum(1 for r in trace if r.arrival_time is None)
        if missing:
            raise ScenarioFileError(f"{spec.workload}: {missing} request(s) have no arrival_time to replay")

    config = SimConfig(
        allocation=allocation,
        profiles=scenario.profiles,
        workload=None if trace is not None else histogram,
        trace=trace,
        rate=None if replay_arrivals else spec.rate,
        n_requests=spec.n_requests if n_requests is None else n_requests,
        seed=spec.seed if seed is None else seed,
        slo_tpot_ms=spec.slo_tpot_ms,
        model=get_model(spec.model),
    )
    result = run(config)

    if cdf_path:
        export_cdf_csv(result, cdf_path)
    if samples_path:
        export_samples_csv(result, samples_path)
    return result


def cmd_profile_gen(spec: ScenarioSpec, out_dir: str) -> List[str]:
    """Writes one synthetic profile JSON per selected GPU type into `out_dir`."""
    paths = []
    for profile in resolve_profiles(spec):
        name = f"{profile.gpu.name}_{spec.model}_{profile.slo_tpot_ms:g}ms.json"
        paths.append(export_profile(profile, os.path.join(out_dir, name)))
    return paths


def cmd_profile_import(paths: Sequence[str]) -> pd.DataFrame:
    """Validates profile files and summarizes them (feasible buckets, MaxTput range)."""
    profiles = [import_profile(path) for path in paths]
    rows = []
    for path, p in zip(paths, profiles):
        feasible = p.max_tput[p.feasible]
        rows.append(
            [
                os.path.basename(path),
                p.gpu.name,
                p.gpu.hourly_cost,
                p.slo_tpot_ms,
                f"{int(p.feasible.sum())}/{p.grid.n_buckets}",
                float(feasible.min()) if feasible.size else None,
                float(feasible.max()) if feasible.size else None,
            ]
        )
    return table_to_dataframe(
        ["file", "gpu", "cost ($/hr)", "slo_ms", "feasible", "min_tput", "max_tput"], rows
    )


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        string_to_file(text, out)
    else:
        print(text)


def _render(frame: pd.DataFrame, fmt: str) -> str:
    return print_dataframe(frame, fmt="json" if fmt == "json" else "table")


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario JSON file; flags override its values")
    common.add_argument("--workload", help=f"preset ({', '.join(PRESETS)}) or .csv/.xlsx trace or .json histogram")
    common.add_argument("--rate", type=float, help="total request rate (req/s)")
    common.add_argument("--slo-ms", dest="slo_tpot_ms", type=float, help="TPOT objective in ms")
    common.add_argument("--gpus", help="comma-separated GPU types, e.g. L4,A10G,A100,H100x2")
    common.add_argument("--registry", help="GPU registry JSON file")
    common.add_argument("--profiles", nargs="+", help="imported profile JSON files")
    common.add_argument("--model", help="model preset for synthetic profiles")
    common.add_argument("--slice-factor", dest="slice_factor", type=int, help="slices per bucket")
    common.add_argument("--over-provision", dest="over_provision", type=float, help="rate factor >= 1")
    common.add_argument("--timeout", dest="time_limit", type=float, help="solver budget in seconds")
    common.add_argument("--seed", type=int, help="simulation seed")
    common.add_argument("--out", help="write the report here instead of stdout")
    common.add_argument("--format", choices=("table", "json"), default="table")
    common.add_argument("--verbose", "-v", action="store_true")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="gpumix", description="Plan and check minimum-cost heterogeneous GPU fleets for LLM serving."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    profile = sub.add_parser("profile", help="generate or import throughput profiles")
    profile_sub = profile.add_subparsers(dest="profile_command", required=True)
    gen = profile_sub.add_parser("gen", parents=[common], help="write synthetic profiles")
    gen.add_argument("--out-dir", default="profiles")
    imp = profile_sub.add_parser("import", parents=[common], help="validate profile files")
    imp.add_argument("files", nargs="+")

    sub.add_parser("plan", parents=[common], help="minimum-cost allocation")
    sub.add_parser("compare", parents=[common], help="allocation vs single-type baselines")
    sweep = sub.add_parser("sweep", parents=[common], help="compare over several rates")
    sweep.add_argument("--rates", required=True, help="comma-separated ascending rates")
    sim = sub.add_parser("simulate", parents=[common], help="simulate SLO attainment")
    sim.add_argument("--allocation", help="plan JSON to simulate (planned on the fly otherwise)")
    sim.add_argument("--n-requests", dest="n_requests", type=int)
    sim.add_argument("--cdf", help="write the TPOT CDF as CSV")
    sim.add_argument("--samples", help="write per-request samples as CSV")
    sim.add_argument(
        "--replay-arrivals",
        dest="replay_arrivals",
        action="store_true",
        help="replay the trace's recorded arrival times instead of Poisson arrivals at --rate",
    )
    return parser


def spec_from_args(args: argparse.Namespace) -> ScenarioSpec:
    overrides = {
        name: getattr(args, name, None)
        for name in (
            "workload",
            "rate",
            "slo_tpot_ms",
            "registry",
            "profiles",
            "model",
            "slice_factor",
            "over_provision",
            "time_limit",
            "seed",
            "n_requests",
        )
    }
    if getattr(args, "gpus", None):
        overrides["gpus"] = [g.strip() for g in args.gpus.split(",") if g.strip()]
    if args.scenario:
        return ScenarioSpec.from_file(args.scenario, **overrides)
    return ScenarioSpec(**{k: v for k, v in overrides.items() if v is not None})


def _dispatch(args: argparse.Namespace) -> str:
    spec = spec_from_args(args)
    fmt = args.format

    if args.command == "profile":
        if args.profile_command == "gen":
            paths = cmd_profile_gen(spec, args.out_dir)
            if fmt == "json":
                return json.dumps({"profiles": paths}, indent=2)
            profiles = [import_profile(p) for p in paths]
            return "\n".join(paths) + "\n\nbest T/$ per bucket:\n" + best_gpu_map(profiles).to_string()
        return _render(cmd_profile_import(args.files), fmt)

    if args.command == "plan":
        report = cmd_plan(spec)
        return json.dumps(report.to_dict(), indent=2) if fmt == "json" else report.to_text()

    if args.command == "compare":
        report = cmd_compare(spec)
        if fmt == "json":
            return json.dumps(report.to_dict(), indent=2)
        return _render(report.to_frame(), fmt) + f"\nsolver time: {report.wall_time_s:.3f} s"

    if args.command == "sweep":
        rates = [float(r) for r in args.rates.split(",")]
        entries = cmd_sweep(spec, rates)
        if fmt == "json":
            return json.dumps(
                [
                    {"rate": e.rate, "error": e.error} if e.report is None else e.report.to_dict()
                    for e in entries
                ],
                indent=2,
            )
        costs, normalized = sweep_frames(entries)
        failed = [f"rate {e.rate:g}: {e.error}" for e in entries if e.report is None]
        parts = [_render(costs, fmt), "", "normalized to the mixed cost:", _render(normalized, fmt)]
        return "\n".join(parts + failed)

    allocation = load_allocation_counts(args.allocation) if args.allocation else None
    result = cmd_simulate(
        spec, allocation, cdf_path=args.cdf, samples_path=args.samples, replay_arrivals=args.replay_arrivals
    )
    summary = result.summary()
    if fmt == "json":
        return json.dumps(summary, indent=2)
    rows = [[k, f"{v:.4f}" if isinstance(v, float) else v] for k, v in summary.items()]
    return print_table(["metric", "value"], rows)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Command-line entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )

    try:
        _emit(_dispatch(args), args.out)
    except GloballyInfeasibleError as e:
        logging.error(str(e))
        return EXIT_INFEASIBLE
    except SolverTimeoutError as e:
        logging.error(str(e))
        return EXIT_TIMEOUT
    except (ProfileSchemaError, RecordOutOfGridError, ScenarioFileError, pd.errors.ParserError) as e:
        logging.error(str(e))
        return EXIT_SCHEMA
    except (ValueError, OSError) as e:
        logging.error(str(e))
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
