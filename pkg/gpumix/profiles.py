import logging
import math
import os
import re
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from gpumix.file_utils.general_utils import PathLike, read_json, write_json
from gpumix.workload import Bucket, BucketGrid, Slice

REGISTRY_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data", "gpus.json")


class ProfileSchemaError(ValueError):
    """A profile or registry file does not match the expected layout."""


@dataclass(frozen=True)
class GpuType:
    """
    One rentable GPU type: on-demand price ($/hr) plus the hardware figures the synthetic
    profiler needs. `max_request_tokens` caps input + output tokens per request.
    """

    name: str
    hourly_cost: float
    mem_gb: float
    mem_bw_gbs: float
    fp16_tflops: float
    max_request_tokens: Optional[int] = None

    def __post_init__(self):
        if not self.name:
            raise ValueError("GPU name must not be empty")
        for attr in ("hourly_cost", "mem_gb", "mem_bw_gbs", "fp16_tflops"):
            if not getattr(self, attr) > 0:
                raise ValueError(f"{self.name}: {attr} must be positive, got {getattr(self, attr)}")
        if self.max_request_tokens is not None and not self.max_request_tokens > 0:
            raise ValueError(f"{self.name}: max_request_tokens must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "GpuType":
        try:
            return cls(
                name=str(doc["name"]),
                hourly_cost=float(doc["hourly_cost"]),
                mem_gb=float(doc["mem_gb"]),
                mem_bw_gbs=float(doc["mem_bw_gbs"]),
                fp16_tflops=float(doc["fp16_tflops"]),
                max_request_tokens=(
                    None if doc.get("max_request_tokens") is None else int(doc["max_request_tokens"])
                ),
            )
        except KeyError as e:
            raise ProfileSchemaError(f"GPU entry is missing {e.args[0]!r}") from e
        except (TypeError, ValueError) as e:
            raise ProfileSchemaError(f"invalid GPU entry: {e}") from e


@dataclass(frozen=True)
class ModelParams:
    """
    Constants of the synthetic decode-step model

        t(n) = step_overhead_s + (weight_bytes + n * kv_bytes_per_token * (i + o / 2)) / mem_bw
               + n * 2 * n_params * i * prefill_interference / fp16_flops

    The defaults are invented, tuned so the packaged GPU registry shows the expected cost-efficiency
    crossovers between cheap and expensive GPUs; they describe no measured hardware.
    """

    name: str
    n_params: float
    weight_bytes: float
    kv_bytes_per_token: float
    step_overhead_s: float = 0.004
    prefill_interference: float = 0.01
    max_batch: int = 256
    prefill_tokens_per_step: int = 512


MODEL_PRESETS: Dict[str, ModelParams] = {
    # 32 layers x 4096 hidden x 2 (K and V) x 2 bytes
    "llama2-7b": ModelParams("llama2-7b", 6.74e9, 2 * 6.74e9, 524288),
    # 80 layers x 8 KV heads x 128 dims x 2 x 2 bytes
    "llama2-70b": ModelParams("llama2-70b", 69e9, 2 * 69e9, 327680),
}
DEFAULT_MODEL = MODEL_PRESETS["llama2-7b"]


def get_model(name: str) -> ModelParams:
    try:
        return MODEL_PRESETS[name]
    except KeyError:
        raise ValueError(
            f"Unknown model {name!r}; choose from {', '.join(sorted(MODEL_PRESETS))}"
        ) from None


def _readonly(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ThroughputProfile:
    """
    MaxTput (req/s) of one GPU type per bucket at one TPOT SLO. `NaN` marks a bucket the GPU
    cannot serve. `note` records why a whole profile is unusable (e.g. the model does not fit).
    """

    gpu: GpuType
    slo_tpot_ms: float
    grid: BucketGrid
    max_tput: np.ndarray
    note: Optional[str] = None

    def __post_init__(self):
        tput = _readonly(self.max_tput)
        if tput.shape != self.grid.shape:
            raise ProfileSchemaError(
                f"{self.gpu.name}: max_tput has shape {tput.shape}, grid is {self.grid.shape}"
            )
        bad = np.argwhere(~np.isnan(tput) & ~(tput > 0))
        if bad.size:
            a, b = (int(v) for v in bad[0])
            raise ProfileSchemaError(
                f"{self.gpu.name}: bucket ({a}, {b}) has non-positive throughput {tput[a, b]}"
            )
        if not self.slo_tpot_ms > 0:
            raise ProfileSchemaError(f"{self.gpu.name}: slo_tpot_ms must be positive")
        object.__setattr__(self, "max_tput", tput)

    @property
    def feasible(self) -> np.ndarray:
        return ~np.isnan(self.max_tput)

    def lookup(self, bucket: Bucket) -> float:
        """MaxTput for a bucket, 0.0 when infeasible."""
        value = self.max_tput[bucket]
        return 0.0 if np.isnan(value) else float(value)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ThroughputProfile):
            return NotImplemented
        return (
            self.gpu == other.gpu
            and self.slo_tpot_ms == other.slo_tpot_ms
            and self.grid == other.grid
            and np.array_equal(self.max_tput, other.max_tput, equal_nan=True)
        )


@dataclass(frozen=True, eq=False)
class LoadMatrix:
    """Fractional load of every slice (rows) on one instance of every GPU type (columns); NaN = forbidden."""

    entries: np.ndarray
    slices: Tuple[Slice, ...]
    gpus: Tuple[GpuType, ...]

    def __post_init__(self):
        entries = _readonly(self.entries).reshape(len(self.slices), len(self.gpus))
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "slices", tuple(self.slices))
        object.__setattr__(self, "gpus", tuple(self.gpus))

    @property
    def feasible(self) -> np.ndarray:
        return ~np.isnan(self.entries)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.entries.shape


def normalize_price(
    reference_price_a: float, reference_price_b: float, target_price_b: float
) -> float:
    """
    >>> normalize_price(reference_price_a: float, reference_price_b: float, target_price_b: float) -> float

    Estimates a missing price from a provider that lists a comparable pair: the ratio of the
    reference prices applied to the target provider's price for GPU b.

    Raises
    ------
    * `ValueError` :
        If any price is not positive.

    Examples
    --------
    >>> round(normalize_price(4.69, 2.29, 3.67), 3)
    7.516
    """
    for price in (reference_price_a, reference_price_b, target_price_b):
        if not price > 0:
            raise ValueError(f"prices must be positive, got {price}")
    return reference_price_a / reference_price_b * target_price_b


def composite_gpu(gpu: GpuType, count: int) -> GpuType:
    """
    >>> composite_gpu(gpu: GpuType, count: int) -> GpuType

    A tensor-parallel group of `count` GPUs rented together, e.g. `H100x2`. Price, memory,
    bandwidth and compute are multiplied.
    """
    if int(count) != count or count < 1:
        raise ValueError(f"count must be a positive integer, got {count}")
    if count == 1:
        return gpu
    return GpuType(
        name=f"{gpu.name}x{count}",
        hourly_cost=gpu.hourly_cost * count,
        mem_gb=gpu.mem_gb * count,
        mem_bw_gbs=gpu.mem_bw_gbs * count,
        fp16_tflops=gpu.fp16_tflops * count,
        max_request_tokens=None if gpu.max_request_tokens is None else gpu.max_request_tokens * count,
    )


def load_gpu_registry(path: Optional[PathLike] = None) -> List[GpuType]:
    """
    >>> load_gpu_registry(path: Optional[PathLike] = None) -> List[GpuType]

    Reads a GPU registry file. The packaged registry (L4, A10G, A100, H100) is used by default.

    Raises
    ------
    * `ProfileSchemaError` :
        If the file is malformed or lists a name twice.
    """
    path = REGISTRY_PATH if path is None else path
    try:
        doc = read_json(path, kind="gpu_registry")
        entries = doc["gpus"]
    except KeyError as e:
        raise ProfileSchemaError(f"{os.fspath(path)}: registry is missing 'gpus'") from e
    except ValueError as e:
        raise ProfileSchemaError(str(e)) from e

    gpus = [GpuType.from_dict(entry) for entry in entries]
    names = [g.name for g in gpus]
    if len(set(names)) != len(names):
        raise ProfileSchemaError(f"{os.fspath(path)}: duplicate GPU names in registry")
    return gpus


def select_gpus(registry: Sequence[GpuType], names: Optional[Sequence[str]] = None) -> List[GpuType]:
    """
    >>> select_gpus(registry: Sequence[GpuType], names: Optional[Sequence[str]] = None) -> List[GpuType]

    Picks GPU types by name, in the order given. A `xN` suffix (e.g. `H100x2`) builds a
    composite of N registry GPUs. All registry entries are returned when `names` is None.

    Raises
    ------
    * `ValueError` :
        If a name is not in the registry.
    """
    if names is None:
        return list(registry)

    by_name = {g.name: g for g in registry}
    selected = []
    for name in names:
        name = name.strip()
        if name in by_name:
            selected.append(by_name[name])
            continue
        match = re.fullmatch(r"(.+)x(\d+)", name)
        if match and match.group(1) in by_name:
            selected.append(composite_gpu(by_name[match.group(1)], int(match.group(2))))
            continue
        raise ValueError(f"Unknown GPU type {name!r}; registry has {', '.join(by_name)}")
    return selected


def base_step_time(gpu: GpuType, model: ModelParams) -> float:
    """Per-step time that does not depend on the batch: fixed overhead plus one pass over the weights."""
    return model.step_overhead_s + model.weight_bytes / (gpu.mem_bw_gbs * 1e9)


def request_step_cost(gpu: GpuType, model: ModelParams, input_tokens: float, output_tokens: float) -> float:
    """Seconds one in-flight request adds to every decode step (KV streaming plus amortized prefill)."""
    kv = model.kv_bytes_per_token * (input_tokens + output_tokens / 2.0) / (gpu.mem_bw_gbs * 1e9)
    prefill = 2.0 * model.n_params * input_tokens * model.prefill_interference / (gpu.fp16_tflops * 1e12)
    return kv + prefill


def step_time(
    gpu: GpuType, model: ModelParams, n: int, input_tokens: float, output_tokens: float
) -> float:
    """
    >>> step_time(gpu: GpuType, model: ModelParams, n: int, input_tokens: float, output_tokens: float) -> float

    Decode-step time in seconds for a batch of `n` requests of the given size.
    """
    return base_step_time(gpu, model) + n * request_step_cost(gpu, model, input_tokens, output_tokens)


def max_batch_size(gpu: GpuType, model: ModelParams, input_tokens: float, output_tokens: float) -> int:
    """How many requests of this size fit in memory next to the weights (capped by `model.max_batch`)."""
    free = gpu.mem_gb * 1e9 - model.weight_bytes
    if free <= 0:
        return 0
    return min(int(math.floor(free / ((input_tokens + output_tokens) * model.kv_bytes_per_token))), model.max_batch)


def _bucket_max_tput(
    gpu: GpuType, model: ModelParams, input_tokens: float, output_tokens: float, slo_s: float
) -> float:
    if gpu.max_request_tokens is not None and input_tokens + output_tokens > gpu.max_request_tokens:
        return math.nan
    n_max = max_batch_size(gpu, model, input_tokens, output_tokens)
    if n_max < 1 or step_time(gpu, model, 1, input_tokens, output_tokens) > slo_s:
        return math.nan

    # t(n) increases with n: largest n with t(n) <= SLO
    lo, hi = 1, n_max
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if step_time(gpu, model, mid, input_tokens, output_tokens) <= slo_s:
            lo = mid
        else:
            hi = mid - 1

    return lo / (output_tokens * step_time(gpu, model, lo, input_tokens, output_tokens))


def synth_profile(
    gpu: GpuType,
    model: ModelParams = DEFAULT_MODEL,
    grid: Optional[BucketGrid] = None,
    slo_tpot_ms: float = 120.0,
) -> ThroughputProfile:
    """
    >>> synth_profile(gpu: GpuType, model: ModelParams = DEFAULT_MODEL, grid: Optional[BucketGrid] = None, slo_tpot_ms: float = 120.0) -> ThroughputProfile

    Generates a throughput profile from the closed-form step-time model instead of a benchmark.
    For each bucket (at its midpoint size) the largest batch whose step time meets the SLO
    gives MaxTput = n / (o x t(n)).

    Parameters
    ----------
    gpu : GpuType
        The GPU type to profile.
    model : ModelParams, optional
        Model constants. Defaults to the `llama2-7b` preset.
    grid : BucketGrid, optional
        Bucket grid. Defaults to the 10 x 6 default grid.
    slo_tpot_ms : float, optional
        TPOT objective in milliseconds. Defaults to `120.0`.

    Returns
    -------
    * `ThroughputProfile` :
        Buckets that exceed the GPU's request cap, do not fit in memory or miss the SLO at
        batch size 1 are infeasible (NaN). If the weights alone do not fit, every bucket is
        infeasible and `note` says so.

    Examples
    --------
    >>> l4 = select_gpus(load_gpu_registry(), ["L4"])[0]
    >>> profile = synth_profile(l4, slo_tpot_ms=120.0)
    >>> bool(profile.feasible[0, 0]), bool(profile.feasible[9, 0])
    (True, False)
    """
    grid = BucketGrid() if grid is None else grid
    if not slo_tpot_ms > 0:
        raise ValueError("slo_tpot_ms must be positive")

    if model.weight_bytes >= gpu.mem_gb * 1e9:
        note = f"{model.name} weights do not fit in {gpu.name} memory"
        logging.warning(f"{note}; every bucket is infeasible")
        return ThroughputProfile(gpu, slo_tpot_ms, grid, np.full(grid.shape, np.nan), note=note)

    slo_s = slo_tpot_ms / 1000.0
    tput = np.full(grid.shape, np.nan)
    for bucket in grid.buckets():
        i, o = grid.representative(bucket)
        tput[bucket] = _bucket_max_tput(gpu, model, i, o, slo_s)

    return ThroughputProfile(gpu, slo_tpot_ms, grid, tput)


def profile_to_dict(profile: ThroughputProfile) -> dict:
    doc = {
        "gpu": profile.gpu.to_dict(),
        "slo_tpot_ms": profile.slo_tpot_ms,
        "grid": profile.grid.to_dict(),
        "max_tput": [[None if np.isnan(v) else float(v) for v in row] for row in profile.max_tput],
    }
    if profile.note is not None:
        doc["note"] = profile.note
    return doc


def export_profile(profile: ThroughputProfile, path: PathLike) -> str:
    """Writes a profile as JSON; infeasible buckets are `null`."""
    return write_json(profile_to_dict(profile), path, kind="throughput_profile")


def profile_from_dict(doc: dict, source: str = "profile") -> ThroughputProfile:
    """Validates and decodes a profile document. Raises `ProfileSchemaError`."""
    for key in ("gpu", "slo_tpot_ms", "grid", "max_tput"):
        if key not in doc:
            raise ProfileSchemaError(f"{source}: missing field {key!r}")

    gpu = GpuType.from_dict(doc["gpu"])
    try:
        grid = BucketGrid.from_dict(doc["grid"])
    except ValueError as e:
        raise ProfileSchemaError(f"{source}: {e}") from e

    raw = doc["max_tput"]
    if not isinstance(raw, list):
        raise ProfileSchemaError(f"{source}: max_tput must be an array")
    rows, cols = grid.shape
    # nested rows or one flat row-major array
    flat = [v for row in raw for v in row] if raw and isinstance(raw[0], list) else list(raw)
    if len(flat) != rows * cols or (raw and isinstance(raw[0], list) and len(raw) != rows):
        raise ProfileSchemaError(
            f"{source}: max_tput does not match the declared {rows}x{cols} grid"
        )

    values = np.full(rows * cols, np.nan)
    for k, v in enumerate(flat):
        if v is None:
            continue
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
            raise ProfileSchemaError(
                f"{source}: bucket ({k // cols}, {k % cols}) has invalid throughput {v!r}"
            )
        values[k] = float(v)

    try:
        slo = float(doc["slo_tpot_ms"])
    except (TypeError, ValueError) as e:
        raise ProfileSchemaError(f"{source}: slo_tpot_ms must be a number") from e

    return ThroughputProfile(gpu, slo, grid, values.reshape(rows, cols), note=doc.get("note"))


def import_profile(path: PathLike) -> ThroughputProfile:
    """
    >>> import_profile(path: PathLike) -> ThroughputProfile

    Loads an externally measured (or exported) profile.

    Raises
    ------
    * `ProfileSchemaError` :
        If a field is missing, the matrix does not match the grid, or a throughput entry is
        not a positive number. The message names the offending bucket.
    """
    try:
        doc = read_json(path, kind="throughput_profile")
    except ProfileSchemaError:
        raise
    except ValueError as e:
        raise ProfileSchemaError(str(e)) from e
    return profile_from_dict(doc, source=os.fspath(path))


def _check_compatible(profiles: Sequence[ThroughputProfile]) -> None:
    if not profiles:
        raise ValueError("at least one profile is required")
    first = profiles[0]
    for p in profiles[1:]:
        if p.grid != first.grid:
            raise ValueError(f"profile {p.gpu.name} uses a different grid than {first.gpu.name}")
        if p.slo_tpot_ms != first.slo_tpot_ms:
            raise ValueError(
                f"profile {p.gpu.name} is for {p.slo_tpot_ms} ms, {first.gpu.name} for {first.slo_tpot_ms} ms"
            )


def load_matrix(slices: Sequence[Slice], profiles: Sequence[ThroughputProfile]) -> LoadMatrix:
    """
    >>> load_matrix(slices: Sequence[Slice], profiles: Sequence[ThroughputProfile]) -> LoadMatrix

    Load of slice i on one instance of GPU type j: rate_i / MaxTput(j, bucket_i). Pairs whose
    bucket is infeasible on the GPU are NaN. Loads above 1 are kept (an instance count can
    still cover them) but logged, since a larger slice factor gives the packer more room.

    Raises
    ------
    * `ValueError` :
        If the profiles disagree on grid or SLO, or a slice lies outside the grid.

    Examples
    --------
    >>> gpu = load_gpu_registry()[0]
    >>> profile = ThroughputProfile(gpu, 120.0, BucketGrid(), np.full((10, 6), 10.0))
    >>> load_matrix([Slice((0, 0), 1.0)], [profile]).entries[0, 0]
    0.1
    """
    _check_compatible(profiles)
    grid = profiles[0].grid
    rows, cols = grid.shape

    entries = np.empty((len(slices), len(profiles)))
    for i, s in enumerate(slices):
        a, b = s.bucket
        if not (0 <= a < rows and 0 <= b < cols):
            raise ValueError(f"slice {i} references bucket {s.bucket} outside the grid")
        for j, p in enumerate(profiles):
            tput = p.max_tput[a, b]
            entries[i, j] = np.nan if np.isnan(tput) else s.rate / tput

    over = np.nan_to_num(entries, nan=0.0) > 1.0
    if over.any():
        logging.warning(
            f"{int(over.sum())} slice/GPU loads exceed one instance; "
            f"consider a larger slice factor"
        )

    return LoadMatrix(entries, tuple(slices), tuple(p.gpu for p in profiles))


def tokens_per_dollar(profile: ThroughputProfile, bucket: Bucket) -> float:
    """
    >>> tokens_per_dollar(profile: ThroughputProfile, bucket: Tuple[int, int]) -> float

    Input plus output tokens served per dollar of rental at the bucket's MaxTput:
    MaxTput x (i + o) x 3600 / hourly_cost.

    Raises
    ------
    * `ValueError` :
        If the bucket is infeasible on this GPU.
    """
    tput = profile.max_tput[bucket]
    if np.isnan(tput):
        raise ValueError(f"bucket {bucket} is infeasible on {profile.gpu.name}")
    i, o = profile.grid.representative(bucket)
    return float(tput) * (i + o) * 3600.0 / profile.gpu.hourly_cost


def tokens_per_dollar_matrix(profile: ThroughputProfile) -> np.ndarray:
    """T/$ for every bucket of a profile, NaN where infeasible."""
    matrix = np.full(profile.grid.shape, np.nan)
    for bucket in profile.grid.buckets():
        if profile.feasible[bucket]:
            matrix[bucket] = tokens_per_dollar(profile, bucket)
    return matrix


def best_gpu_map(profiles: Sequence[ThroughputProfile]) -> pd.DataFrame:
    """
    >>> best_gpu_map(profiles: Sequence[ThroughputProfile]) -> pd.DataFrame

    Name of the GPU with the highest T/$ in each bucket ("-" where no GPU is feasible).
    Rows are input ranges, columns output ranges.
    """
    _check_compatible(profiles)
    grid = profiles[0].grid
    stacked = np.stack([tokens_per_dollar_matrix(p) for p in profiles])
    names = np.array([p.gpu.name for p in profiles], dtype=object)

    best = np.full(grid.shape, "-", dtype=object)
    any_feasible = ~np.all(np.isnan(stacked), axis=0)
    best[any_feasible] = names[np.nanargmax(stacked[:, any_feasible], axis=0)]

    index = [f"{lo + 1}-{hi}" for lo, hi in map(grid.input_range, range(grid.shape[0]))]
    columns = [f"{lo + 1}-{hi}" for lo, hi in map(grid.output_range, range(grid.shape[1]))]
    return pd.DataFrame(best, index=index, columns=columns)
