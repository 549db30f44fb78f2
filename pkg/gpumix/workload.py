import logging
import os
from bisect import bisect_left
from dataclasses import dataclass
from numbers import Real
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from gpumix.file_utils.general_utils import PathLike, read_json, write_json
from gpumix.file_utils.spreadsheet_utils import file_to_dataframe

Bucket = Tuple[int, int]

DEFAULT_INPUT_EDGES = (25, 100, 250, 500, 1000, 2000, 4000, 8000, 16000, 32000)
DEFAULT_OUTPUT_EDGES = (25, 100, 250, 500, 1000, 2000)

PRESET_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data", "presets")
PRESETS = ("short", "long", "mixed-80-20")


class RecordOutOfGridError(ValueError):
    """A request is larger than the largest bucket of the grid."""

    def __init__(self, index: int, input_tokens: int, output_tokens: int, grid: "BucketGrid"):
        self.index = index
        super().__init__(
            f"record {index} ({input_tokens} in, {output_tokens} out) exceeds the grid maxima "
            f"({grid.max_input} in, {grid.max_output} out)"
        )


@dataclass(frozen=True)
class RequestRecord:
    """One request of a trace. `arrival_time` is only used when a trace is replayed."""

    input_tokens: int
    output_tokens: int
    arrival_time: Optional[float] = None

    def __post_init__(self):
        if int(self.input_tokens) != self.input_tokens or self.input_tokens < 1:
            raise ValueError(f"input_tokens must be a positive integer, got {self.input_tokens}")
        if int(self.output_tokens) != self.output_tokens or self.output_tokens < 1:
            raise ValueError(f"output_tokens must be a positive integer, got {self.output_tokens}")
        if self.arrival_time is not None and not self.arrival_time >= 0:
            raise ValueError(f"arrival_time must be non-negative, got {self.arrival_time}")
        object.__setattr__(self, "input_tokens", int(self.input_tokens))
        object.__setattr__(self, "output_tokens", int(self.output_tokens))


def _edge_index(edges: Sequence[int], value) -> int:
    # upper edge inclusive: value == edges[k] lands in bucket k
    return bisect_left(edges, value)


def _check_edges(name: str, edges: Sequence[int]) -> Tuple[int, ...]:
    edges = tuple(int(e) for e in edges)
    if not edges:
        raise ValueError(f"{name} must not be empty")
    if edges[0] < 1:
        raise ValueError(f"{name} must be positive")
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError(f"{name} must be strictly increasing")
    return edges


@dataclass(frozen=True)
class BucketGrid:
    """
    Request-size grid. Each edge is the inclusive upper bound of one bucket; the lower bound
    of a bucket is the previous edge (exclusive) or 0 for the first bucket.
    """

    input_edges: Tuple[int, ...] = DEFAULT_INPUT_EDGES
    output_edges: Tuple[int, ...] = DEFAULT_OUTPUT_EDGES

    def __post_init__(self):
        object.__setattr__(self, "input_edges", _check_edges("input_edges", self.input_edges))
        object.__setattr__(self, "output_edges", _check_edges("output_edges", self.output_edges))

    @property
    def shape(self) -> Tuple[int, int]:
        return len(self.input_edges), len(self.output_edges)

    @property
    def n_buckets(self) -> int:
        return len(self.input_edges) * len(self.output_edges)

    @property
    def max_input(self) -> int:
        return self.input_edges[-1]

    @property
    def max_output(self) -> int:
        return self.output_edges[-1]

    def input_range(self, k: int) -> Tuple[int, int]:
        """(exclusive lower, inclusive upper) token bounds of input bucket `k`."""
        return (0 if k == 0 else self.input_edges[k - 1]), self.input_edges[k]

    def output_range(self, k: int) -> Tuple[int, int]:
        """(exclusive lower, inclusive upper) token bounds of output bucket `k`."""
        return (0 if k == 0 else self.output_edges[k - 1]), self.output_edges[k]

    def representative(self, bucket: Bucket) -> Tuple[float, float]:
        """
        >>> BucketGrid.representative(bucket: Tuple[int, int]) -> Tuple[float, float]

        Midpoint (input tokens, output tokens) of a bucket, used for every throughput lookup.

        Examples
        --------
        >>> BucketGrid().representative((0, 1))
        (12.5, 62.5)
        """
        a, b = bucket
        lo_i, hi_i = self.input_range(a)
        lo_o, hi_o = self.output_range(b)
        return (lo_i + hi_i) / 2.0, (lo_o + hi_o) / 2.0

    def buckets(self) -> Iterator[Bucket]:
        """Buckets in row-major order."""
        for a in range(len(self.input_edges)):
            for b in range(len(self.output_edges)):
                yield a, b

    def to_dict(self) -> dict:
        return {"input_edges": list(self.input_edges), "output_edges": list(self.output_edges)}

    @classmethod
    def from_dict(cls, doc: dict) -> "BucketGrid":
        try:
            return cls(tuple(doc["input_edges"]), tuple(doc["output_edges"]))
        except KeyError as e:
            raise ValueError(f"grid is missing {e.args[0]!r}") from e


DEFAULT_GRID = BucketGrid()


def _readonly(values, shape=None) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"expected a {shape[0]}x{shape[1]} matrix, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class WorkloadHistogram:
    """Request rates (req/s) over a bucket grid, indexed `[input_bucket, output_bucket]`."""

    grid: BucketGrid
    rates: np.ndarray

    def __post_init__(self):
        rates = _readonly(self.rates, self.grid.shape)
        if not np.all(np.isfinite(rates)) or np.any(rates < 0):
            raise ValueError("bucket rates must be finite and non-negative")
        object.__setattr__(self, "rates", rates)

    @property
    def total_rate(self) -> float:
        return float(self.rates.sum())

    @property
    def shares(self) -> np.ndarray:
        """Rate fractions per bucket (all zeros for an empty histogram)."""
        total = self.total_rate
        return self.rates / total if total > 0 else np.zeros_like(self.rates)

    def nonempty_buckets(self) -> List[Bucket]:
        return [bucket for bucket in self.grid.buckets() if self.rates[bucket] > 0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, WorkloadHistogram):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.rates, other.rates)


@dataclass(frozen=True)
class Slice:
    """An indivisible share of one bucket's rate. `part` numbers the slices of a bucket."""

    bucket: Bucket
    rate: float
    part: int = 0


def bucket_index(grid: BucketGrid, input_tokens, output_tokens) -> Bucket:
    """
    >>> bucket_index(grid: BucketGrid, input_tokens, output_tokens) -> Tuple[int, int]

    Locates the bucket of a request size. Values on an edge belong to the bucket whose upper
    edge they equal.

    Raises
    ------
    * `ValueError` :
        If either size is larger than the grid maximum.

    Examples
    --------
    >>> bucket_index(BucketGrid(), 25, 26)
    (0, 1)
    """
    a = _edge_index(grid.input_edges, input_tokens)
    b = _edge_index(grid.output_edges, output_tokens)
    if a >= len(grid.input_edges) or b >= len(grid.output_edges):
        raise ValueError(f"request ({input_tokens}, {output_tokens}) is outside the grid")
    return a, b


def build_histogram(
    records: Sequence[RequestRecord], grid: BucketGrid, total_rate: float
) -> WorkloadHistogram:
    """
    >>> build_histogram(records: Sequence[RequestRecord], grid: BucketGrid, total_rate: float) -> WorkloadHistogram

    Buckets a trace and scales the bucket shares to `total_rate` req/s.

    Parameters
    ----------
    records : Sequence[RequestRecord]
        The requests of a trace.
    grid : BucketGrid
        The bucket grid.
    total_rate : float
        Aggregate request rate of the workload in req/s.

    Returns
    -------
    * `WorkloadHistogram` :
        Rate of each bucket = (fraction of records in the bucket) x `total_rate`.

    Raises
    ------
    * `ValueError` :
        If `records` is empty or `total_rate` is not positive.
    * `RecordOutOfGridError` :
        If a record is larger than the grid maxima. The error carries the record's index.

    Examples
    --------
    >>> records = [RequestRecord(80, 200), RequestRecord(90, 210)]
    >>> build_histogram(records, BucketGrid(), 2.0).rates[1, 2]
    2.0
    """
    if not total_rate > 0:
        raise ValueError("total_rate must be positive")
    if len(records) == 0:
        raise ValueError("cannot build a histogram from an empty trace")

    inputs = np.array([r.input_tokens for r in records])
    outputs = np.array([r.output_tokens for r in records])
    rows = np.searchsorted(grid.input_edges, inputs, side="left")
    cols = np.searchsorted(grid.output_edges, outputs, side="left")

    outside = np.flatnonzero((rows >= len(grid.input_edges)) | (cols >= len(grid.output_edges)))
    if outside.size:
        k = int(outside[0])
        raise RecordOutOfGridError(k, records[k].input_tokens, records[k].output_tokens, grid)

    counts = np.zeros(grid.shape, dtype=np.int64)
    np.add.at(counts, (rows, cols), 1)

    return WorkloadHistogram(grid, counts / len(records) * total_rate)


def slice_workload(hist: WorkloadHistogram, slice_factor: int = 8) -> List[Slice]:
    """
    >>> slice_workload(hist: WorkloadHistogram, slice_factor: int = 8) -> List[Slice]

    Splits every non-empty bucket into `slice_factor` equal slices, row-major by bucket and
    then by slice number. Empty buckets produce no slices.

    Raises
    ------
    * `ValueError` :
        If `slice_factor` is not a positive integer.

    Examples
    --------
    >>> rates = np.zeros((10, 6)); rates[0, 0] = 4.0
    >>> [s.rate for s in slice_workload(WorkloadHistogram(BucketGrid(), rates), 8)][:2]
    [0.5, 0.5]
    """
    if isinstance(slice_factor, bool) or int(slice_factor) != slice_factor or slice_factor < 1:
        raise ValueError(f"slice_factor must be a positive integer, got {slice_factor}")
    slice_factor = int(slice_factor)

    slices = []
    for bucket in hist.nonempty_buckets():
        rate = float(hist.rates[bucket]) / slice_factor
        slices.extend(Slice(bucket, rate, part) for part in range(slice_factor))

    total = hist.total_rate
    if slices and total > 0:
        drift = abs(sum(s.rate for s in slices) - total) / total
        if drift > 1e-9:
            logging.warning(f"Slices drift from the histogram total by {drift:.3e} (relative)")

    return slices


def scale_rate(hist: WorkloadHistogram, factor: float) -> WorkloadHistogram:
    """
    >>> scale_rate(hist: WorkloadHistogram, factor: float) -> WorkloadHistogram

    Multiplies every bucket rate by `factor`, e.g. 1.1 for 10% over-provisioning.

    Raises
    ------
    * `ValueError` :
        If `factor` is not positive.
    """
    if not isinstance(factor, Real) or not factor > 0:
        raise ValueError(f"scale factor must be positive, got {factor}")
    if factor == 1:
        return hist
    return WorkloadHistogram(hist.grid, hist.rates * float(factor))


def mix_histograms(
    a: WorkloadHistogram,
    b: WorkloadHistogram,
    weight_a: float,
    total_rate: Optional[float] = None,
) -> WorkloadHistogram:
    """
    >>> mix_histograms(a: WorkloadHistogram, b: WorkloadHistogram, weight_a: float, total_rate: Optional[float] = None) -> WorkloadHistogram

    Blends the bucket shares of two workloads: `weight_a` x shares(a) + (1 - `weight_a`) x shares(b),
    rescaled to `total_rate` (defaults to the same blend of the two total rates).

    Raises
    ------
    * `ValueError` :
        If the grids differ, `weight_a` is outside [0, 1], or a histogram with positive
        weight is empty.

    Examples
    --------
    >>> mixed = mix_histograms(load_preset("short"), load_preset("long"), 0.8, total_rate=4.0)
    >>> round(mixed.total_rate, 12)
    4.0
    """
    if a.grid != b.grid:
        raise ValueError("cannot mix histograms defined over different grids")
    if not 0.0 <= weight_a <= 1.0:
        raise ValueError(f"weight_a must be within [0, 1], got {weight_a}")
    if (weight_a > 0 and a.total_rate == 0) or (weight_a < 1 and b.total_rate == 0):
        raise ValueError("cannot take a share of an empty histogram")

    if total_rate is None:
        total_rate = weight_a * a.total_rate + (1.0 - weight_a) * b.total_rate
    if not total_rate > 0:
        raise ValueError("total_rate must be positive")

    shares = weight_a * a.shares + (1.0 - weight_a) * b.shares
    return WorkloadHistogram(a.grid, shares / shares.sum() * total_rate)


def save_histogram(hist: WorkloadHistogram, path: PathLike) -> str:
    """Writes a histogram as JSON (grid edges plus the rate matrix)."""
    doc = {"grid": hist.grid.to_dict(), "rates": hist.rates.tolist()}
    return write_json(doc, path, kind="histogram")


def load_histogram(path: PathLike, total_rate: Optional[float] = None) -> WorkloadHistogram:
    """
    >>> load_histogram(path: PathLike, total_rate: Optional[float] = None) -> WorkloadHistogram

    Reads a histogram written by `save_histogram`. When `total_rate` is given the shape is
    kept and the rates are rescaled to it (an empty histogram is returned unchanged).

    Raises
    ------
    * `ValueError` :
        If the file is not a histogram document or its matrix does not match its grid.
    """
    doc = read_json(path, kind="histogram")
    try:
        hist = WorkloadHistogram(BucketGrid.from_dict(doc["grid"]), doc["rates"])
    except KeyError as e:
        raise ValueError(f"{os.fspath(path)}: histogram is missing {e.args[0]!r}") from e

    if total_rate is not None:
        if hist.total_rate == 0:
            logging.warning(f"{os.fspath(path)} holds no demand; total_rate {total_rate} ignored")
            return hist
        hist = scale_rate(hist, total_rate / hist.total_rate)
    return hist


def load_preset(name: str, total_rate: float = 1.0) -> WorkloadHistogram:
    """
    >>> load_preset(name: str, total_rate: float = 1.0) -> WorkloadHistogram

    Loads a packaged workload shape: `short` (chat-like, short contexts), `long`
    (document-like, long inputs) or `mixed-80-20` (80% short, 20% long).

    Raises
    ------
    * `ValueError` :
        If the preset name is unknown.
    """
    if name == "mixed-80-20":
        return mix_histograms(load_preset("short"), load_preset("long"), 0.8, total_rate)
    if name not in PRESETS:
        raise ValueError(f"Unknown workload preset {name!r}; choose from {', '.join(PRESETS)}")
    return load_histogram(os.path.join(PRESET_DIR, f"{name}.json"), total_rate)


def records_from_dataframe(df: pd.DataFrame) -> List[RequestRecord]:
    """Converts trace rows (`input_tokens`, `output_tokens`, optional `arrival_time`) to records."""
    df = df.rename(columns=lambda c: str(c).strip().lower())
    missing = [c for c in ("input_tokens", "output_tokens") if c not in df.columns]
    if missing:
        raise ValueError(f"trace is missing column(s): {', '.join(missing)}")

    has_arrival = "arrival_time" in df.columns
    records = []
    for k, row in enumerate(df.itertuples(index=False)):
        arrival = getattr(row, "arrival_time") if has_arrival else None
        if arrival is not None and pd.isna(arrival):
            arrival = None
        try:
            records.append(
                RequestRecord(
                    row.input_tokens,
                    row.output_tokens,
                    None if arrival is None else float(arrival),
                )
            )
        except (TypeError, ValueError) as e:
            raise ValueError(f"trace row {k}: {e}") from e
    return records


def read_trace(path: PathLike) -> List[RequestRecord]:
    """
    >>> read_trace(path: PathLike) -> List[RequestRecord]

    Reads a request trace from a CSV or Excel file with the header
    `input_tokens,output_tokens[,arrival_time]`.

    Raises
    ------
    * `pd.errors.ParserError` :
        If the file is neither CSV nor Excel.
    * `ValueError` :
        If a column is missing or a row holds an invalid size.
    """
    records = records_from_dataframe(file_to_dataframe(path))
    logging.info(f"Read {len(records)} requests from {os.fspath(path)}")
    return records
