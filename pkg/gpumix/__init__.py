# included in __all__: import using "from gpumix import *" or "import gpumix"

from .workload import (
    BucketGrid,
    RequestRecord,
    Slice,
    WorkloadHistogram,
    RecordOutOfGridError,
    bucket_index,
    build_histogram,
    slice_workload,
    scale_rate,
    mix_histograms,
    load_histogram,
    save_histogram,
    load_preset,
    read_trace,
)

from .profiles import (
    GpuType,
    ModelParams,
    ThroughputProfile,
    LoadMatrix,
    ProfileSchemaError,
    MODEL_PRESETS,
    normalize_price,
    composite_gpu,
    load_gpu_registry,
    select_gpus,
    step_time,
    synth_profile,
    export_profile,
    import_profile,
    load_matrix,
    tokens_per_dollar,
    tokens_per_dollar_matrix,
    best_gpu_map,
)

from .allocator import (
    IlpInstance,
    Allocation,
    GloballyInfeasibleError,
    BaselineInfeasibleError,
    InstanceTooLargeError,
    SolverTimeoutError,
    formulate,
    solve_exact,
    solve_single_type,
    brute_force_oracle,
    savings,
)

from .simulator import (
    SimConfig,
    SimResult,
    SimEvent,
    LbState,
    estimate_bucket,
    route,
    run,
    slo_attainment,
    export_samples_csv,
    export_cdf_csv,
)

# not included in __all__: import using "from gpumix.cli import *" or "import gpumix.cli"
from . import cli


__all__ = [
    "BucketGrid",
    "RequestRecord",
    "Slice",
    "WorkloadHistogram",
    "RecordOutOfGridError",
    "bucket_index",
    "build_histogram",
    "slice_workload",
    "scale_rate",
    "mix_histograms",
    "load_histogram",
    "save_histogram",
    "load_preset",
    "read_trace",
    "GpuType",
    "ModelParams",
    "ThroughputProfile",
    "LoadMatrix",
    "ProfileSchemaError",
    "MODEL_PRESETS",
    "normalize_price",
    "composite_gpu",
    "load_gpu_registry",
    "select_gpus",
    "step_time",
    "synth_profile",
    "export_profile",
    "import_profile",
    "load_matrix",
    "tokens_per_dollar",
    "tokens_per_dollar_matrix",
    "best_gpu_map",
    "IlpInstance",
    "Allocation",
    "GloballyInfeasibleError",
    "BaselineInfeasibleError",
    "InstanceTooLargeError",
    "SolverTimeoutError",
    "formulate",
    "solve_exact",
    "solve_single_type",
    "brute_force_oracle",
    "savings",
    "SimConfig",
    "SimResult",
    "SimEvent",
    "LbState",
    "estimate_bucket",
    "route",
    "run",
    "slo_attainment",
    "export_samples_csv",
    "export_cdf_csv",
]
