"""Simulator for federated optimization over drifting client objectives.

Builds noisy quadratic and least-squares scenarios, runs FedAvg/FedProx and
a history-mixing continual variant round by round, and ships the experiment
harness (configs, presets, sweeps, progress checks, CSV output) used to
compare them.
"""

from .approximators import (
    ApproxObjective,
    CoreSet,
    HistoryBuffer,
    avg_info_loss,
    cfl_combined_gradient,
    core_set_samples,
    info_loss,
    mcmc_generate,
    perturb_hessian,
    select_core_set_icarl,
    select_core_set_naive,
    taylor_fit,
)
from .config import (
    CflSpec,
    CoreSetSpec,
    DriftSpec,
    ExperimentConfig,
    ExplicitWeights,
    FedAvgSpec,
    FedProxSpec,
    McmcSpec,
    OverlapSpec,
    PartitionSpec,
    TaylorSpec,
    Theorem2Weights,
    UniformWeights,
    algorithm_label,
    replace_fields,
)
from .drift import (
    ClientDriftState,
    DriftConfig,
    empirical_second_moment,
    noisy_gradient,
    sample_drift,
)
from .engine import (
    ClientRoundResult,
    ClientState,
    RoundWeights,
    RunRecord,
    ServerState,
    brute_force_optimal_weights,
    build_experiment,
    compute_round_weights,
    local_gradient,
    round_weights_for,
    run_experiment,
    run_local_update,
    run_round,
)
from .errors import ConfigError, UnboundedObjectiveError
from .harness import (
    DEFAULT_LR_GRID,
    PRESET_NAMES,
    SweepResult,
    SweepRow,
    TheoremConstants,
    TheoremReport,
    emit_csv,
    final_loss,
    load_config,
    lr_sweep,
    preset,
    serialize_config,
    smoothness_metric,
    step_size_bound,
    summary_line,
    theorem1_check,
    theorem_constants,
)
from .objectives import (
    LeastSquaresObjective,
    QuadraticObjective,
    SampleSet,
    build_quadratic,
    canonical_quadratic,
    exact_optimum,
    fit_least_squares,
    gradient,
    hessian,
    loss_metric,
    objective_value,
)
from .partition import (
    LabeledPool,
    PartitionManifest,
    dirichlet_split,
    hierarchical_split,
    make_synthetic_pool,
    overlap_window,
    read_manifest,
    renormalize,
    write_manifest,
)

__all__ = [
    "ApproxObjective",
    "CoreSet",
    "HistoryBuffer",
    "avg_info_loss",
    "cfl_combined_gradient",
    "core_set_samples",
    "info_loss",
    "mcmc_generate",
    "perturb_hessian",
    "select_core_set_icarl",
    "select_core_set_naive",
    "taylor_fit",
    "CflSpec",
    "CoreSetSpec",
    "DriftSpec",
    "ExperimentConfig",
    "ExplicitWeights",
    "FedAvgSpec",
    "FedProxSpec",
    "McmcSpec",
    "OverlapSpec",
    "PartitionSpec",
    "TaylorSpec",
    "Theorem2Weights",
    "UniformWeights",
    "algorithm_label",
    "replace_fields",
    "ClientDriftState",
    "DriftConfig",
    "empirical_second_moment",
    "noisy_gradient",
    "sample_drift",
    "ClientRoundResult",
    "ClientState",
    "RoundWeights",
    "RunRecord",
    "ServerState",
    "brute_force_optimal_weights",
    "build_experiment",
    "compute_round_weights",
    "local_gradient",
    "round_weights_for",
    "run_experiment",
    "run_local_update",
    "run_round",
    "ConfigError",
    "UnboundedObjectiveError",
    "DEFAULT_LR_GRID",
    "PRESET_NAMES",
    "SweepResult",
    "SweepRow",
    "TheoremConstants",
    "TheoremReport",
    "emit_csv",
    "final_loss",
    "load_config",
    "lr_sweep",
    "preset",
    "serialize_config",
    "smoothness_metric",
    "step_size_bound",
    "summary_line",
    "theorem1_check",
    "theorem_constants",
    "LeastSquaresObjective",
    "QuadraticObjective",
    "SampleSet",
    "build_quadratic",
    "canonical_quadratic",
    "exact_optimum",
    "fit_least_squares",
    "gradient",
    "hessian",
    "loss_metric",
    "objective_value",
    "LabeledPool",
    "PartitionManifest",
    "dirichlet_split",
    "hierarchical_split",
    "make_synthetic_pool",
    "overlap_window",
    "read_manifest",
    "renormalize",
    "write_manifest",
]
