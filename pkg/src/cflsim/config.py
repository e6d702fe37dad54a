"""Experiment configuration model.

A run is described by one ExperimentConfig. Scenario kinds:

- "quadratic": one random quadratic shared by all clients, heterogeneity
  injected through the drift model, clients keep their identity across rounds.
- "least_squares": per-(client, round) sample subsets from a partitioned
  labeled pool; the global objective is the least-squares fit of the full
  pool.
- "stateless": quadratic drift scenario where every (round, slot) pairing is
  a brand-new client; approximation history lives on the server.

Validation collects every violation before failing so a bad config file is
reported in one pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Optional, Tuple, Union

from .errors import ConfigError

SCENARIOS = ("quadratic", "least_squares", "stateless")

DIVERGENCE_LOSS_LIMIT = 1e12


@dataclass(frozen=True)
class DriftSpec:
    """Second moments of the synthetic gradient noise sources."""

    client_var: float = 0.01
    time_var: float = 0.01
    sgd_var: float = 1e-5


@dataclass(frozen=True)
class TaylorSpec:
    """First-order fit of each round's objective; eps > 0 corrupts the stored
    curvature by a random symmetric matrix of that spectral norm."""

    eps: float = 0.0


@dataclass(frozen=True)
class CoreSetSpec:
    """Retain `size` samples of each round's subset ("naive" uniform or
    "icarl" herding) and replay their least-squares fit."""

    size: int = 50
    method: str = "icarl"


@dataclass(frozen=True)
class McmcSpec:
    """Replay synthetic samples drawn by a noisy-descent chain matched to the
    round's subset, labeled by the subset's own linear fit."""

    count: int = 64
    step_size: float = 0.1
    noise_scale: float = 0.05
    n_steps: int = 50


ApproximatorSpec = Union[TaylorSpec, CoreSetSpec, McmcSpec]


@dataclass(frozen=True)
class Theorem2Weights:
    """Closed-form schedule balancing approximation error r against time
    drift d. r = 0 recovers uniform averaging, r >> d recovers the plain
    current-round update."""

    r: float
    d: float


@dataclass(frozen=True)
class UniformWeights:
    pass


@dataclass(frozen=True)
class ExplicitWeights:
    """Fixed simplex vector; only valid when its length matches the number of
    objectives available in the round it is used."""

    values: Tuple[float, ...]


WeightRule = Union[Theorem2Weights, UniformWeights, ExplicitWeights]


@dataclass(frozen=True)
class FedAvgSpec:
    pass


@dataclass(frozen=True)
class FedProxSpec:
    prox_mu: float = 0.1


@dataclass(frozen=True)
class CflSpec:
    approximator: ApproximatorSpec = field(default_factory=TaylorSpec)
    weights: WeightRule = field(default_factory=UniformWeights)


AlgorithmSpec = Union[FedAvgSpec, FedProxSpec, CflSpec]


@dataclass(frozen=True)
class PartitionSpec:
    """Labeled-pool synthesis plus Dirichlet split parameters."""

    classes: int = 10
    items_per_class: int = 900
    clients: int = 7
    subsets_per_client: int = 30
    alpha: float = 0.5
    beta: float = 0.3
    client_size: Optional[int] = None  # default: (total // clients) floored to a multiple of subsets
    mean_scale: float = 3.0
    target_noise: float = 0.1


@dataclass(frozen=True)
class OverlapSpec:
    """Sliding-window subset construction: round t reads `window` items
    starting at offset (t * step) mod sequence length."""

    window: int
    step: int


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "custom"
    scenario: str = "quadratic"
    seed: int = 0
    dim: int = 10
    rounds: int = 500
    population: int = 7
    clients_per_round: int = 7
    local_steps: int = 5
    eta_l: float = 0.05
    eta_g: float = 0.1
    mu: float = 1.0
    lmax: float = 5.0
    init_scale: float = 3000.0
    drift: DriftSpec = field(default_factory=DriftSpec)
    algorithm: AlgorithmSpec = field(default_factory=FedAvgSpec)
    history_capacity: int = 40
    measure_info_loss: bool = False
    parallel_clients: bool = False
    partition: Optional[PartitionSpec] = None
    overlap: Optional[OverlapSpec] = None

    def validate(self) -> None:
        problems = validate_config(self)
        if problems:
            raise ConfigError(
                "invalid experiment config:\n" + "\n".join(f"- {p}" for p in problems)
            )


def _finite(x: float) -> bool:
    return isinstance(x, (int, float)) and math.isfinite(x)


def validate_config(cfg: ExperimentConfig) -> list:
    """Return every semantic violation in the config (empty list when valid)."""
    problems = []

    def bad(msg: str) -> None:
        problems.append(msg)

    if cfg.scenario not in SCENARIOS:
        bad(f"scenario must be one of {SCENARIOS}, got {cfg.scenario!r}")
    if cfg.dim < 1:
        bad(f"dim must be >= 1, got {cfg.dim}")
    if cfg.rounds < 0:
        bad(f"rounds must be >= 0, got {cfg.rounds}")
    if cfg.population < 1:
        bad(f"population must be >= 1, got {cfg.population}")
    if not 1 <= cfg.clients_per_round <= cfg.population:
        bad(
            "clients_per_round must satisfy 1 <= S <= population, got "
            f"S={cfg.clients_per_round}, population={cfg.population}"
        )
    if cfg.local_steps < 1:
        bad(f"local_steps must be >= 1, got {cfg.local_steps}")
    if not _finite(cfg.eta_l) or cfg.eta_l < 0:
        bad(f"eta_l must be finite and >= 0, got {cfg.eta_l}")
    if not _finite(cfg.eta_g) or cfg.eta_g <= 0:
        bad(f"eta_g must be finite and > 0, got {cfg.eta_g}")
    if not _finite(cfg.mu) or cfg.mu < 0:
        bad(f"mu must be finite and >= 0, got {cfg.mu}")
    if not _finite(cfg.lmax) or cfg.lmax < cfg.mu:
        bad(f"lmax must be finite and >= mu, got mu={cfg.mu}, lmax={cfg.lmax}")
    if not _finite(cfg.init_scale) or cfg.init_scale < 0:
        bad(f"init_scale must be finite and >= 0, got {cfg.init_scale}")
    if cfg.history_capacity < 1:
        bad(f"history_capacity must be >= 1, got {cfg.history_capacity}")
    if cfg.seed < 0:
        bad(f"seed must be >= 0, got {cfg.seed}")

    for name in ("client_var", "time_var", "sgd_var"):
        v = getattr(cfg.drift, name)
        if not _finite(v) or v < 0:
            bad(f"drift.{name} must be finite and >= 0, got {v}")

    algo = cfg.algorithm
    if isinstance(algo, FedProxSpec):
        if not _finite(algo.prox_mu) or algo.prox_mu < 0:
            bad(f"algorithm.prox_mu must be finite and >= 0, got {algo.prox_mu}")
    elif isinstance(algo, CflSpec):
        approx = algo.approximator
        if isinstance(approx, TaylorSpec):
            if not _finite(approx.eps) or approx.eps < 0:
                bad(f"algorithm.eps must be finite and >= 0, got {approx.eps}")
        elif isinstance(approx, CoreSetSpec):
            if approx.size < 1:
                bad(f"core-set size must be >= 1, got {approx.size}")
            if approx.method not in ("naive", "icarl"):
                bad(f"core-set method must be 'naive' or 'icarl', got {approx.method!r}")
            if cfg.scenario == "stateless":
                bad("core-set approximation requires client state; not available in the stateless scenario")
            if cfg.scenario == "quadratic":
                bad("core-set approximation requires sample data; use the least_squares scenario")
        elif isinstance(approx, McmcSpec):
            if approx.count < 1:
                bad(f"mcmc count must be >= 1, got {approx.count}")
            if approx.n_steps < 0:
                bad(f"mcmc n_steps must be >= 0, got {approx.n_steps}")
            if not _finite(approx.step_size) or approx.step_size < 0:
                bad(f"mcmc step_size must be finite and >= 0, got {approx.step_size}")
            if not _finite(approx.noise_scale) or approx.noise_scale < 0:
                bad(f"mcmc noise_scale must be finite and >= 0, got {approx.noise_scale}")
            if cfg.scenario != "least_squares":
                bad("mcmc approximation requires sample data; use the least_squares scenario")
        else:
            bad(f"unknown approximator spec {type(approx).__name__}")
        rule = algo.weights
        if isinstance(rule, Theorem2Weights):
            if not _finite(rule.r) or rule.r < 0:
                bad(f"weights.r must be finite and >= 0, got {rule.r}")
            if not _finite(rule.d) or rule.d < 0:
                bad(f"weights.d must be finite and >= 0, got {rule.d}")
            if rule.r == 0 and rule.d == 0 and cfg.rounds > 1:
                bad("weights.r and weights.d cannot both be zero past the first round")
        elif isinstance(rule, ExplicitWeights):
            vals = rule.values
            if len(vals) < 1 or any(not _finite(v) or v < 0 for v in vals):
                bad("explicit weights must be non-empty and non-negative")
            elif abs(sum(vals) - 1.0) > 1e-8:
                bad(f"explicit weights must sum to 1, got {sum(vals)}")
    elif not isinstance(algo, FedAvgSpec):
        bad(f"unknown algorithm spec {type(algo).__name__}")

    if cfg.scenario == "least_squares":
        if cfg.partition is None:
            bad("least_squares scenario requires a [partition] section")
        else:
            part = cfg.partition
            if part.classes < 1:
                bad(f"partition.classes must be >= 1, got {part.classes}")
            if part.items_per_class < 1:
                bad(f"partition.items_per_class must be >= 1, got {part.items_per_class}")
            if part.clients < 1:
                bad(f"partition.clients must be >= 1, got {part.clients}")
            if part.subsets_per_client < 1:
                bad(f"partition.subsets_per_client must be >= 1, got {part.subsets_per_client}")
            if not _finite(part.alpha) or part.alpha <= 0:
                bad(f"partition.alpha must be finite and > 0, got {part.alpha}")
            if not _finite(part.beta) or part.beta <= 0:
                bad(f"partition.beta must be finite and > 0, got {part.beta}")
            if part.client_size is not None:
                if part.client_size < part.subsets_per_client:
                    bad("partition.client_size smaller than subsets_per_client")
                elif part.client_size % part.subsets_per_client != 0:
                    bad(
                        f"partition.client_size={part.client_size} must be divisible by "
                        f"subsets_per_client={part.subsets_per_client}"
                    )
            if part.clients != cfg.population:
                bad(
                    f"partition.clients={part.clients} must equal population={cfg.population}"
                )
            if cfg.overlap is None and part.subsets_per_client < cfg.rounds:
                bad(
                    f"rounds={cfg.rounds} exceeds partition.subsets_per_client="
                    f"{part.subsets_per_client}"
                )
            if not _finite(part.mean_scale):
                bad("partition.mean_scale must be finite")
            if not _finite(part.target_noise) or part.target_noise < 0:
                bad(f"partition.target_noise must be finite and >= 0, got {part.target_noise}")
    if cfg.overlap is not None:
        if cfg.scenario != "least_squares":
            bad("overlap windows only apply to the least_squares scenario")
        else:
            if cfg.overlap.window < 1:
                bad(f"overlap.window must be >= 1, got {cfg.overlap.window}")
            if cfg.overlap.step < 1:
                bad(f"overlap.step must be >= 1, got {cfg.overlap.step}")
    return problems


def algorithm_label(algo: AlgorithmSpec) -> str:
    """Short stable name used in summaries and sweep tables."""
    if isinstance(algo, FedAvgSpec):
        return "fedavg"
    if isinstance(algo, FedProxSpec):
        return "fedprox"
    if isinstance(algo, CflSpec):
        approx = algo.approximator
        if isinstance(approx, TaylorSpec):
            return "cfl-taylor"
        if isinstance(approx, CoreSetSpec):
            return f"cfl-coreset-{approx.method}"
        return "cfl-mcmc"
    return type(algo).__name__


def replace_fields(cfg, **changes):
    """dataclasses.replace, validating the result when it knows how."""
    import dataclasses

    out = dataclasses.replace(cfg, **changes)
    if hasattr(out, "validate"):
        out.validate()
    return out


def config_field_names() -> Tuple[str, ...]:
    return tuple(f.name for f in fields(ExperimentConfig))
