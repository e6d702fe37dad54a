"""Gradient noise model for drifting clients.

Three independent sources add onto the true local gradient:

- client drift delta_i, drawn once for the client's lifetime,
- time drift xi_{t,i}, drawn per (client, round) and shared by every local
  step of that round,
- SGD noise nu_{t,i,k}, fresh per local step.

Every draw is isotropic Gaussian with per-coordinate variance var/dim so that
the expected squared norm equals the configured variance. A variance of zero
yields the zero vector exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from . import rng as streams
from .errors import ConfigError
from .objectives import Objective, gradient


@dataclass(frozen=True)
class DriftConfig:
    """Second moments of the three noise sources, plus the dimension."""

    dim: int
    client_var: float = 0.0
    time_var: float = 0.0
    sgd_var: float = 0.0

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        for name in ("client_var", "time_var", "sgd_var"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")


def sample_drift(var: float, dim: int, rng: np.random.Generator) -> np.ndarray:
    """One drift vector with E||v||^2 = var."""
    if var < 0:
        raise ConfigError(f"variance must be >= 0, got {var}")
    # Scaling by sqrt(var/dim) keeps var == 0 exactly zero while still
    # consuming the draw, so stream positions do not depend on the variance.
    return rng.standard_normal(dim) * np.sqrt(var / dim)


@dataclass
class ClientDriftState:
    """Per-client noise state.

    `key` is the lineage of this client incarnation: (client_id,) for
    stateful clients, (round, slot) for stateless ones. The fixed client
    drift is drawn at construction; round and step noise are re-derived on
    demand from the same lineage, so replaying any (round, step) gives
    bit-identical vectors regardless of execution order.
    """

    master_seed: int
    key: Tuple[int, ...]
    cfg: DriftConfig
    delta: np.ndarray = field(init=False)

    def __post_init__(self):
        gen = streams.derive_rng(self.master_seed, streams.TAG_CLIENT_DRIFT, *self.key)
        self.delta = sample_drift(self.cfg.client_var, self.cfg.dim, gen)

    def time_drift(self, round_idx: int) -> np.ndarray:
        gen = streams.derive_rng(
            self.master_seed, streams.TAG_TIME_DRIFT, *self.key, round_idx
        )
        return sample_drift(self.cfg.time_var, self.cfg.dim, gen)

    def step_noise_stream(self, round_idx: int) -> np.random.Generator:
        """Generator whose k-th block of `dim` normals is step k's noise."""
        return streams.derive_rng(
            self.master_seed, streams.TAG_STEP_NOISE, *self.key, round_idx
        )

    def step_noise(self, round_idx: int, step: int) -> np.ndarray:
        # Replays the round's stream up to the requested block. O(step) per
        # call; the engine consumes the stream sequentially instead.
        gen = self.step_noise_stream(round_idx)
        out = sample_drift(self.cfg.sgd_var, self.cfg.dim, gen)
        for _ in range(step):
            out = sample_drift(self.cfg.sgd_var, self.cfg.dim, gen)
        return out


def noisy_gradient(
    obj: Objective,
    w: np.ndarray,
    state: ClientDriftState,
    round_idx: int,
    step: int,
) -> np.ndarray:
    """Local stochastic gradient: true gradient plus all three drift terms."""
    return (
        gradient(obj, w)
        + state.delta
        + state.time_drift(round_idx)
        + state.step_noise(round_idx, step)
    )


def empirical_second_moment(draws: Sequence[np.ndarray]) -> float:
    """Mean squared norm over a batch of drift vectors."""
    arr = np.asarray(draws, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ValueError(f"expected a non-empty (n, dim) batch, got shape {arr.shape}")
    return float(np.mean(np.sum(arr * arr, axis=1)))
