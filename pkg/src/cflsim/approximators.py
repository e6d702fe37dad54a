"""Past-objective approximation: Taylor fits, core sets, MCMC samples.

Every approximator ultimately yields an ApproxObjective, an affine gradient
model g(w) = g_anchor + H (w - anchor). A first-order Taylor fit of the true
gradient is exact on quadratics; core-set and MCMC approximators fit a
least-squares reduction of retained samples and store its affine form. The
combined update used by the continual algorithm mixes the current gradient
with the stored models under a simplex weight vector.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError
from .objectives import (
    Objective,
    SampleSet,
    canonical_quadratic,
    gradient,
    hessian,
)

DEFAULT_HISTORY_CAPACITY = 40


@dataclass(frozen=True)
class ApproxObjective:
    """Affine gradient model anchored at a reference point."""

    anchor: np.ndarray
    grad_at_anchor: np.ndarray
    hessian_at_anchor: np.ndarray
    origin_round: int = 0

    def __post_init__(self):
        anchor = np.asarray(self.anchor, dtype=float)
        g = np.asarray(self.grad_at_anchor, dtype=float)
        h = np.asarray(self.hessian_at_anchor, dtype=float)
        d = anchor.shape[0]
        if anchor.ndim != 1 or g.shape != (d,) or h.shape != (d, d):
            raise ValueError("inconsistent approximation shapes")
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "grad_at_anchor", g)
        object.__setattr__(self, "hessian_at_anchor", h)

    @property
    def dim(self) -> int:
        return self.anchor.shape[0]


def taylor_fit(obj: Objective, anchor: np.ndarray, origin_round: int = 0) -> ApproxObjective:
    """First-order model of the gradient around `anchor`.

    Stores the exact gradient and exact Hessian at the anchor, so the model
    reproduces the true gradient of a quadratic everywhere.
    """
    anchor = np.asarray(anchor, dtype=float)
    return ApproxObjective(
        anchor=anchor,
        grad_at_anchor=gradient(obj, anchor),
        hessian_at_anchor=hessian(obj),
        origin_round=origin_round,
    )


def approx_gradient(approx: ApproxObjective, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (approx.dim,):
        raise ValueError(f"iterate has shape {w.shape}, expected ({approx.dim},)")
    return approx.grad_at_anchor + approx.hessian_at_anchor @ (w - approx.anchor)


def perturb_hessian(
    approx: ApproxObjective, eps: float, rng: np.random.Generator
) -> ApproxObjective:
    """Add a random symmetric matrix of spectral norm exactly eps.

    This is the knob that degrades the stored curvature by a controlled
    amount; eps = 0 returns the approximation unchanged.
    """
    if eps < 0 or not np.isfinite(eps):
        raise ConfigError(f"eps must be finite and >= 0, got {eps}")
    if eps == 0:
        return approx
    d = approx.dim
    raw = rng.standard_normal((d, d))
    sym = (raw + raw.T) / 2.0
    spectral = float(np.abs(np.linalg.eigvalsh(sym)).max())
    noise = sym * (eps / spectral)
    return ApproxObjective(
        anchor=approx.anchor,
        grad_at_anchor=approx.grad_at_anchor,
        hessian_at_anchor=approx.hessian_at_anchor + noise,
        origin_round=approx.origin_round,
    )


def info_loss(obj: Objective, approx: ApproxObjective, w: np.ndarray) -> float:
    """Norm of the gradient error the approximation makes at w."""
    return float(np.linalg.norm(gradient(obj, w) - approx_gradient(approx, w)))


def avg_info_loss(records: Sequence[Sequence[float]], rounds: int, clients: int) -> float:
    """Average per-(round, client) info loss over a complete grid."""
    if len(records) != rounds:
        raise ValueError(f"expected {rounds} rows, got {len(records)}")
    for t, row in enumerate(records):
        if len(row) != clients:
            raise ValueError(f"round {t} has {len(row)} entries, expected {clients}")
    if rounds == 0 or clients == 0:
        raise ValueError("records grid must be non-empty")
    return float(np.mean(np.asarray(records, dtype=float)))


@dataclass(frozen=True)
class CoreSet:
    """Indices of retained samples, at most `capacity` of them, all distinct."""

    indices: Tuple[int, ...]
    capacity: int

    def __post_init__(self):
        if self.capacity < 1:
            raise ConfigError(f"capacity must be >= 1, got {self.capacity}")
        if len(self.indices) > self.capacity:
            raise ValueError("more indices than capacity")
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("core-set indices must be distinct")


def select_core_set_naive(
    samples: SampleSet, m: int, rng: np.random.Generator
) -> CoreSet:
    """Uniform subsample of min(m, n) distinct items."""
    if m < 1:
        raise ConfigError(f"core-set size must be >= 1, got {m}")
    n = samples.n_items
    take = min(m, n)
    picks = rng.choice(n, size=take, replace=False)
    return CoreSet(indices=tuple(int(i) for i in picks), capacity=m)


def select_core_set_icarl(
    samples: SampleSet,
    m: int,
    feature_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> CoreSet:
    """Greedy herding toward the feature mean.

    Iteratively picks the item whose inclusion brings the running prototype
    mean closest to the full-set mean. Items are never re-selected and score
    ties resolve to the lowest index; the feature map defaults to identity.
    """
    if m < 1:
        raise ConfigError(f"core-set size must be >= 1, got {m}")
    feats = samples.features
    if feature_fn is not None:
        feats = np.asarray([feature_fn(x) for x in feats], dtype=float)
    n = feats.shape[0]
    take = min(m, n)
    target = feats.mean(axis=0)
    running = np.zeros_like(target)
    chosen: list[int] = []
    blocked = np.zeros(n, dtype=bool)
    for k in range(1, take + 1):
        # distance of the would-be mean from the target, per candidate
        scores = np.linalg.norm(target - (running + feats) / k, axis=1)
        scores[blocked] = np.inf
        pick = int(np.argmin(scores))  # argmin takes the first, so lowest index wins ties
        chosen.append(pick)
        blocked[pick] = True
        running = running + feats[pick]
    return CoreSet(indices=tuple(chosen), capacity=m)


def core_set_samples(samples: SampleSet, core: CoreSet) -> SampleSet:
    """Materialize the retained subset."""
    idx = np.asarray(core.indices, dtype=int)
    return SampleSet(features=samples.features[idx], targets=samples.targets[idx])


def mcmc_generate(
    energy_grad: Callable[[np.ndarray], np.ndarray],
    count: int,
    step_size: float,
    noise_scale: float,
    n_steps: int,
    dim: int,
    rng: np.random.Generator,
    label_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> SampleSet:
    """Draw synthetic samples by noisy gradient descent on an energy.

    Chains start uniform on [-1, 1]^dim and take n_steps updates
    x <- x - step_size * grad_E(x) + noise, noise ~ N(0, noise_scale^2 I).
    `energy_grad` receives and returns a (count, dim) batch. Targets come
    from `label_fn` applied to the final states (zeros if omitted).
    """
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    if n_steps < 0:
        raise ConfigError(f"n_steps must be >= 0, got {n_steps}")
    if step_size < 0 or noise_scale < 0:
        raise ConfigError("step_size and noise_scale must be >= 0")
    x = rng.uniform(-1.0, 1.0, size=(count, dim))
    for _ in range(n_steps):
        g = np.asarray(energy_grad(x), dtype=float)
        if g.shape != x.shape:
            raise ValueError(f"energy_grad returned shape {g.shape}, expected {x.shape}")
        x = x - step_size * g + noise_scale * rng.standard_normal(x.shape)
    targets = np.zeros(count) if label_fn is None else np.asarray(label_fn(x), dtype=float)
    return SampleSet(features=x, targets=targets)


class HistoryBuffer:
    """Bounded FIFO of past-objective approximations.

    Appending beyond capacity evicts the oldest entry. Iteration order is
    strictly oldest first.
    """

    def __init__(self, capacity: int = DEFAULT_HISTORY_CAPACITY):
        if capacity < 1:
            raise ConfigError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._entries: deque = deque(maxlen=capacity)

    def append(self, entry: ApproxObjective) -> Optional[ApproxObjective]:
        """Add an entry; returns the evicted one if the buffer was full."""
        evicted = self._entries[0] if len(self._entries) == self.capacity else None
        self._entries.append(entry)
        return evicted

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[ApproxObjective]:
        return iter(self._entries)

    def entries(self) -> Tuple[ApproxObjective, ...]:
        return tuple(self._entries)


def cfl_combined_gradient(
    current_grad: np.ndarray,
    history: Sequence[ApproxObjective],
    weights: Sequence[float],
    w: np.ndarray,
) -> np.ndarray:
    """Weighted mix of the current gradient and stored past models.

    `weights` has one entry per history item (oldest first) plus the current
    round's weight last, and must lie on the probability simplex.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(history) + 1,):
        raise ValueError(
            f"expected {len(history) + 1} weights, got {weights.shape}"
        )
    if np.any(weights < -1e-12) or abs(float(weights.sum()) - 1.0) > 1e-8:
        raise ValueError("weights must be non-negative and sum to 1")
    w = np.asarray(w, dtype=float)
    out = weights[-1] * np.asarray(current_grad, dtype=float)
    if history:
        anchors = np.stack([h.anchor for h in history])
        grads = np.stack([h.grad_at_anchor for h in history])
        hess = np.stack([h.hessian_at_anchor for h in history])
        past = grads + np.einsum("mij,mj->mi", hess, w[None, :] - anchors)
        out = out + weights[:-1] @ past
    return out
