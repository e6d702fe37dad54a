"""Label-skewed data partitioning.

Clients receive items by repeated class-then-item draws: each client gets a
class mixture theta ~ Dirichlet(alpha * priors), then items are drawn one at
a time (class by mixture, item uniformly from that class's remaining pool of
the shared dataset). When a class runs out it is removed from every mixture by
zeroing its entry and rescaling the rest. Smaller alpha means more skew.

The hierarchical variant splits each client's allocation again into
per-round subsets with a second concentration beta. Overlap windows build
partially repeating round subsets from an ordered allocation instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import rng as streams
from .errors import ConfigError
from .objectives import SampleSet


@dataclass(frozen=True)
class LabeledPool:
    """Items 0..n-1 with integer class labels and optional attached data."""

    labels: np.ndarray
    features: Optional[np.ndarray] = None
    targets: Optional[np.ndarray] = None

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        if labels.ndim != 1 or labels.shape[0] < 1:
            raise ValueError("labels must be a non-empty 1-d array")
        if labels.min() < 0:
            raise ValueError("class labels must be non-negative")
        counts = np.bincount(labels)
        if (counts == 0).any():
            missing = int(np.flatnonzero(counts == 0)[0])
            raise ValueError(f"class {missing} has no items; relabel to a dense range")
        object.__setattr__(self, "labels", labels)
        if self.features is not None:
            feats = np.asarray(self.features, dtype=float)
            if feats.shape[0] != labels.shape[0]:
                raise ValueError("features row count must match labels")
            object.__setattr__(self, "features", feats)
        if self.targets is not None:
            targ = np.asarray(self.targets, dtype=float)
            if targ.shape != labels.shape:
                raise ValueError("targets must match labels shape")
            object.__setattr__(self, "targets", targ)

    @property
    def total(self) -> int:
        return self.labels.shape[0]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1

    def class_items(self) -> List[List[int]]:
        out: List[List[int]] = [[] for _ in range(self.n_classes)]
        for item, label in enumerate(self.labels):
            out[label].append(item)
        return out

    def priors(self) -> np.ndarray:
        counts = np.bincount(self.labels, minlength=self.n_classes)
        return counts / self.total

    def subset_samples(self, items: Sequence[int]) -> SampleSet:
        if self.features is None or self.targets is None:
            raise ValueError("pool has no attached feature/target data")
        idx = np.asarray(items, dtype=int)
        return SampleSet(features=self.features[idx], targets=self.targets[idx])


@dataclass(frozen=True)
class PartitionManifest:
    """Per-client, per-subset item ids plus the parameters that produced them."""

    subsets: Tuple[Tuple[Tuple[int, ...], ...], ...]  # [client][subset][item]
    alpha: float
    beta: Optional[float] = None

    @property
    def n_clients(self) -> int:
        return len(self.subsets)

    @property
    def subsets_per_client(self) -> int:
        return len(self.subsets[0]) if self.subsets else 0

    def all_items(self) -> List[int]:
        return [
            item
            for client in self.subsets
            for subset in client
            for item in subset
        ]


def renormalize(theta: np.ndarray, idx: int) -> np.ndarray:
    """Zero out entry idx and rescale the rest back onto the simplex.

    Keeps the vector length and the relative ratios of the surviving entries.
    """
    theta = np.asarray(theta, dtype=float)
    if not 0 <= idx < theta.shape[0]:
        raise ValueError(f"index {idx} out of range for {theta.shape[0]} entries")
    out = theta.copy()
    out[idx] = 0.0
    # divide by the surviving sum, not 1 - theta[idx]: when theta[idx] is
    # within an ulp of 1 the subtraction loses every significant digit
    rest = out.sum()
    if rest <= 0:
        raise ValueError("cannot renormalize: no probability mass left elsewhere")
    return out / rest


def _draw_allocation(
    working: List[List[int]],
    theta: np.ndarray,
    count: int,
    rng: np.random.Generator,
) -> List[int]:
    """Draw `count` items under mixture theta, removing them from `working`.

    theta entries for already-empty classes must be zero on entry; the mixture
    is maintained that way as classes run out mid-stream.
    """
    taken: List[int] = []
    theta = theta.copy()
    for _ in range(count):
        cls = int(rng.choice(theta.shape[0], p=theta))
        bucket = working[cls]
        pos = int(rng.integers(len(bucket)))
        # swap-with-last keeps removal O(1); the draw above was uniform so the
        # reordering does not bias later draws
        bucket[pos], bucket[-1] = bucket[-1], bucket[pos]
        taken.append(bucket.pop())
        if not bucket:
            if len(taken) < count:
                try:
                    theta = renormalize(theta, cls)
                except ValueError:
                    # the mixture put literally all mass on the class that just
                    # ran out; spread it over whatever still has items so the
                    # allocation stays exact
                    theta = np.array([1.0 if b else 0.0 for b in working])
                    theta = theta / theta.sum()
            else:
                break
    return taken


def _zero_empty_classes(theta: np.ndarray, working: List[List[int]]) -> np.ndarray:
    alive = np.array([bool(b) for b in working])
    theta = np.where(alive, theta, 0.0)
    total = theta.sum()
    if total <= 0:
        # every class this mixture favored is gone; fall back to uniform over
        # the classes that still hold items
        theta = alive.astype(float)
        total = theta.sum()
    return theta / total


def dirichlet_split(
    pool: LabeledPool,
    n_clients: int,
    items_per_client: int,
    alpha: float,
    rng: np.random.Generator,
) -> PartitionManifest:
    """Split a pool into one label-skewed allocation per client.

    Every client receives exactly items_per_client items; allocations are
    pairwise disjoint. Mixtures are drawn against the pool's original class
    priors; emptied classes are dropped from the active mixture as they
    exhaust.
    """
    if n_clients < 1:
        raise ConfigError(f"n_clients must be >= 1, got {n_clients}")
    if items_per_client < 1:
        raise ConfigError(f"items_per_client must be >= 1, got {items_per_client}")
    if not np.isfinite(alpha) or alpha <= 0:
        raise ConfigError(f"alpha must be finite and > 0, got {alpha}")
    if n_clients * items_per_client > pool.total:
        raise ConfigError(
            f"pool of {pool.total} items cannot supply {n_clients} x {items_per_client}"
        )
    priors = pool.priors()
    working = pool.class_items()
    allocations = []
    for _ in range(n_clients):
        theta = rng.dirichlet(alpha * priors)
        theta = _zero_empty_classes(theta, working)
        allocations.append(tuple(_draw_allocation(working, theta, items_per_client, rng)))
    return PartitionManifest(
        subsets=tuple((alloc,) for alloc in allocations), alpha=float(alpha)
    )


def hierarchical_split(
    pool: LabeledPool,
    n_clients: int,
    subsets_per_client: int,
    alpha: float,
    beta: float,
    rng: np.random.Generator,
    client_size: Optional[int] = None,
) -> PartitionManifest:
    """Two-level split: clients by alpha, then each client's allocation into
    equally sized per-round subsets by beta.

    client_size defaults to the largest multiple of subsets_per_client that
    fits pool.total // n_clients; an explicit value must divide evenly.
    """
    if subsets_per_client < 1:
        raise ConfigError(f"subsets_per_client must be >= 1, got {subsets_per_client}")
    if not np.isfinite(beta) or beta <= 0:
        raise ConfigError(f"beta must be finite and > 0, got {beta}")
    if client_size is None:
        per_client = pool.total // n_clients
        client_size = (per_client // subsets_per_client) * subsets_per_client
        if client_size < subsets_per_client:
            raise ConfigError(
                f"pool of {pool.total} items is too small for {n_clients} clients x "
                f"{subsets_per_client} subsets"
            )
    elif client_size % subsets_per_client != 0:
        raise ConfigError(
            f"client_size={client_size} is not divisible by subsets_per_client={subsets_per_client}"
        )
    outer = dirichlet_split(pool, n_clients, client_size, alpha, rng)
    subset_size = client_size // subsets_per_client
    clients = []
    for alloc in outer.subsets:
        items = np.asarray(alloc[0], dtype=int)
        # a skewed client may hold no items of some classes; compact the
        # labels so the inner pool's every class is populated
        _, dense = np.unique(pool.labels[items], return_inverse=True)
        sub_pool = LabeledPool(labels=dense)
        inner = dirichlet_split(sub_pool, subsets_per_client, subset_size, beta, rng)
        # inner ids index into `items`; map back to global ids
        clients.append(
            tuple(
                tuple(int(items[i]) for i in subset[0]) for subset in inner.subsets
            )
        )
    return PartitionManifest(subsets=tuple(clients), alpha=float(alpha), beta=float(beta))


def overlap_window(sequence: Sequence[int], window: int, step: int, t: int) -> List[int]:
    """Items for round t: `window` entries starting at (t * step) mod len,
    wrapping around. Consecutive rounds overlap by max(0, window - step)."""
    n = len(sequence)
    if n < 1:
        raise ConfigError("sequence must be non-empty")
    if not 1 <= window <= n:
        raise ConfigError(f"window must be in [1, {n}], got {window}")
    if step < 1:
        raise ConfigError(f"step must be >= 1, got {step}")
    if t < 0:
        raise ConfigError(f"round index must be >= 0, got {t}")
    start = (t * step) % n
    return [sequence[(start + j) % n] for j in range(window)]


def make_synthetic_pool(
    classes: int,
    items_per_class: int,
    dim: int,
    master_seed: int,
    mean_scale: float = 3.0,
    target_noise: float = 0.1,
) -> LabeledPool:
    """Gaussian class clusters with per-class linear teachers.

    Features for class c are N(m_c, I) around a direction of norm mean_scale;
    targets are x @ w_c plus Gaussian noise, with a separate teacher per
    class so the class mixture of a subset shifts its least-squares optimum.
    """
    if classes < 1 or items_per_class < 1 or dim < 1:
        raise ConfigError("classes, items_per_class and dim must all be >= 1")
    gen = streams.derive_rng(master_seed, streams.TAG_DATA)
    feats = np.empty((classes * items_per_class, dim))
    targets = np.empty(classes * items_per_class)
    labels = np.repeat(np.arange(classes), items_per_class)
    for c in range(classes):
        direction = gen.standard_normal(dim)
        center = direction / np.linalg.norm(direction) * mean_scale
        teacher = gen.standard_normal(dim)
        rows = slice(c * items_per_class, (c + 1) * items_per_class)
        x = center + gen.standard_normal((items_per_class, dim))
        feats[rows] = x
        targets[rows] = x @ teacher + target_noise * gen.standard_normal(items_per_class)
    return LabeledPool(labels=labels, features=feats, targets=targets)


def write_manifest(manifest: PartitionManifest, path: str) -> None:
    """Text format: one line per subset, `client,subset,space-separated ids`."""
    lines = ["client,subset,items"]
    for cid, client in enumerate(manifest.subsets):
        for sid, subset in enumerate(client):
            lines.append(f"{cid},{sid},{' '.join(str(i) for i in subset)}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path: str) -> PartitionManifest:
    with open(path, "r", encoding="ascii") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines or lines[0] != "client,subset,items":
        raise ConfigError(f"{path}: not a partition manifest")
    table: dict = {}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 3:
            raise ConfigError(f"{path}:{lineno}: expected 3 comma-separated fields")
        try:
            cid, sid = int(parts[0]), int(parts[1])
            items = tuple(int(i) for i in parts[2].split())
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from exc
        table.setdefault(cid, {})[sid] = items
    clients = []
    for cid in range(len(table)):
        if cid not in table:
            raise ConfigError(f"{path}: missing client {cid}")
        subsets = table[cid]
        clients.append(tuple(subsets[s] for s in range(len(subsets))))
    return PartitionManifest(subsets=tuple(clients), alpha=float("nan"))
