"""Deterministic random-stream derivation.

Every random draw in a run comes from a generator derived here. A stream is
identified by the master seed, a tag naming what the stream is for, and a key
of non-negative ints (client id, round index, ...). Derivation is stateless,
so any part of a run can be replayed in isolation and execution order never
changes what a given stream produces.
"""

from __future__ import annotations

import numpy as np

# Stream tags. Values are arbitrary but frozen: changing them changes every
# seeded run, so treat them like a file format.
TAG_CLIENT_DRIFT = 1   # per-client gradient offset, fixed for the client's lifetime
TAG_TIME_DRIFT = 2     # per (client, round) objective shift
TAG_STEP_NOISE = 3     # per (client, round) stream of per-step SGD noise
TAG_INIT = 4           # initial iterate
TAG_SELECT = 5         # per-round client sampling
TAG_PERTURB = 6        # per (client, round) Hessian perturbation
TAG_DATA = 7           # synthetic pool generation
TAG_PARTITION = 8      # Dirichlet partitioning
TAG_CORESET = 9        # per (client, round) core-set selection


def derive_rng(master_seed: int, tag: int, *key: int) -> np.random.Generator:
    """Return the generator for stream (master_seed, tag, *key).

    The same arguments always yield a generator in the same state.  All
    arguments must be non-negative ints (SeedSequence requirement).
    """
    return np.random.default_rng(np.random.SeedSequence((master_seed, tag, *key)))
