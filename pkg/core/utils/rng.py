"""
Deterministic random streams.

Every random draw in the package comes from a generator keyed by
(root seed, purpose, indices...). Streams for different keys are statistically
independent and do not depend on the order in which they are requested, so
replications and bootstrap draws can run in any order on any number of workers.
"""

from typing import Literal

import numpy as np

Purpose = Literal["dgp", "folds", "bootstrap", "replication"]

_PURPOSE_TAGS: dict[str, int] = {
    "dgp": 1,
    "folds": 2,
    "bootstrap": 3,
    "replication": 4,
}


def _seed_sequence(root_seed: int, purpose: Purpose, *index: int) -> np.random.SeedSequence:
    if root_seed < 0:
        raise ValueError(f"root seed must be non-negative, got {root_seed}")
    try:
        tag = _PURPOSE_TAGS[purpose]
    except KeyError:
        raise ValueError(f"unknown stream purpose: {purpose}") from None
    return np.random.SeedSequence(
        entropy=int(root_seed), spawn_key=(tag, *(int(i) for i in index))
    )


def stream(root_seed: int, purpose: Purpose, *index: int) -> np.random.Generator:
    """
    Generator for one (root seed, purpose, index) key.

    Args:
        root_seed: Non-negative root seed (up to 64 bits)
        purpose: What the draws are used for
        index: Replication / draw / attempt indices

    Returns:
        A fresh PCG64 generator
    """
    return np.random.Generator(np.random.PCG64(_seed_sequence(root_seed, purpose, *index)))


def derive_seed(root_seed: int, purpose: Purpose, *index: int) -> int:
    """Derive a 64-bit child seed, for handing a sub-task its own root seed."""
    state = _seed_sequence(root_seed, purpose, *index).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])
