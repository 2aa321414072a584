"""Independent random streams keyed by (seed, purpose).

Each purpose gets its own generator so that, e.g., enabling dropout does not
shift the draws used for weight initialization.
"""

import numpy as np

PURPOSES = {
    "split": 0,
    "init": 1,
    "dropout": 2,
    "shuffle": 3,
    "hpo": 4,
    "folds": 5,
    "init_sample": 6,
}


def stream(seed: int, purpose: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), PURPOSES[purpose], *map(int, extra)]))


def derive_seed(seed: int, index: int) -> int:
    """Stable child seed for trial/member ``index`` of a run seeded with ``seed``."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, dtype=np.uint32)[0])
