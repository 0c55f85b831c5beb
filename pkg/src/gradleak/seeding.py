from __future__ import annotations

from typing import List

import numpy as np


def derive_seeds(seed: int, count: int, *, salt: int = 0) -> List[int]:
    """Independent child seeds for ``count`` streams (clients, trials, attacks)."""
    ss = np.random.SeedSequence([int(seed) & ((1 << 64) - 1), salt])
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in ss.spawn(count)]


def derive_seed(seed: int, salt: int) -> int:
    return derive_seeds(seed, 1, salt=salt)[0]
