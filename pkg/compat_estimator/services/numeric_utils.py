from __future__ import annotations

import numpy as np

from compat_estimator.types import FloatArray, IntArray


def largest_remainder_round(values: FloatArray, total: int) -> IntArray:
    """Round non-negative reals to integers summing exactly to ``total``.

    Floors every value, then hands the missing units to the entries with the
    largest fractional parts (lowest index first on ties).
    """
    floors = np.floor(values).astype(np.int64)
    missing = int(total - floors.sum())
    if missing > 0:
        remainders = values - floors
        order = np.argsort(-remainders, kind="stable")
        floors[order[:missing]] += 1
    elif missing < 0:
        remainders = values - floors
        order = np.argsort(remainders, kind="stable")
        candidates = [int(i) for i in order if floors[i] > 0]
        for i in candidates[:-missing]:
            floors[i] -= 1
    return floors


def child_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))
