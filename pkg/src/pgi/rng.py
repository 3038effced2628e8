"""Deterministic seed-stream derivation.

Every randomized routine in this package draws from a generator derived
from a user seed plus a structural path (phase tag, layer, node, action,
...).  Results therefore do not depend on the order in which independent
blocks execute, which keeps runs reproducible under parallelism.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _token_to_int(token: int | str) -> int:
    if isinstance(token, str):
        return int.from_bytes(token.encode("utf-8"), "little")
    return int(token) & _MASK64


def rng_for(seed: int, *path: int | str) -> np.random.Generator:
    """Generator for the sampling site identified by ``(seed, *path)``.

    The same arguments always yield the same stream, distinct paths yield
    independent streams.  Path elements may be ints (layer, node, action,
    sample-block indices) or short string tags naming the phase.
    """
    entropy = [_token_to_int(seed)] + [_token_to_int(p) for p in path]
    return np.random.default_rng(np.random.SeedSequence(entropy))
