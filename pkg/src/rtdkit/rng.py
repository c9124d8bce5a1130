"""Deterministic named random streams.

One integer seed fixes every source of randomness in a run.  Each consumer
derives its own generator from (seed, stream, step...), so interrupting and
resuming a run reproduces the exact draw sequence without serializing any
generator state.
"""

from __future__ import annotations

import numpy as np

# Stream ids.  These values are part of the resume contract: changing them
# changes which batches/masks a given (seed, step) produces.
INIT = 0
MASKING = 1
SAMPLING = 2
DROPOUT = 3
DATA_ORDER = 4
EVAL = 5
HEAD_INIT = 6


def stream_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for a named stream, independent of all other streams."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
