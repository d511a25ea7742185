"""Seedable, documented RNG streams.

Every random draw in the package comes from a Philox4x64 counter-based
generator keyed directly (no seed hashing), so streams are reproducible
bit-for-bit and can be matched by ports in other languages:

    key = [seed mod 2**64, STREAM_ID]

Each (seed, purpose) pair owns an independent stream.  Sub-streams (e.g.
one per rollout) derive a fresh key as [seed, STREAM_ID + (index << 32)].
"""

from __future__ import annotations

import numpy as np

# Stream ids, stable across versions.
STREAM_DATA = 1  # environment data collection / dataset draws
STREAM_INIT = 2  # parameter initialization
STREAM_SAMPLE = 3  # minibatch index sampling
STREAM_ROLLOUT = 4  # Monte-Carlo reference rollouts
STREAM_BOOTSTRAP = 5  # bootstrap resampling


def stream(seed: int, stream_id: int, index: int = 0) -> np.random.Generator:
    """Independent generator for (seed, stream_id); `index` splits sub-streams."""
    key = np.array([seed % 2**64, (stream_id + (index << 32)) % 2**64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
