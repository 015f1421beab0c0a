"""Named, counter-based random streams.

Every stream is a Philox generator keyed by ``SeedSequence(seed, spawn_key)``
with a fixed spawn key per stream name, so drawing from one stream never
shifts another.
"""

from __future__ import annotations

import numpy as np

STREAMS = {
    "model": 0,
    "arrival": 1,
    "noise": 2,
    "policy": 3,
    "rtp": 4,
}


def stream(seed: int, name: str, *sub: int) -> np.random.Generator:
    """Generator for stream ``name`` of ``seed``; ``sub`` splits it further."""
    if name not in STREAMS:
        raise KeyError(f"unknown stream {name!r}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAMS[name], *map(int, sub)))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *path: int) -> int:
    """A 64-bit seed deterministically derived from ``seed`` and ``path``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
