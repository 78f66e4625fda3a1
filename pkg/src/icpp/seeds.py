"""Named-stream seed derivation.

All randomness in a run flows from one root seed. Subsystems pull named
streams (for example ``derive_rng(seed, "fit")`` or
``derive_rng(seed, "sim", rep)``) so each subcommand and each Monte-Carlo
replication is independently reproducible.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & 0xFFFFFFFF


def derive_seed_sequence(root_seed: int, *names) -> np.random.SeedSequence:
    """Deterministic child SeedSequence for a named stream."""
    return np.random.SeedSequence(entropy=int(root_seed), spawn_key=tuple(_key(n) for n in names))


def derive_rng(root_seed: int, *names) -> np.random.Generator:
    """Generator seeded from the named stream of ``root_seed``."""
    return np.random.default_rng(derive_seed_sequence(root_seed, *names))


def derive_seed(root_seed: int, *names) -> int:
    """Plain integer seed derived from the named stream (for APIs taking ints)."""
    return int(derive_seed_sequence(root_seed, *names).generate_state(1, np.uint64)[0])
