"""Counter-based random streams.

Every random draw in the library goes through a Philox generator keyed by
(seed, module, candidate, iteration, ...). Two runs that ask for the same key
get the same numbers regardless of scheduling or worker count.
"""
import zlib

import numpy as np


def _word(part) -> int:
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream key integers must be nonnegative")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed: int, *key) -> np.random.Generator:
    """Generator for the stream addressed by ``seed`` and ``key``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_word(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed: int, *key) -> int:
    # 63-bit integer usable as a plain seed for a sub-experiment
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_word(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
