"""Counter-based random streams.

Each replicate gets its own Philox key built from ``(master_seed, index)``,
so a replicate's draws never depend on how many other replicates ran or in
what order.
"""
import numpy as np

SPLIT_SCHEME = "philox4x64 key = master_seed * 2**64 + replicate_index"
_MASK64 = (1 << 64) - 1


def stream(seed: int, index: int = 0) -> np.random.Generator:
    if seed < 0 or index < 0:
        raise ValueError("seed and stream index must be non-negative")
    key = ((int(seed) & _MASK64) << 64) | (int(index) & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


def streams(seed: int, count: int, offset: int = 0) -> list[np.random.Generator]:
    return [stream(seed, offset + i) for i in range(count)]
