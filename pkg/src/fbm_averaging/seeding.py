"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(master_seed, index)``: the
low 64 bits of the 128-bit key hold the master seed and the high 64 bits
hold the stream index. Streams never overlap, and adding streams never
perturbs existing ones, so ensembles can be extended or reordered freely.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def stream(master_seed: int, index: int) -> np.random.Generator:
    """Return the independent generator for stream ``index`` of ``master_seed``."""
    if index < 0:
        raise ValueError(f"stream index must be nonnegative, got {index}")
    key = (int(master_seed) & _MASK64) | ((int(index) & _MASK64) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def standard_normal(master_seed: int, index: int, shape) -> np.ndarray:
    """Standard-normal draws of ``shape`` from stream ``index``."""
    return stream(master_seed, index).standard_normal(shape)
