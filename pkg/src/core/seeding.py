import hashlib
from typing import Union

import numpy as np

# Named substreams: every stochastic consumer asks for its own generator by
# name, so re-running one stage never shifts the draws of another.

Name = Union[str, int]


def _name_words(*names: Name) -> list:
    words = []
    for name in names:
        digest = hashlib.sha256(str(name).encode("utf-8")).digest()
        words.extend(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4))
    return words


def derive_seed(seed: int, *names: Name) -> int:
    """Deterministic 63-bit child seed for (seed, names...)."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(seed) >> 32, *_name_words(*names)])
    return int(ss.generate_state(2, dtype=np.uint32).view(np.uint64)[0] >> np.uint64(1))


def substream(seed: int, *names: Name) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *names))
