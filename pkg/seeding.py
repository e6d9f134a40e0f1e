import hashlib
from typing import Tuple

import numpy as np


def _name_key(name: str) -> Tuple[int, ...]:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4))


def named_seed_sequence(root_seed: int, name: str) -> np.random.SeedSequence:
    """Child seed sequence for a named consumer, e.g. "bench/session1/labeled".

    Streams depend only on (root_seed, name), so adding a consumer never
    perturbs the draws of another.
    """
    return np.random.SeedSequence(entropy=int(root_seed), spawn_key=_name_key(name))


def named_stream(root_seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(named_seed_sequence(root_seed, name))


def derive_seed(root_seed: int, name: str) -> int:
    return int(named_seed_sequence(root_seed, name).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
