"""Named, reproducible random substreams derived from one 64-bit seed."""

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def substream(seed: int, *names: str) -> np.random.Generator:
    """Return an independent generator for (seed, names).

    The same (seed, names) pair always yields the same stream, and distinct
    name paths (e.g. "init" vs "data-order") are statistically independent.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_name_key(n) for n in names]
    return np.random.default_rng(np.random.SeedSequence(entropy))
