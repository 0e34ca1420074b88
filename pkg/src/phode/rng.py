"""Counter-based random streams keyed by (master seed, purpose, item id).

Every consumer derives its own generator, so any stage can be re-run for a
single sentence and draw exactly the numbers it drew in a full run.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _words(tag: str) -> list[int]:
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=16).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def derive_rng(seed: int, *tags: object) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    for tag in tags:
        entropy.extend(_words(str(tag)))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
