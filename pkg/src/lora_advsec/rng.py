"""Seeded PCG64 streams with string-labelled derivation.

One experiment seed governs every stage. Each consumer derives its own
substream through a stable label path (hashing, not stream splitting), so
adding or reordering stages never perturbs the draws of another stage.
"""

from __future__ import annotations

import hashlib

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def derive_seed(seed: int, *labels: str) -> int:
    """Stable 64-bit sub-seed keyed by the root seed and a label path."""
    key = f"{int(seed)}:" + "/".join(labels)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(seed: int, *labels: str) -> np.random.Generator:
    return make_rng(derive_seed(seed, *labels))
