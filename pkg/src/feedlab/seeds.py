"""Deterministic seed derivation.

Every stage derives its randomness from one root seed so a whole pipeline run
is reproducible from a single integer. String tags are hashed to ints; the
derivation is stable across processes and platforms.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _tag_to_int(tag: str | int) -> int:
    if isinstance(tag, int):
        return tag & 0xFFFFFFFF
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def spawn_seed(root: int, *path: str | int) -> int:
    """Derive a child seed from `root` and a path of tags."""
    entropy = [int(root) & 0xFFFFFFFFFFFFFFFF] + [_tag_to_int(p) for p in path]
    ss = np.random.SeedSequence(entropy)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def rng_for(root: int, *path: str | int) -> np.random.Generator:
    return np.random.default_rng(spawn_seed(root, *path))
