"""Deterministic seed derivation.

Every source of randomness in the package (parameter init, shuffling,
augmentation draws, dropout masks, noise injection) runs off an explicit
generator seeded through `child_seed`, never off the global RNG state.
Distinct roles get independent streams, so adding or removing one consumer
does not shift the draws seen by any other.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch


def child_seed(base: int, *tags: object) -> int:
    """Derive a stable sub-seed from a base seed and a role tag tuple."""
    key = repr((int(base),) + tuple(tags)).encode("utf-8")
    digest = hashlib.sha256(key).digest()
    # 63 bits so the value fits both numpy and torch seed ranges.
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)


def numpy_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def torch_generator(seed: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(seed)
    return gen
