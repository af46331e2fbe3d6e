"""Stochastic sequence augmentation: crop, mask, reorder.

Each operator acts on the unpadded item list only; callers re-pad afterwards.
Ratios are fractions of the current sequence length, with counts floored.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .corpus import pad_row

OP_KINDS = ("crop", "mask", "reorder")

DEFAULT_RATIOS = {"crop": 0.6, "mask": 0.3, "reorder": 0.2}


def crop(items: Sequence[int], ratio: float, rng: np.random.Generator) -> list[int]:
    """Keep one contiguous window of ``max(1, floor(ratio * len))`` items,
    start position uniform over all valid offsets."""
    length = len(items)
    if length == 0:
        return []
    window = max(1, int(ratio * length))
    start = int(rng.integers(0, length - window + 1))
    return list(items[start : start + window])


def mask(
    items: Sequence[int], ratio: float, rng: np.random.Generator, mask_id: int
) -> list[int]:
    """Replace ``floor(ratio * len)`` distinct positions with the mask token."""
    length = len(items)
    out = list(items)
    count = int(ratio * length)
    if count == 0:
        return out
    for pos in rng.choice(length, size=count, replace=False):
        out[int(pos)] = mask_id
    return out


def reorder(items: Sequence[int], ratio: float, rng: np.random.Generator) -> list[int]:
    """Uniformly permute one contiguous window of ``max(1, floor(ratio * len))``
    items; everything outside the window keeps its position."""
    length = len(items)
    if length == 0:
        return []
    window = max(1, int(ratio * length))
    start = int(rng.integers(0, length - window + 1))
    out = list(items)
    perm = rng.permutation(window)
    segment = out[start : start + window]
    out[start : start + window] = [segment[int(i)] for i in perm]
    return out


@dataclass(frozen=True)
class AugmentOp:
    """One named operator with its ratio, applicable to an unpadded item list."""

    kind: str
    ratio: float

    def __post_init__(self) -> None:
        if self.kind not in OP_KINDS:
            raise ValueError(f"unknown augmentation op {self.kind!r}")
        if not 0.0 < self.ratio <= 1.0:
            raise ValueError(f"ratio must be in (0, 1], got {self.ratio}")

    def apply(
        self, items: Sequence[int], rng: np.random.Generator, mask_id: int
    ) -> list[int]:
        if self.kind == "crop":
            return crop(items, self.ratio, rng)
        if self.kind == "mask":
            return mask(items, self.ratio, rng, mask_id)
        return reorder(items, self.ratio, rng)


def default_ops(
    kinds: Sequence[str] = OP_KINDS,
    crop_ratio: float = DEFAULT_RATIOS["crop"],
    mask_ratio: float = DEFAULT_RATIOS["mask"],
    reorder_ratio: float = DEFAULT_RATIOS["reorder"],
) -> tuple[AugmentOp, ...]:
    ratios = {"crop": crop_ratio, "mask": mask_ratio, "reorder": reorder_ratio}
    return tuple(AugmentOp(kind, ratios[kind]) for kind in kinds)


@dataclass(frozen=True)
class AugmentedPair:
    """Two augmented views of one source row plus the ops that produced them."""

    ops: tuple[AugmentOp, AugmentOp]
    view1: tuple[int, ...]
    view2: tuple[int, ...]


def sample_op_pair(
    ops: Sequence[AugmentOp], rng: np.random.Generator
) -> tuple[AugmentOp, AugmentOp]:
    """Draw two ops independently and uniformly, with replacement, so the same
    operator may be picked twice."""
    if not ops:
        raise ValueError("need at least one augmentation op to sample from")
    first = ops[int(rng.integers(0, len(ops)))]
    second = ops[int(rng.integers(0, len(ops)))]
    return first, second


def sample_pair(
    seq: Sequence[int],
    ops: Sequence[AugmentOp],
    rng: np.random.Generator,
    mask_id: int,
) -> AugmentedPair:
    """Sample an op pair and apply both to the same unpadded source row."""
    pair = sample_op_pair(ops, rng)
    return AugmentedPair(
        ops=pair,
        view1=tuple(pair[0].apply(seq, rng, mask_id)),
        view2=tuple(pair[1].apply(seq, rng, mask_id)),
    )


def augment_batch(
    ids: torch.Tensor,
    lengths: torch.Tensor,
    ops: Sequence[AugmentOp],
    rng: np.random.Generator,
    mask_id: int,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Produce two augmented views of every row of a left-padded batch.

    A fresh op pair is sampled per row; both views are re-padded to the
    original number of slots.  Returns ``(ids_1, lengths_1, ids_2, lengths_2)``.
    """
    n = ids.shape[1]
    view_ids = [torch.zeros_like(ids), torch.zeros_like(ids)]
    view_lengths = [torch.zeros_like(lengths), torch.zeros_like(lengths)]
    for row in range(ids.shape[0]):
        length = int(lengths[row])
        items = ids[row, n - length :].tolist()
        pair = sample_pair(items, ops, rng, mask_id)
        for v, view in enumerate((pair.view1, pair.view2)):
            padded, out_len = pad_row(view, n)
            view_ids[v][row] = torch.tensor(padded, dtype=ids.dtype)
            view_lengths[v][row] = out_len
    return view_ids[0], view_lengths[0], view_ids[1], view_lengths[1]
