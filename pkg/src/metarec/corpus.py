"""Interaction corpus loading, filtering, splits, and batching.

Input files hold one user per line: a user identifier followed by that
user's item tokens in chronological order, whitespace separated.  Items are
mapped to dense integer ids starting at 1; id 0 is reserved for padding and
id ``n_items + 1`` for the masking token used by augmentation.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import torch

PAD_ID = 0


@dataclass(frozen=True)
class ItemVocab:
    """Dense item-id space. ``tokens[i]`` is the raw token of dense id ``i + 1``."""

    tokens: tuple[str, ...]

    @property
    def n_items(self) -> int:
        return len(self.tokens)

    @property
    def mask_id(self) -> int:
        return self.n_items + 1

    @property
    def pad_id(self) -> int:
        return PAD_ID

    def dense_id(self, token: str) -> int:
        try:
            return self._index()[token]
        except KeyError:
            raise KeyError(f"unknown item token {token!r}") from None

    def _index(self) -> dict[str, int]:
        cached = getattr(self, "_cached_index", None)
        if cached is None:
            cached = {tok: i + 1 for i, tok in enumerate(self.tokens)}
            object.__setattr__(self, "_cached_index", cached)
        return cached


@dataclass(frozen=True)
class InteractionSequence:
    """One user's chronological item history in dense ids."""

    user_id: str
    items: tuple[int, ...]


@dataclass(frozen=True)
class Corpus:
    sequences: tuple[InteractionSequence, ...]
    vocab: ItemVocab


@dataclass(frozen=True)
class Example:
    """One (input prefix, next item) pair used for training or evaluation."""

    user_id: str
    inputs: tuple[int, ...]
    target: int


@dataclass(frozen=True)
class DatasetSplit:
    """Leave-one-out views: last item is the test target, the one before it
    the validation target, and the remaining prefix is the training sequence.

    ``train`` holds the (prefix, last item) pairs actually fitted on;
    ``train_sequences`` keeps the underlying truncated histories.
    """

    train_sequences: tuple[InteractionSequence, ...]
    train: tuple[Example, ...]
    valid: tuple[Example, ...]
    test: tuple[Example, ...]


@dataclass
class SequenceBatch:
    """Left-padded id matrix with per-row true lengths and next-item targets."""

    ids: torch.Tensor  # [B, n] long, PAD_ID on the left
    lengths: torch.Tensor  # [B] long, number of non-pad entries per row
    targets: torch.Tensor  # [B] long, dense item ids
    user_ids: tuple[str, ...]

    def __len__(self) -> int:
        return self.ids.shape[0]


def _parse_lines(path: str) -> list[tuple[str, list[str]]]:
    rows: list[tuple[str, list[str]]] = []
    seen_users: set[str] = set()
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            fields = stripped.split()
            if len(fields) < 2:
                raise ValueError(
                    f"{path}:{lineno}: malformed line, expected "
                    f"'user item_1 ... item_k' with k >= 1"
                )
            user, items = fields[0], fields[1:]
            if user in seen_users:
                raise ValueError(f"{path}:{lineno}: duplicate user id {user!r}")
            seen_users.add(user)
            rows.append((user, items))
    return rows


def _core_filter(
    rows: list[tuple[str, list[str]]], min_interactions: int
) -> list[tuple[str, list[str]]]:
    # Iterate until a fixpoint: dropping short users can push items below the
    # threshold and vice versa, so a single pass is not enough.
    while True:
        counts = Counter(tok for _, items in rows for tok in items)
        kept: list[tuple[str, list[str]]] = []
        changed = False
        for user, items in rows:
            filtered = [tok for tok in items if counts[tok] >= min_interactions]
            if len(filtered) < min_interactions:
                changed = True
                continue
            if len(filtered) != len(items):
                changed = True
            kept.append((user, filtered))
        rows = kept
        if not changed:
            return rows


def load_corpus(path: str, min_interactions: int = 5) -> Corpus:
    """Parse an interaction file and apply iterated min-count filtering.

    Users with fewer than ``min_interactions`` remaining items and items with
    fewer than ``min_interactions`` remaining occurrences are removed until
    both conditions hold simultaneously.  Dense ids are assigned in first-seen
    order over the surviving rows.

    Raises:
        ValueError: on malformed lines (with line number) or when nothing
            survives filtering.
    """
    if min_interactions < 1:
        raise ValueError(f"min_interactions must be >= 1, got {min_interactions}")
    rows = _core_filter(_parse_lines(path), min_interactions)
    if not rows:
        raise ValueError(
            f"{path}: corpus is empty after min-count filtering "
            f"(min_interactions={min_interactions})"
        )
    token_to_id: dict[str, int] = {}
    tokens: list[str] = []
    sequences: list[InteractionSequence] = []
    for user, items in rows:
        dense: list[int] = []
        for tok in items:
            idx = token_to_id.get(tok)
            if idx is None:
                idx = len(tokens) + 1
                token_to_id[tok] = idx
                tokens.append(tok)
            dense.append(idx)
        sequences.append(InteractionSequence(user_id=user, items=tuple(dense)))
    return Corpus(sequences=tuple(sequences), vocab=ItemVocab(tokens=tuple(tokens)))


def split_leave_one_out(
    corpus: Corpus | Sequence[InteractionSequence],
) -> DatasetSplit:
    """Hold out the last item of each sequence for test and the second-to-last
    for validation; everything before them is the training sequence."""
    sequences = corpus.sequences if isinstance(corpus, Corpus) else corpus
    train_seqs: list[InteractionSequence] = []
    train: list[Example] = []
    valid: list[Example] = []
    test: list[Example] = []
    for seq in sequences:
        if len(seq.items) < 3:
            raise ValueError(
                f"user {seq.user_id!r}: need at least 3 interactions to split, "
                f"got {len(seq.items)}"
            )
        items = seq.items
        train_seqs.append(InteractionSequence(seq.user_id, items[:-2]))
        train.append(Example(seq.user_id, items[:-3], items[-3]))
        valid.append(Example(seq.user_id, items[:-2], items[-2]))
        test.append(Example(seq.user_id, items[:-1], items[-1]))
    return DatasetSplit(
        train_sequences=tuple(train_seqs),
        train=tuple(train),
        valid=tuple(valid),
        test=tuple(test),
    )


def pad_row(items: Sequence[int], n: int) -> tuple[list[int], int]:
    """Keep the most recent ``n`` items and left-pad to exactly ``n`` slots."""
    kept = list(items[-n:]) if n > 0 else []
    length = len(kept)
    return [PAD_ID] * (n - length) + kept, length


def make_batches(
    examples: Sequence[Example],
    batch_size: int,
    n: int,
    shuffle_seed: Optional[int] = None,
) -> list[SequenceBatch]:
    """Build left-padded batches; the final batch may be smaller.

    With ``shuffle_seed`` set, example order is permuted deterministically;
    otherwise corpus order is kept (used for evaluation).
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(examples))
    if shuffle_seed is not None:
        np.random.default_rng(shuffle_seed).shuffle(order)
    batches: list[SequenceBatch] = []
    for start in range(0, len(examples), batch_size):
        chunk = [examples[i] for i in order[start : start + batch_size]]
        ids = torch.zeros((len(chunk), n), dtype=torch.long)
        lengths = torch.zeros(len(chunk), dtype=torch.long)
        targets = torch.zeros(len(chunk), dtype=torch.long)
        for row, ex in enumerate(chunk):
            padded, length = pad_row(ex.inputs, n)
            ids[row] = torch.tensor(padded, dtype=torch.long)
            lengths[row] = length
            targets[row] = ex.target
        batches.append(
            SequenceBatch(
                ids=ids,
                lengths=lengths,
                targets=targets,
                user_ids=tuple(ex.user_id for ex in chunk),
            )
        )
    return batches


@dataclass(frozen=True)
class LengthRange:
    """Inclusive interaction-count range; ``hi=None`` means unbounded above."""

    lo: int
    hi: Optional[int]

    def contains(self, length: int) -> bool:
        return length >= self.lo and (self.hi is None or length <= self.hi)

    def label(self) -> str:
        if self.hi is None:
            return f">{self.lo - 1}"
        if self.lo == self.hi:
            return f"={self.lo}"
        return f"{self.lo}-{self.hi}"


def parse_length_ranges(text: str) -> tuple[LengthRange, ...]:
    """Parse a spec like ``"=5,6-8,>8"`` into ranges; ranges must not overlap."""
    ranges: list[LengthRange] = []
    for part in text.split(","):
        part = part.strip()
        if part.startswith("="):
            value = int(part[1:])
            ranges.append(LengthRange(value, value))
        elif part.startswith(">"):
            ranges.append(LengthRange(int(part[1:]) + 1, None))
        elif "-" in part:
            lo_text, hi_text = part.split("-", 1)
            lo, hi = int(lo_text), int(hi_text)
            if hi < lo:
                raise ValueError(f"empty length range {part!r}")
            ranges.append(LengthRange(lo, hi))
        else:
            raise ValueError(
                f"cannot parse length range {part!r}; use '=k', 'a-b' or '>k'"
            )
    for i, a in enumerate(ranges):
        for b in ranges[i + 1 :]:
            a_hi = a.hi if a.hi is not None else max(a.lo, b.lo) + 1
            b_hi = b.hi if b.hi is not None else max(a.lo, b.lo) + 1
            if a.lo <= b_hi and b.lo <= a_hi:
                raise ValueError(
                    f"length ranges {a.label()!r} and {b.label()!r} overlap"
                )
    return tuple(ranges)


def group_by_length(
    sequences: Iterable[InteractionSequence], ranges: Sequence[LengthRange]
) -> dict[LengthRange, list[InteractionSequence]]:
    """Partition users by total interaction count.

    Raises:
        ValueError: when some observed length falls outside every range.
    """
    groups: dict[LengthRange, list[InteractionSequence]] = {r: [] for r in ranges}
    for seq in sequences:
        length = len(seq.items)
        hits = [r for r in ranges if r.contains(length)]
        if not hits:
            raise ValueError(
                f"sequence length {length} (user {seq.user_id!r}) is not covered "
                f"by the given ranges"
            )
        groups[hits[0]].append(seq)
    return groups


@dataclass(frozen=True)
class CorpusStats:
    users: int
    items: int
    actions: int
    avg_length: float
    sparsity: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "users": self.users,
                "items": self.items,
                "actions": self.actions,
                "avg_length": round(self.avg_length, 4),
                "sparsity": round(self.sparsity, 6),
                "sparsity_pct": f"{self.sparsity * 100:.2f}%",
            }
        )


def corpus_stats(corpus: Corpus) -> CorpusStats:
    users = len(corpus.sequences)
    items = corpus.vocab.n_items
    actions = sum(len(seq.items) for seq in corpus.sequences)
    return CorpusStats(
        users=users,
        items=items,
        actions=actions,
        avg_length=actions / users,
        sparsity=1.0 - actions / (users * items),
    )
