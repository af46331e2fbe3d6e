"""Full-ranking evaluation: leave-one-out HR@k / NDCG@k over the whole item
catalog, test-time noise injection, and per-length-group reporting.

Ranks are conservative: items tying the target's score count as ranked above
it, so a collapsed scorer that gives everything the same logit ranks the
target last rather than first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import torch

from .corpus import (
    Example,
    InteractionSequence,
    ItemVocab,
    LengthRange,
    make_batches,
    split_leave_one_out,
)
from .encoder import SequenceEncoder
from .rng import numpy_rng

DEFAULT_KS = (5, 10, 20)


@dataclass(frozen=True)
class RankingMetrics:
    hr: dict[int, float]
    ndcg: dict[int, float]
    n_users: int

    def to_dict(self) -> dict[str, object]:
        return {
            "hr": {str(k): v for k, v in sorted(self.hr.items())},
            "ndcg": {str(k): v for k, v in sorted(self.ndcg.items())},
            "n_users": self.n_users,
        }


@dataclass(frozen=True)
class NoiseSpec:
    """Test-time corruption: ceil(ratio * L) negative items inserted at
    uniform positions, preserving the original order."""

    ratio: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.ratio < 1.0:
            raise ValueError(f"noise ratio must be in [0, 1), got {self.ratio}")


def rank_target(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """1-based rank of each row's target: 1 + number of other items scoring
    at least as high (ties count against the target)."""
    n_items = logits.shape[1]
    if targets.numel() and (targets.min() < 1 or targets.max() > n_items):
        raise ValueError(f"targets must be in [1, {n_items}]")
    target_logit = logits.gather(1, (targets - 1).unsqueeze(1))
    return (logits >= target_logit).sum(dim=1)


def compute_metrics(
    ranks: Sequence[int] | torch.Tensor, ks: Sequence[int] = DEFAULT_KS
) -> RankingMetrics:
    """HR@k = P(rank <= k); NDCG@k uses the single-target binary-relevance
    form 1 / log2(rank + 1) inside the window and 0 outside."""
    rank_arr = np.asarray(
        ranks.cpu().numpy() if isinstance(ranks, torch.Tensor) else ranks,
        dtype=np.int64,
    )
    if rank_arr.size == 0:
        raise ValueError("cannot compute metrics over zero users")
    if rank_arr.min() < 1:
        raise ValueError("ranks are 1-based")
    hr: dict[int, float] = {}
    ndcg: dict[int, float] = {}
    gains = 1.0 / np.log2(rank_arr + 1.0)
    for k in ks:
        hit = rank_arr <= k
        hr[int(k)] = float(hit.mean())
        ndcg[int(k)] = float(np.where(hit, gains, 0.0).mean())
    return RankingMetrics(hr=hr, ndcg=ndcg, n_users=int(rank_arr.size))


def inject_noise_items(
    items: Sequence[int],
    ratio: float,
    rng: np.random.Generator,
    n_items: int,
    exclude: set[int],
) -> list[int]:
    """Insert ceil(ratio * len) items drawn without replacement from outside
    ``exclude``; insertion slots are uniform over the extended sequence."""
    length = len(items)
    count = math.ceil(ratio * length)
    if count == 0:
        return list(items)
    pool = np.array([i for i in range(1, n_items + 1) if i not in exclude])
    if pool.size < count:
        raise ValueError(
            f"cannot draw {count} negative items: only {pool.size} items "
            f"outside the user's sequence"
        )
    negatives = rng.choice(pool, size=count, replace=False)
    slots = set(int(s) for s in rng.choice(length + count, size=count, replace=False))
    out: list[int] = []
    source = iter(items)
    noise = iter(negatives)
    for pos in range(length + count):
        out.append(int(next(noise)) if pos in slots else int(next(source)))
    return out


def inject_noise(
    seq: InteractionSequence, spec: NoiseSpec, vocab: ItemVocab
) -> InteractionSequence:
    """Corrupt one sequence; injected items never occur in the original."""
    rng = numpy_rng(spec.seed)
    noisy = inject_noise_items(
        seq.items, spec.ratio, rng, vocab.n_items, exclude=set(seq.items)
    )
    return InteractionSequence(user_id=seq.user_id, items=tuple(noisy))


def _apply_noise(
    examples: Sequence[Example], noise: NoiseSpec, n_items: int
) -> list[Example]:
    rng = numpy_rng(noise.seed)
    noisy: list[Example] = []
    for ex in examples:
        exclude = set(ex.inputs) | {ex.target}
        items = inject_noise_items(ex.inputs, noise.ratio, rng, n_items, exclude)
        noisy.append(Example(ex.user_id, tuple(items), ex.target))
    return noisy


def evaluate(
    encoder: SequenceEncoder,
    examples: Sequence[Example],
    ks: Sequence[int] = DEFAULT_KS,
    batch_size: int = 256,
    noise: Optional[NoiseSpec] = None,
) -> RankingMetrics:
    """Rank every user's held-out target against the full real-item catalog.

    Dropout is inactive (no generator is passed) and the augmenters play no
    role at inference time.
    """
    if noise is not None and noise.ratio > 0.0:
        examples = _apply_noise(examples, noise, encoder.cfg.n_items)
    ranks: list[torch.Tensor] = []
    with torch.no_grad():
        for batch in make_batches(examples, batch_size, encoder.cfg.n):
            logits = encoder.score_items(encoder(batch.ids).final)
            ranks.append(rank_target(logits, batch.targets))
    return compute_metrics(torch.cat(ranks), ks)


def evaluate_groups(
    encoder: SequenceEncoder,
    groups: Mapping[LengthRange, Iterable[InteractionSequence]],
    ks: Sequence[int] = DEFAULT_KS,
    batch_size: int = 256,
) -> dict[LengthRange, RankingMetrics]:
    """Test metrics of one shared model per user-length group."""
    out: dict[LengthRange, RankingMetrics] = {}
    for bounds, seqs in groups.items():
        split = split_leave_one_out(list(seqs))
        out[bounds] = evaluate(encoder, split.test, ks, batch_size)
    return out


def format_metrics_table(columns: Mapping[str, RankingMetrics]) -> str:
    """Aligned text table: one row per HR@k / NDCG@k, one column per model."""
    names = list(columns.keys())
    ks = sorted(next(iter(columns.values())).hr.keys())
    rows = [("Metric", *names)]
    for metric in ("HR", "NDCG"):
        for k in ks:
            values = [
                (m.hr if metric == "HR" else m.ndcg)[k] for m in columns.values()
            ]
            rows.append((f"{metric}@{k}", *(f"{v:.4f}" for v in values)))
    widths = [max(len(row[col]) for row in rows) for col in range(len(rows[0]))]
    lines = [
        "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip()
        for row in rows
    ]
    return "\n".join(lines)
