"""Loss terms: next-item cross-entropy, pairwise InfoNCE over in-batch
negatives, the two contrastive levels, the positive/negative score split with
its margin-style regularizer, and the two stage compositions

    stage 1:  L0 = rec + lambda * cl1 + beta * cl2 + gamma * reg
    stage 2:  L1 = cl2 + gamma * reg

All reductions are batch means, so the weights are batch-size independent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F

from .augmenter import ViewQuadruple


@dataclass(frozen=True)
class LossWeights:
    """Weights of the stage losses.  ``gamma=None`` derives 0.1 * beta."""

    lam: float = 0.1
    beta: float = 0.1
    gamma: Optional[float] = None
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.lam < 0 or self.beta < 0:
            raise ValueError("loss weights must be >= 0")
        if self.gamma is not None and self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")

    @property
    def effective_gamma(self) -> float:
        return 0.1 * self.beta if self.gamma is None else self.gamma


@dataclass
class LossBreakdown:
    """All loss parts of one step as 0-dim tensors, plus both stage totals."""

    rec: torch.Tensor
    cl1: torch.Tensor
    cl2: torch.Tensor
    reg: torch.Tensor
    stage1_total: torch.Tensor
    stage2_total: torch.Tensor

    def to_dict(self) -> dict[str, float]:
        return {
            "rec": float(self.rec.detach()),
            "cl1": float(self.cl1.detach()),
            "cl2": float(self.cl2.detach()),
            "reg": float(self.reg.detach()),
            "stage1_total": float(self.stage1_total.detach()),
            "stage2_total": float(self.stage2_total.detach()),
        }

    def to_json_line(self, **extra: object) -> str:
        record: dict[str, object] = dict(extra)
        record.update(self.to_dict())
        return json.dumps(record)


@dataclass
class ScoreSplit:
    """Similarity scores split by provenance: diagonal entries of the pairwise
    matrix are positives (same source row), off-diagonal ones negatives."""

    positives: torch.Tensor  # [B]
    negatives: torch.Tensor  # [B * (B - 1)]


def rec_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy of the target item under the pre-softmax logits.

    ``targets`` hold dense item ids in [1, |I|]; column ``i`` of ``logits``
    scores item id ``i + 1``.
    """
    n_items = logits.shape[1]
    if targets.numel() and (targets.min() < 1 or targets.max() > n_items):
        raise ValueError(
            f"targets must be in [1, {n_items}], got range "
            f"[{int(targets.min())}, {int(targets.max())}]"
        )
    return F.cross_entropy(logits, targets - 1)


def info_nce(x1: torch.Tensor, x2: torch.Tensor, tau: float = 1.0) -> torch.Tensor:
    """Symmetric InfoNCE over a batch of positive pairs.

    Row b of ``x1`` and row b of ``x2`` are the positive pair; the negatives
    for each anchor are the 2(B-1) remaining views of both families in the
    batch.  Similarity is the inner product scaled by 1/tau.  Exactly 0 at
    batch size 1, where no negatives exist.
    """
    if x1.shape != x2.shape:
        raise ValueError(f"shape mismatch: {tuple(x1.shape)} vs {tuple(x2.shape)}")
    batch = x1.shape[0]
    sim_11 = x1 @ x1.transpose(0, 1) / tau
    sim_22 = x2 @ x2.transpose(0, 1) / tau
    sim_12 = x1 @ x2.transpose(0, 1) / tau
    eye = torch.eye(batch, dtype=torch.bool, device=x1.device)
    neg_inf = float("-inf")
    # Anchor x1[b]: candidates are all other x1 rows plus every x2 row; the
    # positive sits at column batch + b.  Symmetrically for anchors in x2.
    logits_1 = torch.cat([sim_11.masked_fill(eye, neg_inf), sim_12], dim=1)
    logits_2 = torch.cat([sim_22.masked_fill(eye, neg_inf), sim_12.transpose(0, 1)], dim=1)
    labels = torch.arange(batch, device=x1.device) + batch
    per_row = F.cross_entropy(logits_1, labels, reduction="none") + F.cross_entropy(
        logits_2, labels, reduction="none"
    )
    return per_row.mean()


def cl1_loss(views: ViewQuadruple, tau: float = 1.0) -> torch.Tensor:
    """First contrastive level: the two data-augmented views."""
    return info_nce(views.h1, views.h2, tau)


def cl2_loss(views: ViewQuadruple, tau: float = 1.0) -> torch.Tensor:
    """Second contrastive level: model-augmented pairs plus both mixed pairs."""
    return (
        info_nce(views.z1, views.z2, tau)
        + info_nce(views.h1, views.z2, tau)
        + info_nce(views.h2, views.z1, tau)
    )


def contrast_split(z1: torch.Tensor, z2: torch.Tensor) -> ScoreSplit:
    """Plain inner-product similarity matrix split into diagonal positives
    and off-diagonal negatives."""
    if z1.shape != z2.shape:
        raise ValueError(f"shape mismatch: {tuple(z1.shape)} vs {tuple(z2.shape)}")
    sim = z1 @ z2.transpose(0, 1)
    batch = sim.shape[0]
    off_diag = ~torch.eye(batch, dtype=torch.bool, device=sim.device)
    return ScoreSplit(positives=sim.diagonal(), negatives=sim[off_diag])


def contrastive_reg(split: ScoreSplit) -> torch.Tensor:
    """Margin penalty keeping positives above and negatives below the pivots
    o_min/o_max built from (min positives, max negatives).

    Cut-off at zero is max(a, 0) with subgradient 0 at the kink.  With no
    negatives the second term is defined as 0.
    """
    pos = split.positives
    if pos.numel() == 0:
        raise ValueError("score split needs at least one positive")
    neg = split.negatives
    if neg.numel() == 0:
        o_min = pos.min()
        return torch.clamp_min(pos - o_min, 0.0).mean()
    o_min = torch.minimum(pos.min(), neg.max())
    o_max = torch.maximum(pos.min(), neg.max())
    return (
        torch.clamp_min(pos - o_min, 0.0).mean()
        + torch.clamp_min(o_max - neg, 0.0).mean()
    )


def stage_losses(
    views: ViewQuadruple,
    logits: torch.Tensor,
    targets: torch.Tensor,
    weights: LossWeights,
    use_cl1: bool = True,
    use_cl2: bool = True,
    use_reg: bool = True,
) -> LossBreakdown:
    """Compose both stage totals from one batch's views and logits.

    The ``use_*`` flags implement the ablation variants: a disabled term is
    reported as 0 and excluded from both totals.  The regularizer is always
    computed from the (z1, z2) split.
    """
    zero = logits.new_zeros(())
    rec = rec_loss(logits, targets)
    cl1 = cl1_loss(views, weights.temperature) if use_cl1 else zero
    cl2 = cl2_loss(views, weights.temperature) if use_cl2 else zero
    reg = contrastive_reg(contrast_split(views.z1, views.z2)) if use_reg else zero
    gamma = weights.effective_gamma
    stage1 = rec + weights.lam * cl1 + weights.beta * cl2 + gamma * reg
    stage2 = cl2 + gamma * reg
    return LossBreakdown(
        rec=rec,
        cl1=cl1,
        cl2=cl2,
        reg=reg,
        stage1_total=stage1,
        stage2_total=stage2,
    )
