"""Two-stage alternating training.

Stage 1 updates the encoder on the full objective L0 while the augmenters
only feed values forward; stage 2 re-encodes the same augmented sequences
under the freshly updated, frozen encoder and updates the augmenters on
L1 = cl2 + gamma * reg.  Freezing is structural: the encoder and the
augmenter pair sit in disjoint optimizer groups, and each stage steps only
its own group.  The joint variant collapses both into one combined step
on L0.

Every random draw (shuffling, augmentation, dropout masks, init) comes from
a child seed keyed by (base seed, role, epoch, step), so runs are bit-for-bit
reproducible and the draws of one consumer never shift another's.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import torch
from torch import nn

from .augment import AugmentOp, augment_batch, default_ops
from .augmenter import AugmenterPair, ViewQuadruple, augment_views, init_augmenters
from .corpus import DatasetSplit, SequenceBatch, make_batches
from .encoder import EncoderConfig, SequenceEncoder
from .evaluation import evaluate
from .losses import (
    LossBreakdown,
    LossWeights,
    cl2_loss,
    contrast_split,
    contrastive_reg,
    stage_losses,
)
from .rng import child_seed, numpy_rng, torch_generator

VARIANTS = ("full", "no_cl1", "no_cl2", "no_reg", "shared_augmenters", "joint")

STAGE_SCHEDULES = ("batch", "epoch")

EARLY_STOP_K = 20  # early stopping watches validation NDCG at this cutoff


class TrainingDiverged(RuntimeError):
    """Raised when a loss term turns non-finite; carries step diagnostics."""


@dataclass(frozen=True)
class TrainConfig:
    lr_theta: float = 1e-3
    lr_phi: float = 1e-3
    weights: LossWeights = field(default_factory=LossWeights)
    batch_size: int = 256
    epochs: int = 100
    patience: int = 10
    variant: str = "full"
    seed: int = 42
    stage_schedule: str = "batch"
    log_steps: bool = False

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(
                f"unknown variant {self.variant!r}; choose from {VARIANTS}"
            )
        if self.stage_schedule not in STAGE_SCHEDULES:
            raise ValueError(
                f"unknown stage schedule {self.stage_schedule!r}; "
                f"choose from {STAGE_SCHEDULES}"
            )


def param_checksum(module: nn.Module) -> str:
    """Order-stable digest of every parameter's exact bytes."""
    digest = hashlib.sha256()
    for name, param in sorted(module.named_parameters()):
        digest.update(name.encode())
        digest.update(param.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def _grad_norms(module: nn.Module) -> dict[str, float]:
    norms: dict[str, float] = {}
    for name, param in module.named_parameters():
        if param.grad is not None:
            norms[name] = float(param.grad.norm())
    return norms


class Trainer:
    """Mutable training state: parameters, their disjoint optimizer groups,
    the per-batch view cache shared by the two stages, and step methods."""

    def __init__(
        self,
        encoder: SequenceEncoder,
        augmenters: AugmenterPair,
        cfg: TrainConfig,
        aug_ops: Sequence[AugmentOp] = (),
    ) -> None:
        self.encoder = encoder
        self.augmenters = augmenters
        self.cfg = cfg
        self.aug_ops = tuple(aug_ops) if aug_ops else default_ops()
        w = cfg.weights
        # Term gating per ablation variant; cl2 stays on when beta == 0
        # because stage 2 consumes it unweighted.
        self.use_cl1 = cfg.variant != "no_cl1" and w.lam != 0.0
        self.use_cl2 = cfg.variant != "no_cl2"
        self.use_reg = cfg.variant != "no_reg" and w.effective_gamma != 0.0
        self.joint = cfg.variant == "joint"
        if self.joint:
            self.opt_joint: Optional[torch.optim.Adam] = torch.optim.Adam(
                [
                    {"params": list(encoder.parameters()), "lr": cfg.lr_theta},
                    {"params": list(augmenters.parameters()), "lr": cfg.lr_phi},
                ]
            )
            self.opt_theta = self.opt_phi = None
        else:
            self.opt_joint = None
            self.opt_theta = torch.optim.Adam(
                encoder.parameters(), lr=cfg.lr_theta
            )
            self.opt_phi = torch.optim.Adam(augmenters.parameters(), lr=cfg.lr_phi)
        self._view_cache: dict[tuple[int, int], tuple[torch.Tensor, ...]] = {}

    # ---- deterministic per-role randomness -------------------------------

    def _dropout_gen(self, epoch: int, step: int, role: str) -> torch.Generator:
        return torch_generator(
            child_seed(self.cfg.seed, "dropout", epoch, step, role)
        )

    def _views(
        self, batch: SequenceBatch, epoch: int, step: int
    ) -> tuple[torch.Tensor, ...]:
        """Draw (or re-use) the batch's two augmented views.  Stage 2 must see
        the exact sequences stage 1 drew, so draws are cached per (epoch, step)
        until the epoch ends."""
        key = (epoch, step)
        if key not in self._view_cache:
            rng = numpy_rng(child_seed(self.cfg.seed, "augment", epoch, step))
            self._view_cache[key] = augment_batch(
                batch.ids, batch.lengths, self.aug_ops, rng, self.encoder.mask_id
            )
        return self._view_cache[key]

    # ---- loss assembly ----------------------------------------------------

    def _needs_views(self) -> bool:
        return self.use_cl1 or self.use_cl2 or self.use_reg

    def _encode_views(
        self,
        batch: SequenceBatch,
        epoch: int,
        step: int,
        roles: tuple[str, str],
    ) -> ViewQuadruple:
        ids1, _, ids2, _ = self._views(batch, epoch, step)
        h1 = self.encoder(ids1, self._dropout_gen(epoch, step, roles[0])).final
        h2 = self.encoder(ids2, self._dropout_gen(epoch, step, roles[1])).final
        return augment_views(h1, h2, self.augmenters)

    def _stage1_breakdown(
        self, batch: SequenceBatch, epoch: int, step: int
    ) -> LossBreakdown:
        out = self.encoder(batch.ids, self._dropout_gen(epoch, step, "rec"))
        logits = self.encoder.score_items(out.final)
        if self._needs_views():
            views = self._encode_views(batch, epoch, step, ("view1", "view2"))
        else:
            # No contrastive term is active; stage_losses never touches these.
            zero = logits.new_zeros((len(batch), 1))
            views = ViewQuadruple(h1=zero, h2=zero, z1=zero, z2=zero)
        return stage_losses(
            views,
            logits,
            batch.targets,
            self.cfg.weights,
            use_cl1=self.use_cl1,
            use_cl2=self.use_cl2,
            use_reg=self.use_reg,
        )

    def _check_finite(
        self, breakdown: LossBreakdown, epoch: int, step: int, stage: str
    ) -> None:
        parts = breakdown.to_dict()
        if all(torch.isfinite(torch.tensor(v)) for v in parts.values()):
            return
        raise TrainingDiverged(
            f"non-finite loss at epoch {epoch} step {step} ({stage}): "
            f"parts={parts}, encoder grad norms={_grad_norms(self.encoder)}, "
            f"augmenter grad norms={_grad_norms(self.augmenters)}"
        )

    def _zero_grads(self) -> None:
        self.encoder.zero_grad(set_to_none=True)
        self.augmenters.zero_grad(set_to_none=True)

    # ---- step methods ------------------------------------------------------

    def train_step_stage1(
        self, batch: SequenceBatch, epoch: int, step: int
    ) -> LossBreakdown:
        """One gradient step on L0 applied to the encoder only; the augmenters
        contribute values but their parameters stay bit-identical."""
        if self.joint:
            raise RuntimeError("stage steps are undefined for the joint variant")
        breakdown = self._stage1_breakdown(batch, epoch, step)
        self._check_finite(breakdown, epoch, step, "stage1")
        self._zero_grads()
        breakdown.stage1_total.backward()
        self.opt_theta.step()
        return breakdown

    def train_step_stage2(
        self, batch: SequenceBatch, epoch: int, step: int
    ) -> LossBreakdown:
        """Re-encode the batch's cached augmented sequences under the frozen,
        just-updated encoder and step the augmenters on L1."""
        if self.joint:
            raise RuntimeError("stage steps are undefined for the joint variant")
        zero = torch.zeros(())
        if not (self.use_cl2 or self.use_reg):
            # Variant no_cl2 with gamma == 0: nothing for stage 2 to optimize.
            return LossBreakdown(zero, zero, zero, zero, zero, zero)
        ids1, _, ids2, _ = self._views(batch, epoch, step)
        with torch.no_grad():
            h1 = self.encoder(
                ids1, self._dropout_gen(epoch, step, "stage2_view1")
            ).final
            h2 = self.encoder(
                ids2, self._dropout_gen(epoch, step, "stage2_view2")
            ).final
        views = augment_views(h1, h2, self.augmenters)
        tau = self.cfg.weights.temperature
        gamma = self.cfg.weights.effective_gamma
        cl2 = cl2_loss(views, tau) if self.use_cl2 else zero
        reg = (
            contrastive_reg(contrast_split(views.z1, views.z2))
            if self.use_reg
            else zero
        )
        total = cl2 + gamma * reg
        breakdown = LossBreakdown(
            rec=zero,
            cl1=zero,
            cl2=cl2,
            reg=reg,
            stage1_total=self.cfg.weights.beta * cl2 + gamma * reg,
            stage2_total=total,
        )
        self._check_finite(breakdown, epoch, step, "stage2")
        self._zero_grads()
        total.backward()
        self.opt_phi.step()
        return breakdown

    def train_step_joint(
        self, batch: SequenceBatch, epoch: int, step: int
    ) -> LossBreakdown:
        """Single combined step on L0 touching both parameter groups."""
        breakdown = self._stage1_breakdown(batch, epoch, step)
        self._check_finite(breakdown, epoch, step, "joint")
        self._zero_grads()
        breakdown.stage1_total.backward()
        self.opt_joint.step()
        return breakdown

    # ---- epoch loop --------------------------------------------------------

    def train_epoch(
        self,
        split: DatasetSplit,
        epoch: int,
        on_stage_end: Optional[Callable[[str, int, int], None]] = None,
        log_lines: Optional[list[str]] = None,
    ) -> dict[str, float]:
        """Run all batches of one epoch in the configured schedule and return
        the per-epoch mean of every loss part."""
        batches = make_batches(
            split.train,
            self.cfg.batch_size,
            self.encoder.cfg.n,
            shuffle_seed=child_seed(self.cfg.seed, "shuffle", epoch),
        )
        stage1_parts: list[dict[str, float]] = []
        stage2_parts: list[dict[str, float]] = []

        def record(stage: str, step: int, breakdown: LossBreakdown) -> None:
            parts = breakdown.to_dict()
            (stage1_parts if stage in ("stage1", "joint") else stage2_parts).append(
                parts
            )
            if log_lines is not None:
                log_lines.append(
                    breakdown.to_json_line(epoch=epoch, step=step, stage=stage)
                )
            if on_stage_end is not None:
                on_stage_end(stage, epoch, step)

        if self.joint:
            for step, batch in enumerate(batches):
                record("joint", step, self.train_step_joint(batch, epoch, step))
        elif self.cfg.stage_schedule == "batch":
            for step, batch in enumerate(batches):
                record("stage1", step, self.train_step_stage1(batch, epoch, step))
                record("stage2", step, self.train_step_stage2(batch, epoch, step))
        else:  # epoch-phased: every stage-1 step first, then every stage-2 step
            for step, batch in enumerate(batches):
                record("stage1", step, self.train_step_stage1(batch, epoch, step))
            for step, batch in enumerate(batches):
                record("stage2", step, self.train_step_stage2(batch, epoch, step))
        self._view_cache.clear()

        def mean_of(parts: list[dict[str, float]], key: str) -> float:
            return sum(p[key] for p in parts) / len(parts) if parts else 0.0

        summary = {
            key: mean_of(stage1_parts, key)
            for key in ("rec", "cl1", "cl2", "reg", "stage1_total")
        }
        summary["stage2_total"] = mean_of(stage2_parts, "stage2_total")
        return summary


@dataclass
class FitResult:
    encoder: SequenceEncoder
    augmenters: AugmenterPair
    trainer: Trainer
    best_epoch: int
    best_metric: float
    history: list[dict]
    stopped_early: bool

    @property
    def epochs_run(self) -> int:
        return len(self.history)


def fit(
    split: DatasetSplit,
    encoder_cfg: EncoderConfig,
    train_cfg: TrainConfig,
    aug_ops: Sequence[AugmentOp] = (),
    eval_ks: Sequence[int] = (5, 10, 20),
    eval_batch_size: int = 256,
    log_lines: Optional[list[str]] = None,
    on_stage_end: Optional[Callable[[str, int, int], None]] = None,
) -> FitResult:
    """Train with early stopping on validation NDCG@20 and return the model
    restored to its best-validation parameters."""
    seed = train_cfg.seed
    encoder = SequenceEncoder(encoder_cfg, seed=child_seed(seed, "init", "encoder"))
    augmenters = init_augmenters(
        encoder_cfg.d,
        share=train_cfg.variant == "shared_augmenters",
        seed=child_seed(seed, "init", "augmenters"),
    )
    trainer = Trainer(encoder, augmenters, train_cfg, aug_ops)
    ks = tuple(sorted(set(eval_ks) | {EARLY_STOP_K}))

    def snapshot(module: nn.Module) -> dict[str, torch.Tensor]:
        return {k: v.detach().clone() for k, v in module.state_dict().items()}

    best_state = (snapshot(encoder), snapshot(augmenters))
    best_metric = float("-inf")
    best_epoch = -1
    bad_epochs = 0
    history: list[dict] = []
    stopped_early = False
    for epoch in range(train_cfg.epochs):
        start = time.perf_counter()
        losses = trainer.train_epoch(
            split,
            epoch,
            on_stage_end=on_stage_end,
            log_lines=log_lines if train_cfg.log_steps else None,
        )
        valid = evaluate(encoder, split.valid, ks, eval_batch_size)
        record = {
            "epoch": epoch,
            "losses": losses,
            "valid_hr": {k: valid.hr[k] for k in ks},
            "valid_ndcg": {k: valid.ndcg[k] for k in ks},
            "seconds": round(time.perf_counter() - start, 3),
        }
        history.append(record)
        if log_lines is not None:
            log_lines.append(json.dumps({"kind": "epoch", **record}))
        metric = valid.ndcg[EARLY_STOP_K]
        if metric > best_metric:
            best_metric = metric
            best_epoch = epoch
            best_state = (snapshot(encoder), snapshot(augmenters))
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > train_cfg.patience:
                stopped_early = True
                break
    encoder.load_state_dict(best_state[0])
    augmenters.load_state_dict(best_state[1])
    return FitResult(
        encoder=encoder,
        augmenters=augmenters,
        trainer=trainer,
        best_epoch=best_epoch,
        best_metric=best_metric,
        history=history,
        stopped_early=stopped_early,
    )


def save_checkpoint(
    path: str,
    encoder: SequenceEncoder,
    augmenters: AugmenterPair,
    extra: Optional[dict] = None,
) -> None:
    """Persist encoder and augmenter parameters under distinct namespaces so
    stage-wise freezing stays auditable, plus enough config to rebuild."""
    payload = {
        "format": 1,
        "encoder_cfg": dataclasses.asdict(encoder.cfg),
        "augmenter_cfg": {"d": augmenters.d, "share": augmenters.share},
        "encoder_state": encoder.state_dict(),
        "augmenter_state": augmenters.state_dict(),
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(
    path: str,
) -> tuple[SequenceEncoder, AugmenterPair, dict]:
    payload = torch.load(path, weights_only=True)
    encoder = SequenceEncoder(EncoderConfig(**payload["encoder_cfg"]), seed=0)
    encoder.load_state_dict(payload["encoder_state"])
    augmenters = init_augmenters(
        payload["augmenter_cfg"]["d"], share=payload["augmenter_cfg"]["share"]
    )
    augmenters.load_state_dict(payload["augmenter_state"])
    return encoder, augmenters, payload["extra"]
