"""Experiment drivers behind the CLI verbs.

Every run directory receives the serialized effective config, a JSON report,
plain-text metric tables, and (for single trainings) the best checkpoint and
a JSONL training log.  Reports carry a ``finalized`` flag; re-running with
``resume`` returns a finalized report untouched instead of redoing the run.
"""

from __future__ import annotations

import csv
import json
import platform
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from . import __version__
from .augment import augment_batch
from .augmenter import augment_views
from .config import ExperimentConfig
from .corpus import (
    Corpus,
    DatasetSplit,
    Example,
    corpus_stats,
    group_by_length,
    load_corpus,
    make_batches,
    parse_length_ranges,
    split_leave_one_out,
)
from .encoder import SequenceEncoder
from .evaluation import (
    NoiseSpec,
    RankingMetrics,
    evaluate,
    evaluate_groups,
    format_metrics_table,
)
from .rng import child_seed, numpy_rng
from .training import FitResult, fit, load_checkpoint, save_checkpoint


class RunDirError(ValueError):
    """Output-directory conflicts (finalized run present, missing --out)."""


def _versions() -> dict[str, str]:
    return {
        "metarec": __version__,
        "python": platform.python_version(),
        "torch": torch.__version__,
        "numpy": np.__version__,
    }


def _load_split(cfg: ExperimentConfig) -> tuple[Corpus, DatasetSplit]:
    corpus = load_corpus(cfg.data.path, cfg.data.min_interactions)
    return corpus, split_leave_one_out(corpus)


def _require_dataset(cfg: ExperimentConfig) -> None:
    if not cfg.data.path:
        raise RunDirError("no dataset given; set data.path or pass --dataset")
    if not Path(cfg.data.path).is_file():
        raise FileNotFoundError(f"dataset file not found: {cfg.data.path}")


def _start_run(
    cfg: ExperimentConfig, resume: bool, needs_dataset: bool = True
) -> tuple[Optional[Path], Optional[dict]]:
    """Validate inputs before touching the filesystem, then create the run
    directory and write the effective config.

    Returns ``(run_dir, None)`` to proceed, or ``(None, report)`` when a
    finalized report exists and ``resume`` asks to keep it.
    """
    if needs_dataset:
        _require_dataset(cfg)
    if not cfg.run.out:
        raise RunDirError("no output directory given; set run.out or pass --out")
    run_dir = Path(cfg.run.out)
    report_path = run_dir / "report.json"
    if report_path.is_file():
        existing = json.loads(report_path.read_text())
        if existing.get("finalized"):
            if resume:
                return None, existing
            raise RunDirError(
                f"{report_path} is already finalized; pass --resume to keep it "
                f"or choose a fresh --out"
            )
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(cfg.to_text())
    return run_dir, None


def _write_report(run_dir: Path, report: dict) -> dict:
    report["finalized"] = True
    (run_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    return report


def _fit_once(
    cfg: ExperimentConfig,
    split: DatasetSplit,
    n_items: int,
    seed: int,
    variant: Optional[str] = None,
    batch_size: Optional[int] = None,
    lam: Optional[float] = None,
    beta: Optional[float] = None,
    log_lines: Optional[list[str]] = None,
) -> FitResult:
    train_cfg = cfg.train_config(seed=seed)
    changes: dict[str, object] = {}
    if variant is not None:
        changes["variant"] = variant
    if batch_size is not None:
        changes["batch_size"] = batch_size
    if lam is not None or beta is not None:
        weights = cfg.loss_weights()
        changes["weights"] = type(weights)(
            lam=weights.lam if lam is None else lam,
            beta=weights.beta if beta is None else beta,
            gamma=cfg.loss.gamma,
            temperature=weights.temperature,
        )
    if changes:
        train_cfg = type(train_cfg)(
            **{
                **{f: getattr(train_cfg, f) for f in train_cfg.__dataclass_fields__},
                **changes,
            }
        )
    return fit(
        split,
        cfg.encoder_config(n_items),
        train_cfg,
        aug_ops=cfg.augment_ops(),
        eval_ks=cfg.eval.ks,
        eval_batch_size=cfg.eval.batch_size,
        log_lines=log_lines,
    )


def run_train(cfg: ExperimentConfig, resume: bool = False) -> dict:
    """Single training with the first seed; writes checkpoint, log, report."""
    run_dir, existing = _start_run(cfg, resume)
    if existing is not None:
        return existing
    started = time.perf_counter()
    corpus, split = _load_split(cfg)
    seed = cfg.run.seeds[0]
    log_lines: list[str] = []
    result = _fit_once(cfg, split, corpus.vocab.n_items, seed, log_lines=log_lines)
    valid = evaluate(result.encoder, split.valid, cfg.eval.ks, cfg.eval.batch_size)
    test = evaluate(result.encoder, split.test, cfg.eval.ks, cfg.eval.batch_size)
    save_checkpoint(
        str(run_dir / "best.pt"),
        result.encoder,
        result.augmenters,
        extra={
            "config_text": cfg.to_text(),
            "seed": seed,
            "best_epoch": result.best_epoch,
            "best_metric": result.best_metric,
        },
    )
    (run_dir / "train_log.jsonl").write_text(
        "\n".join(log_lines) + ("\n" if log_lines else "")
    )
    table = format_metrics_table({"valid": valid, "test": test})
    (run_dir / "metrics.txt").write_text(table + "\n")
    report = {
        "kind": "train",
        "config": cfg.to_text(),
        "dataset_stats": json.loads(corpus_stats(corpus).to_json()),
        "seed": seed,
        "curves": result.history,
        "best_epoch": result.best_epoch,
        "stopped_early": result.stopped_early,
        "final": {"valid": valid.to_dict(), "test": test.to_dict()},
        "wall_clock_s": round(time.perf_counter() - started, 3),
        "versions": _versions(),
    }
    return _write_report(run_dir, report)


ABLATION_VARIANTS = ("full", "no_cl1", "no_cl2", "no_reg", "shared_augmenters", "joint")


def run_ablation(
    cfg: ExperimentConfig,
    variants: Sequence[str] = ABLATION_VARIANTS,
    resume: bool = False,
) -> dict:
    """One fit per variant and seed (seeds shared across variants), reported
    as an HR@20 / NDCG@20 comparison table."""
    run_dir, existing = _start_run(cfg, resume)
    if existing is not None:
        return existing
    started = time.perf_counter()
    corpus, split = _load_split(cfg)
    cells: dict[str, dict[str, dict]] = {}
    means: dict[str, RankingMetrics] = {}
    for variant in variants:
        cells[variant] = {}
        per_seed: list[RankingMetrics] = []
        for seed in cfg.run.seeds:
            result = _fit_once(cfg, split, corpus.vocab.n_items, seed, variant=variant)
            test = evaluate(
                result.encoder, split.test, cfg.eval.ks, cfg.eval.batch_size
            )
            per_seed.append(test)
            cells[variant][str(seed)] = {
                "test": test.to_dict(),
                "best_epoch": result.best_epoch,
            }
        means[variant] = _mean_metrics(per_seed)
    table = format_metrics_table(means)
    (run_dir / "metrics.txt").write_text(table + "\n")
    report = {
        "kind": "ablation",
        "config": cfg.to_text(),
        "seeds": list(cfg.run.seeds),
        "variants": list(variants),
        "cells": cells,
        "mean_table": table,
        "wall_clock_s": round(time.perf_counter() - started, 3),
        "versions": _versions(),
    }
    return _write_report(run_dir, report)


def _mean_metrics(metrics: Sequence[RankingMetrics]) -> RankingMetrics:
    ks = sorted(metrics[0].hr.keys())
    return RankingMetrics(
        hr={k: float(np.mean([m.hr[k] for m in metrics])) for k in ks},
        ndcg={k: float(np.mean([m.ndcg[k] for m in metrics])) for k in ks},
        n_users=metrics[0].n_users,
    )


def _metrics_csv_row(metrics: RankingMetrics) -> dict[str, float]:
    row: dict[str, float] = {}
    for k in sorted(metrics.hr.keys()):
        row[f"hr@{k}"] = round(metrics.hr[k], 6)
    for k in sorted(metrics.ndcg.keys()):
        row[f"ndcg@{k}"] = round(metrics.ndcg[k], 6)
    return row


def run_batch_sweep(
    cfg: ExperimentConfig,
    sizes: Optional[Sequence[int]] = None,
    resume: bool = False,
) -> dict:
    """One fit per batch size (per seed); means reported one CSV row per size."""
    run_dir, existing = _start_run(cfg, resume)
    if existing is not None:
        return existing
    started = time.perf_counter()
    sizes = tuple(sizes if sizes is not None else cfg.sweep.batch_sizes)
    corpus, split = _load_split(cfg)
    detail: dict[str, dict[str, dict]] = {}
    rows: list[dict[str, object]] = []
    for size in sizes:
        detail[str(size)] = {}
        per_seed: list[RankingMetrics] = []
        for seed in cfg.run.seeds:
            result = _fit_once(
                cfg, split, corpus.vocab.n_items, seed, batch_size=size
            )
            test = evaluate(
                result.encoder, split.test, cfg.eval.ks, cfg.eval.batch_size
            )
            per_seed.append(test)
            detail[str(size)][str(seed)] = test.to_dict()
        rows.append({"batch_size": size, **_metrics_csv_row(_mean_metrics(per_seed))})
    _write_csv(run_dir / "batch_sweep.csv", rows)
    report = {
        "kind": "batch_sweep",
        "config": cfg.to_text(),
        "sizes": list(sizes),
        "seeds": list(cfg.run.seeds),
        "cells": detail,
        "rows": rows,
        "wall_clock_s": round(time.perf_counter() - started, 3),
        "versions": _versions(),
    }
    return _write_report(run_dir, report)


def noise_sweep_metrics(
    encoder: SequenceEncoder,
    test: Sequence[Example],
    ratios: Sequence[float],
    ks: Sequence[int],
    batch_size: int,
    noise_seeds: int = 1,
    base_seed: int = 0,
) -> dict[float, RankingMetrics]:
    """Evaluate one trained encoder under increasing test-time noise; metrics
    at each ratio are averaged over ``noise_seeds`` independent corruptions."""
    out: dict[float, RankingMetrics] = {}
    for ratio in ratios:
        draws = [
            evaluate(
                encoder,
                test,
                ks,
                batch_size,
                noise=NoiseSpec(ratio=ratio, seed=child_seed(base_seed, "noise", i)),
            )
            for i in range(max(1, noise_seeds))
        ]
        out[float(ratio)] = _mean_metrics(draws)
    return out


def run_noise_sweep(
    cfg: ExperimentConfig,
    ratios: Optional[Sequence[float]] = None,
    checkpoint: Optional[str] = None,
    resume: bool = False,
) -> dict:
    """Train once (or load a checkpoint), then evaluate noisy copies of the
    test inputs at every ratio; one CSV row per ratio."""
    run_dir, existing = _start_run(cfg, resume)
    if existing is not None:
        return existing
    started = time.perf_counter()
    ratios = tuple(ratios if ratios is not None else cfg.sweep.noise_ratios)
    corpus, split = _load_split(cfg)
    if checkpoint is not None:
        encoders = {"checkpoint": load_checkpoint(checkpoint)[0]}
    else:
        encoders = {}
        for seed in cfg.run.seeds:
            result = _fit_once(cfg, split, corpus.vocab.n_items, seed)
            encoders[str(seed)] = result.encoder
    per_model: dict[str, dict[float, RankingMetrics]] = {}
    for name, encoder in encoders.items():
        per_model[name] = noise_sweep_metrics(
            encoder,
            split.test,
            ratios,
            cfg.eval.ks,
            cfg.eval.batch_size,
            noise_seeds=cfg.sweep.noise_seeds,
            base_seed=cfg.train.seed,
        )
    rows = []
    for ratio in ratios:
        mean = _mean_metrics([per_model[name][float(ratio)] for name in per_model])
        rows.append({"noise_ratio": ratio, **_metrics_csv_row(mean)})
    _write_csv(run_dir / "noise_sweep.csv", rows)
    report = {
        "kind": "noise_sweep",
        "config": cfg.to_text(),
        "ratios": [float(r) for r in ratios],
        "checkpoint": checkpoint,
        "per_model": {
            name: {str(r): m.to_dict() for r, m in ratios_map.items()}
            for name, ratios_map in per_model.items()
        },
        "rows": rows,
        "wall_clock_s": round(time.perf_counter() - started, 3),
        "versions": _versions(),
    }
    return _write_report(run_dir, report)


def run_weight_grid(
    cfg: ExperimentConfig,
    lambdas: Optional[Sequence[float]] = None,
    betas: Optional[Sequence[float]] = None,
    resume: bool = False,
) -> dict:
    """Fit every (lambda, beta) cell with gamma derived as 0.1 * beta; the
    report marks the cell with the best test NDCG@20."""
    run_dir, existing = _start_run(cfg, resume)
    if existing is not None:
        return existing
    started = time.perf_counter()
    lambdas = tuple(lambdas if lambdas is not None else cfg.grid.lambdas)
    betas = tuple(betas if betas is not None else cfg.grid.betas)
    corpus, split = _load_split(cfg)
    seed = cfg.run.seeds[0]
    cells: list[dict[str, object]] = []
    best_idx = -1
    best_value = float("-inf")
    for lam in lambdas:
        for beta in betas:
            result = _fit_once(
                cfg, split, corpus.vocab.n_items, seed, lam=lam, beta=beta
            )
            test = evaluate(
                result.encoder, split.test, cfg.eval.ks, cfg.eval.batch_size
            )
            cell = {
                "lambda": lam,
                "beta": beta,
                "gamma": result.trainer.cfg.weights.effective_gamma,
                "test": test.to_dict(),
                "ndcg@20": test.ndcg[20],
            }
            if test.ndcg[20] > best_value:
                best_value = test.ndcg[20]
                best_idx = len(cells)
            cells.append(cell)
    for i, cell in enumerate(cells):
        cell["best"] = i == best_idx
    _write_csv(
        run_dir / "grid.csv",
        [
            {
                "lambda": c["lambda"],
                "beta": c["beta"],
                "gamma": c["gamma"],
                "ndcg@20": round(float(c["ndcg@20"]), 6),
                "best": int(bool(c["best"])),
            }
            for c in cells
        ],
    )
    report = {
        "kind": "weight_grid",
        "config": cfg.to_text(),
        "seed": seed,
        "lambdas": [float(v) for v in lambdas],
        "betas": [float(v) for v in betas],
        "cells": cells,
        "wall_clock_s": round(time.perf_counter() - started, 3),
        "versions": _versions(),
    }
    return _write_report(run_dir, report)


def run_group_eval(
    cfg: ExperimentConfig,
    checkpoint: Optional[str] = None,
    resume: bool = False,
) -> dict:
    """Per-length-group test metrics: either one shared model (train or load)
    evaluated per group, or an independent fit per group."""
    run_dir, existing = _start_run(cfg, resume)
    if existing is not None:
        return existing
    started = time.perf_counter()
    corpus, split = _load_split(cfg)
    ranges = parse_length_ranges(cfg.groups.bounds)
    groups = group_by_length(corpus.sequences, ranges)
    per_group: dict[str, RankingMetrics] = {}
    if cfg.groups.train_per_group:
        for bounds, seqs in groups.items():
            group_split = split_leave_one_out(seqs)
            result = _fit_once(
                cfg, group_split, corpus.vocab.n_items, cfg.run.seeds[0]
            )
            per_group[bounds.label()] = evaluate(
                result.encoder, group_split.test, cfg.eval.ks, cfg.eval.batch_size
            )
    else:
        if checkpoint is not None:
            encoder = load_checkpoint(checkpoint)[0]
        else:
            encoder = _fit_once(
                cfg, split, corpus.vocab.n_items, cfg.run.seeds[0]
            ).encoder
        metrics = evaluate_groups(encoder, groups, cfg.eval.ks, cfg.eval.batch_size)
        per_group = {bounds.label(): m for bounds, m in metrics.items()}
    table = format_metrics_table(per_group)
    (run_dir / "metrics.txt").write_text(table + "\n")
    report = {
        "kind": "group_eval",
        "config": cfg.to_text(),
        "checkpoint": checkpoint,
        "group_sizes": {b.label(): len(seqs) for b, seqs in groups.items()},
        "per_group": {label: m.to_dict() for label, m in per_group.items()},
        "trained_per_group": cfg.groups.train_per_group,
        "wall_clock_s": round(time.perf_counter() - started, 3),
        "versions": _versions(),
    }
    return _write_report(run_dir, report)


def run_eval(
    cfg: ExperimentConfig,
    checkpoint: str,
    noise_ratio: float = 0.0,
    resume: bool = False,
) -> dict:
    """Evaluate an existing checkpoint on valid and test, optionally under
    test-time noise."""
    run_dir, existing = _start_run(cfg, resume)
    if existing is not None:
        return existing
    started = time.perf_counter()
    _, split = _load_split(cfg)
    encoder = load_checkpoint(checkpoint)[0]
    noise = (
        NoiseSpec(ratio=noise_ratio, seed=cfg.train.seed) if noise_ratio else None
    )
    valid = evaluate(encoder, split.valid, cfg.eval.ks, cfg.eval.batch_size)
    test = evaluate(encoder, split.test, cfg.eval.ks, cfg.eval.batch_size, noise)
    table = format_metrics_table({"valid": valid, "test": test})
    (run_dir / "metrics.txt").write_text(table + "\n")
    report = {
        "kind": "eval",
        "config": cfg.to_text(),
        "checkpoint": checkpoint,
        "noise_ratio": noise_ratio,
        "final": {"valid": valid.to_dict(), "test": test.to_dict()},
        "wall_clock_s": round(time.perf_counter() - started, 3),
        "versions": _versions(),
    }
    return _write_report(run_dir, report)


VIEW_NAMES = ("h1", "h2", "z1", "z2")


def export_views(
    checkpoint: str,
    cfg: ExperimentConfig,
    part: str,
    out_path: str,
    seed: int = 0,
    batch_size: int = 256,
) -> str:
    """Dump the four contrastive views of every example in ``part`` to a
    tab-separated file: user id, view name, then the d vector components.

    Views are computed without dropout, so the dump is deterministic given
    the checkpoint and the augmentation seed.
    """
    encoder, augmenters, _ = load_checkpoint(checkpoint)
    _require_dataset(cfg)
    _, split = _load_split(cfg)
    parts = {"train": split.train, "valid": split.valid, "test": split.test}
    if part not in parts:
        raise ValueError(f"unknown split part {part!r}; use train|valid|test")
    examples = parts[part]
    rng = numpy_rng(child_seed(seed, "export"))
    lines = ["user_id\tview\t" + "\t".join(f"c{i}" for i in range(encoder.cfg.d))]
    with torch.no_grad():
        for batch in make_batches(examples, batch_size, encoder.cfg.n):
            ids1, _, ids2, _ = augment_batch(
                batch.ids, batch.lengths, cfg.augment_ops(), rng, encoder.mask_id
            )
            h1 = encoder(ids1).final
            h2 = encoder(ids2).final
            views = augment_views(h1, h2, augmenters)
            matrices = {
                "h1": views.h1,
                "h2": views.h2,
                "z1": views.z1,
                "z2": views.z2,
            }
            for row, user in enumerate(batch.user_ids):
                for name in VIEW_NAMES:
                    values = matrices[name][row].tolist()
                    lines.append(
                        f"{user}\t{name}\t"
                        + "\t".join(f"{v:.9g}" for v in values)
                    )
    Path(out_path).write_text("\n".join(lines) + "\n")
    return out_path


def load_views(path: str) -> dict[str, tuple[list[str], np.ndarray]]:
    """Read an export back: per view name, the user ids and the float32
    matrix in dump order."""
    users: dict[str, list[str]] = {name: [] for name in VIEW_NAMES}
    rows: dict[str, list[list[float]]] = {name: [] for name in VIEW_NAMES}
    with open(path, "r", encoding="utf-8") as handle:
        header = handle.readline()
        if not header.startswith("user_id\tview"):
            raise ValueError(f"{path}: not a view dump")
        for line in handle:
            fields = line.rstrip("\n").split("\t")
            user, view, values = fields[0], fields[1], fields[2:]
            users[view].append(user)
            rows[view].append([float(v) for v in values])
    return {
        name: (users[name], np.asarray(rows[name], dtype=np.float32))
        for name in VIEW_NAMES
    }


def _write_csv(path: Path, rows: list[dict[str, object]]) -> None:
    if not rows:
        path.write_text("")
        return
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
