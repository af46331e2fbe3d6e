"""Command-line experiment driver.

Verbs: train, ablate, sweep-batch, sweep-noise, grid, eval, export-views,
synth.  Every verb takes --config (flat key-value file), repeatable --set
key=value overrides, and the shortcut flags --dataset, --out, --seed, which
win over both.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from .config import ExperimentConfig, load_config
from .corpus import corpus_stats, load_corpus
from .experiments import (
    RunDirError,
    export_views,
    run_ablation,
    run_batch_sweep,
    run_eval,
    run_group_eval,
    run_noise_sweep,
    run_train,
    run_weight_grid,
)
from .synthetic import make_synthetic_fixture


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key-value config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )
    parser.add_argument("--dataset", help="corpus file (wins over data.path)")
    parser.add_argument("--out", help="run directory (wins over run.out)")
    parser.add_argument(
        "--seed",
        help="seed or comma-separated seed list (wins over run.seeds)",
    )
    parser.add_argument(
        "--resume",
        action="store_true",
        help="keep an already finalized report instead of failing",
    )


def _build_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config, tuple(args.overrides))
    if args.dataset:
        cfg.data.path = args.dataset
    if args.out:
        cfg.run.out = args.out
    if args.seed:
        cfg.run.seeds = tuple(int(s) for s in args.seed.split(","))
    return cfg


def _print_report(report: dict) -> None:
    final = report.get("final")
    if final and "test" in final:
        print(json.dumps({"test": final["test"]}, indent=2))
    elif "rows" in report:
        for row in report["rows"]:
            print(json.dumps(row))
    elif "mean_table" in report:
        print(report["mean_table"])
    elif "per_group" in report:
        print(json.dumps(report["per_group"], indent=2))
    elif isinstance(report.get("cells"), list):
        for cell in report["cells"]:
            print(json.dumps(cell))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metarec",
        description="contrastive sequential recommendation experiments",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", help="single training run + test evaluation")
    _add_common(p)

    p = sub.add_parser("ablate", help="all ablation variants, shared seeds")
    _add_common(p)
    p.add_argument(
        "--variants", help="comma list (default: all variants incl. joint)"
    )

    p = sub.add_parser("sweep-batch", help="one fit per batch size")
    _add_common(p)
    p.add_argument("--sizes", help="comma list of batch sizes")

    p = sub.add_parser("sweep-noise", help="test-time noise robustness sweep")
    _add_common(p)
    p.add_argument("--ratios", help="comma list of noise ratios")
    p.add_argument("--checkpoint", help="reuse a trained checkpoint")

    p = sub.add_parser("grid", help="lambda x beta weight grid")
    _add_common(p)
    p.add_argument("--lambdas", help="comma list of lambda values")
    p.add_argument("--betas", help="comma list of beta values")

    p = sub.add_parser("eval", help="evaluate a checkpoint (or per-length groups)")
    _add_common(p)
    p.add_argument("--checkpoint", help="checkpoint to evaluate")
    p.add_argument(
        "--groups",
        action="store_true",
        help="report per-length-group metrics (bounds from groups.bounds)",
    )
    p.add_argument(
        "--train-per-group",
        action="store_true",
        help="fit an independent model per group instead of sharing one",
    )
    p.add_argument(
        "--noise-ratio", type=float, default=0.0, help="test-time noise ratio"
    )

    p = sub.add_parser("export-views", help="dump h/z views for projection")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument(
        "--part", default="test", choices=("train", "valid", "test")
    )
    p.add_argument("--out-file", required=True)
    p.add_argument("--view-seed", type=int, default=0)

    p = sub.add_parser("synth", help="generate a synthetic corpus file")
    p.add_argument("--out-file", required=True)
    p.add_argument("--users", type=int, default=2000)
    p.add_argument("--items", type=int, default=500)
    p.add_argument("--order", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-len", type=int, default=5)
    p.add_argument("--max-len", type=int, default=40)
    p.add_argument("--successors", type=int, default=8)
    p.add_argument("--noise", type=float, default=0.2)
    p.add_argument(
        "--stats",
        action="store_true",
        help="print the filtered corpus statistics JSON",
    )
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "synth":
            path = make_synthetic_fixture(
                args.out_file,
                n_users=args.users,
                n_items=args.items,
                order=args.order,
                seed=args.seed,
                min_len=args.min_len,
                max_len=args.max_len,
                n_successors=args.successors,
                noise=args.noise,
            )
            print(path)
            if args.stats:
                print(corpus_stats(load_corpus(path)).to_json())
            return 0
        cfg = _build_config(args)
        if args.verb == "train":
            report = run_train(cfg, resume=args.resume)
        elif args.verb == "ablate":
            variants = (
                tuple(v.strip() for v in args.variants.split(","))
                if args.variants
                else None
            )
            report = (
                run_ablation(cfg, variants, resume=args.resume)
                if variants
                else run_ablation(cfg, resume=args.resume)
            )
        elif args.verb == "sweep-batch":
            sizes = (
                tuple(int(s) for s in args.sizes.split(","))
                if args.sizes
                else None
            )
            report = run_batch_sweep(cfg, sizes, resume=args.resume)
        elif args.verb == "sweep-noise":
            ratios = (
                tuple(float(r) for r in args.ratios.split(","))
                if args.ratios
                else None
            )
            report = run_noise_sweep(
                cfg, ratios, checkpoint=args.checkpoint, resume=args.resume
            )
        elif args.verb == "grid":
            lambdas = (
                tuple(float(v) for v in args.lambdas.split(","))
                if args.lambdas
                else None
            )
            betas = (
                tuple(float(v) for v in args.betas.split(","))
                if args.betas
                else None
            )
            report = run_weight_grid(cfg, lambdas, betas, resume=args.resume)
        elif args.verb == "eval":
            if args.groups:
                if args.train_per_group:
                    cfg.groups.train_per_group = True
                report = run_group_eval(
                    cfg, checkpoint=args.checkpoint, resume=args.resume
                )
            else:
                if not args.checkpoint:
                    raise RunDirError("eval needs --checkpoint (or --groups)")
                report = run_eval(
                    cfg,
                    args.checkpoint,
                    noise_ratio=args.noise_ratio,
                    resume=args.resume,
                )
        elif args.verb == "export-views":
            path = export_views(
                args.checkpoint,
                cfg,
                args.part,
                args.out_file,
                seed=args.view_seed,
            )
            print(path)
            return 0
        else:  # pragma: no cover - argparse enforces the verb set
            raise RunDirError(f"unknown verb {args.verb!r}")
        _print_report(report)
        return 0
    except (RunDirError, FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
