"""Command-line interface: one subcommand per pipeline stage plus ``run``.

Exit codes: 0 success, 2 config error, 3 backend error, 4 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline
from .config import ExperimentConfig, load_config
from .errors import BackendError, ConfigError, DataError

STAGES = (
    "index",
    "sample",
    "caption",
    "mask",
    "complete",
    "generate",
    "embed",
    "train",
    "evaluate",
    "report",
    "run",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="styleaug",
        description="Masked-caption generative augmentation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--strategy", choices=["class", "caption", "mlp"])
        p.add_argument("--n-shot", type=int, help="few-shot size for single-cell stages")
        p.add_argument("--seed", type=int, help="seed for single-cell stages")
        p.add_argument("--mask-ratio", type=float)
        p.add_argument("--mock", action="store_true", help="force all mock backends")
        p.add_argument("--out", help="override the configured output directory")
        p.add_argument("--resume", metavar="RUN_ID", help="continue an existing run directory")
    return parser


def _apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    if args.strategy:
        cfg.strategy = args.strategy
    if args.mask_ratio is not None:
        cfg.mask_ratio = args.mask_ratio
    if args.mock:
        cfg.mock = True
    if args.out:
        cfg.output_dir = args.out
    return cfg


def _cell_args(cfg: ExperimentConfig, args: argparse.Namespace) -> tuple[int, int]:
    n_shot = args.n_shot if args.n_shot is not None else cfg.n_shots[0]
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    return n_shot, seed


def _run_stage(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    command = args.command
    if args.resume:
        resume_dir = Path(cfg.output_dir)
        if not resume_dir.exists():
            raise DataError(f"cannot resume: {resume_dir} does not exist")

    if command == "run":
        report = pipeline.run_experiment(cfg)
        failed = {k: v for k, v in report["run_status"].items() if v["status"] != "ok"}
        for name, info in report["run_status"].items():
            print(f"{name}: {info['status']}" + (f" ({info.get('error', '')})" if name in failed else ""))
        print(f"report: {Path(cfg.output_dir) / 'report.json'}")
        if failed:
            first = next(iter(failed.values()))["error"]
            if first.startswith("ConfigError"):
                raise ConfigError(first)
            if first.startswith("BackendError"):
                raise BackendError(first)
            raise DataError(first)
        return

    if command == "index":
        index = pipeline.stage_index(cfg)
        counts = index.counts()
        print(json.dumps(counts, indent=2, sort_keys=True))
        return

    if command == "report":
        report = pipeline.stage_report(cfg)
        print(json.dumps(report["accuracy"], indent=2, sort_keys=True))
        return

    # single-cell stages
    n_shot, seed = _cell_args(cfg, args)
    index = pipeline.stage_index(cfg)
    backends = pipeline.build_backends(cfg)
    run_dir = pipeline.cell_dir(cfg, n_shot, seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    split = pipeline.stage_sample(cfg, index, n_shot, seed)
    if command == "sample":
        print(f"split: {run_dir / 'split.json'} ({len(split.train)} train / {len(split.val)} val)")
        return
    captions = pipeline.stage_caption(cfg, split, backends, run_dir)
    if command == "caption":
        print(f"captions: {len(captions)}")
        return
    masked = pipeline.stage_mask(cfg, split, captions, run_dir)
    if command == "mask":
        print(f"masked captions: {len(masked)}")
        return
    completions = pipeline.stage_complete(cfg, masked, backends, run_dir)
    if command == "complete":
        accepted = sum(1 for c in completions.values() if c["accepted"])
        print(f"completions: {len(completions)} ({accepted} accepted)")
        return
    synset = pipeline.stage_generate(cfg, split, captions, completions, backends, run_dir)
    if command == "generate":
        print(f"synthetic samples: {len(synset.samples)} -> {synset.manifest_path}")
        return
    embs = pipeline.stage_embed(cfg, index, split, synset, backends, run_dir)
    if command == "embed":
        shapes = {k: [m.n, m.d] for k, m in sorted(embs.items())}
        print(json.dumps(shapes, sort_keys=True))
        return
    models = pipeline.stage_train(cfg, embs, run_dir)
    if command == "train":
        print(f"probes: {', '.join(sorted(models))}")
        return
    doc = pipeline.stage_evaluate(cfg, embs, models, synset, completions, run_dir)
    print(json.dumps(doc["accuracy"], indent=2, sort_keys=True))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = _apply_overrides(cfg, args)
        _run_stage(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
