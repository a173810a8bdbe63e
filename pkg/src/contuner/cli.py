"""Command-line harness.

Loads a config, validates it, builds the task sequence from the corpus,
dispatches to the requested method and writes per-step reports plus module
checkpoints. Exit codes: 0 success, 2 config failure, 3 numerical failure.

Determinism: the master seed fans out to every randomness consumer (encoder
projection, task split, example split, per-step samplers, module inits), so
a (config, seed) pair fixes every byte of the report files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from . import dynamic, static
from .cache import LogitCache
from .config import RunConfig, load_run_config, validate_config
from .data import (
    build_task_sequence,
    load_corpus,
    load_task_split,
    split_tasks,
    truncate_example,
)
from .dynamic import SelectionConfig
from .encoder import Encoder, EncoderConfig
from .errors import ContunerError, NumericalError
from .metrics import StepReport
from .pet import save_module
from .replay import ReplayPlan
from .seeding import derive_seed
from .training import TrainSettings

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _build_sequence(cfg: RunConfig):
    examples = load_corpus(cfg.corpus, cfg.corpus_format)
    if cfg.max_input_length is not None:
        examples = [truncate_example(ex, cfg.max_input_length) for ex in examples]
    if cfg.split.map_path is not None:
        clusters = load_task_split(cfg.split.map_path)
    else:
        task_seed = (
            cfg.split.seed
            if cfg.split.seed is not None
            else derive_seed(cfg.seed, "task-split")
        )
        labels = {ex.label for ex in examples}
        clusters = split_tasks(labels, cfg.split.num_clusters, task_seed)
    return build_task_sequence(
        examples, clusters, cfg.split.ratios, derive_seed(cfg.seed, "example-split")
    )


def run(cfg: RunConfig) -> list[StepReport]:
    """Execute a validated config; raises on violations before touching disk."""
    violations = validate_config(cfg)
    if violations:
        raise ContunerError("invalid config:\n" + "\n".join(violations))

    sequence = _build_sequence(cfg)
    encoder_seed = (
        cfg.encoder.seed
        if cfg.encoder.seed is not None
        else derive_seed(cfg.seed, "encoder")
    )
    encoder = Encoder(
        EncoderConfig(
            feature_dim=cfg.encoder.feature_dim,
            hidden_dim=cfg.encoder.hidden_dim,
            seed=encoder_seed,
            ngram_orders=cfg.encoder.ngram_orders,
        )
    )
    plan = ReplayPlan(
        batch_size=cfg.replay.batch_size,
        old_new_ratio=cfg.replay.old_new_ratio,
        iter1=cfg.replay.iter1,
        iter2=cfg.replay.iter2,
        seed=derive_seed(cfg.seed, "replay"),
    )
    selection = SelectionConfig(
        num_active=cfg.selection.num_active,
        alpha=cfg.selection.alpha,
        teacher_forcing=cfg.selection.teacher_forcing,
    )
    settings = TrainSettings(
        learning_rate=cfg.training.learning_rate,
        weight_decay=cfg.training.weight_decay,
        rank=cfg.training.rank,
        step_lr_overrides=dict(cfg.training.step_overrides),
        max_epochs=cfg.training.max_epochs,
        early_stop=cfg.training.early_stop,
    )

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache = LogitCache(cfg.cache_path) if cfg.cache_path else None
    try:
        if cfg.method in dynamic.DYNAMIC_METHODS:
            reports, state = dynamic.run_sequence(
                sequence,
                encoder,
                plan,
                selection,
                settings,
                method=cfg.method,
                task_kind=cfg.task_kind,
                cache=cache,
                master_seed=cfg.seed,
            )
            modules = [state.selector] + state.task_modules
        else:
            reports, state = static.run_static_sequence(
                sequence,
                encoder,
                plan,
                settings,
                mode=cfg.method,
                task_kind=cfg.task_kind,
                memory_quota=cfg.memory_quota,
                master_seed=cfg.seed,
            )
            modules = [state.module]
    finally:
        if cache is not None:
            cache.close()

    with open(out_dir / "report.jsonl", "w", encoding="utf-8") as fh:
        for report in reports:
            fh.write(json.dumps(report.to_record()) + "\n")
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    for module in modules:
        if module is not None:
            save_module(module, ckpt_dir / f"module_{module.module_id:03d}.pet")
    if cfg.eval_csv:
        with open(cfg.eval_csv, "w", encoding="utf-8") as fh:
            fh.write("step,whole_acc,avg_acc\n")
            for report in reports:
                fh.write(
                    f"{report.step},{round(report.whole_acc, 4)},"
                    f"{round(report.avg_acc, 4)}\n"
                )
    return reports


def _print_table(reports: list[StepReport]) -> None:
    print(f"{'step':>4}  {'whole':>6}  {'avg':>6}")
    for report in reports:
        print(f"{report.step:>4}  {report.whole_acc:>6.2f}  {report.avg_acc:>6.2f}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contuner",
        description="Continual-learning runs over task sequences.",
    )
    parser.add_argument("--config", required=True, help="YAML run config")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--cache", help="override the logit-cache path")
    parser.add_argument("--method", help="override the method id")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config)
    except (OSError, ContunerError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    if args.cache is not None:
        cfg.cache_path = args.cache
    if args.method is not None:
        cfg.method = args.method

    violations = validate_config(cfg)
    if violations:
        for violation in violations:
            print(f"invalid config: {violation}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        reports = run(cfg)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    _print_table(reports)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
