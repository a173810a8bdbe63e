"""Run configuration.

A config file is a YAML key-value tree mirroring the dataclasses below.
Values are held unvalidated so that ``validate_config`` can report every
violation as data; the CLI builds the validated runtime objects only after
the config passes. All paths in a config file resolve relative to the file's
directory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .data import CORPUS_LOADERS, TASK_KINDS
from .dynamic import DYNAMIC_METHODS
from .errors import InvalidArgumentError
from .static import MODE_FIXED_MEMORY, STATIC_MODES

METHODS = DYNAMIC_METHODS + STATIC_MODES
_METHOD_ALIASES = {"wo-sel": "w/o-sel"}


@dataclass
class SplitSpec:
    num_clusters: int | None = None
    seed: int | None = None
    map_path: str | None = None
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)


@dataclass
class EncoderSpec:
    feature_dim: int = 4096
    hidden_dim: int = 256
    ngram_orders: tuple[int, ...] = (1, 2)
    seed: int | None = None


@dataclass
class ReplaySpec:
    batch_size: int = 8
    old_new_ratio: tuple[int, int] = (1, 1)
    iter1: int = 100
    iter2: int = 100


@dataclass
class SelectionSpec:
    num_active: int = 1
    alpha: float = -1e4
    teacher_forcing: bool = True


@dataclass
class TrainingSpec:
    learning_rate: float = 1e-2
    weight_decay: float = 0.01
    rank: int = 4
    step_overrides: dict[int, float] = field(default_factory=dict)
    max_epochs: int | None = None
    early_stop: bool = False


@dataclass
class RunConfig:
    corpus: str = ""
    task_kind: str = ""
    method: str = ""
    out_dir: str = ""
    corpus_format: str = "jsonl"
    seed: int = 0
    split: SplitSpec = field(default_factory=SplitSpec)
    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    replay: ReplaySpec = field(default_factory=ReplaySpec)
    selection: SelectionSpec = field(default_factory=SelectionSpec)
    training: TrainingSpec = field(default_factory=TrainingSpec)
    memory_quota: int | None = None
    max_input_length: int | None = None
    cache_path: str | None = None
    eval_csv: str | None = None


# YAML 1.1 reads exponents like -1.0e4 as strings; coerce float fields.
_FLOAT_FIELDS = {"alpha", "learning_rate", "weight_decay"}


def _build_section(cls, raw: dict, name: str):
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise InvalidArgumentError(f"unknown {name} keys: {sorted(unknown)}")
    kwargs = dict(raw)
    for key in ("ratios", "ngram_orders", "old_new_ratio"):
        if key in kwargs and kwargs[key] is not None:
            kwargs[key] = tuple(kwargs[key])
    for key in _FLOAT_FIELDS & set(kwargs):
        try:
            kwargs[key] = float(kwargs[key])
        except (TypeError, ValueError) as exc:
            raise InvalidArgumentError(f"{name}.{key}: not a number") from exc
    return cls(**kwargs)


def _parse_step_overrides(raw) -> dict[int, float]:
    overrides: dict[int, float] = {}
    for step, entry in (raw or {}).items():
        if not isinstance(entry, dict) or set(entry) - {"lr"}:
            raise InvalidArgumentError(
                f"step_overrides[{step}] must be a mapping with the single key 'lr'"
            )
        overrides[int(step)] = float(entry["lr"])
    return overrides


def run_config_from_dict(raw: dict, base_dir=None) -> RunConfig:
    if not isinstance(raw, dict):
        raise InvalidArgumentError("config root must be a mapping")
    raw = dict(raw)
    sections = {
        "split": SplitSpec,
        "encoder": EncoderSpec,
        "replay": ReplaySpec,
        "selection": SelectionSpec,
    }
    kwargs: dict = {}
    for name, cls in sections.items():
        if name in raw:
            kwargs[name] = _build_section(cls, raw.pop(name) or {}, name)
    if "training" in raw:
        section = dict(raw.pop("training") or {})
        section["step_overrides"] = _parse_step_overrides(section.get("step_overrides"))
        kwargs["training"] = _build_section(TrainingSpec, section, "training")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise InvalidArgumentError(f"unknown config keys: {sorted(unknown)}")
    kwargs.update(raw)
    if "method" in kwargs and kwargs["method"] in _METHOD_ALIASES:
        kwargs["method"] = _METHOD_ALIASES[kwargs["method"]]
    cfg = RunConfig(**kwargs)
    if base_dir is not None:
        base = Path(base_dir)
        for attr in ("corpus", "out_dir", "cache_path", "eval_csv"):
            value = getattr(cfg, attr)
            if value:
                setattr(cfg, attr, str((base / value)))
        if cfg.split.map_path:
            cfg.split.map_path = str(base / cfg.split.map_path)
    return cfg


def load_run_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    return run_config_from_dict(raw or {}, base_dir=Path(path).parent)


def validate_config(cfg: RunConfig) -> list[str]:
    """Every violation as 'field: reason'; an empty list means runnable."""
    v: list[str] = []
    if not cfg.corpus:
        v.append("corpus: path is required")
    elif not Path(cfg.corpus).is_file():
        v.append(f"corpus: file not found: {cfg.corpus}")
    if cfg.corpus_format not in CORPUS_LOADERS:
        v.append(f"corpus_format: unknown format {cfg.corpus_format!r}")
    if cfg.task_kind not in TASK_KINDS:
        v.append(f"task_kind: must be one of {TASK_KINDS}")
    if cfg.method not in METHODS:
        v.append(f"method: must be one of {METHODS}")
    if not cfg.out_dir:
        v.append("out_dir: path is required")

    split = cfg.split
    if split.map_path is None and split.num_clusters is None:
        v.append("split: either num_clusters or map_path is required")
    if split.num_clusters is not None and split.num_clusters < 1:
        v.append("split.num_clusters: must be >= 1")
    if split.map_path is not None and not Path(split.map_path).is_file():
        v.append(f"split.map_path: file not found: {split.map_path}")
    if len(split.ratios) != 3 or any(r <= 0 for r in split.ratios):
        v.append("split.ratios: must be three positive numbers")
    elif abs(sum(split.ratios) - 1.0) > 1e-9:
        v.append("split.ratios: must sum to 1")

    enc = cfg.encoder
    if enc.hidden_dim < 1 or enc.feature_dim < enc.hidden_dim:
        v.append("encoder: need feature_dim >= hidden_dim >= 1")
    if not enc.ngram_orders or any(n < 1 for n in enc.ngram_orders):
        v.append("encoder.ngram_orders: must be positive integers")

    rep = cfg.replay
    if rep.batch_size < 1:
        v.append("replay.batch_size: must be >= 1")
    elif (
        split.num_clusters is not None
        and split.num_clusters > 1
        and rep.batch_size < 2
    ):
        v.append("replay.batch_size: must be >= 2 for multi-task sequences")
    if rep.iter1 < 1:
        v.append("replay.iter1: must be >= 1")
    if rep.iter2 < 1:
        v.append("replay.iter2: must be >= 1")
    if len(rep.old_new_ratio) != 2 or any(w < 1 for w in rep.old_new_ratio):
        v.append("replay.old_new_ratio: components must be positive")

    sel = cfg.selection
    if sel.num_active < 1:
        v.append("selection.num_active: must be >= 1")
    elif split.num_clusters is not None and sel.num_active > split.num_clusters:
        v.append(
            f"selection.num_active: {sel.num_active} exceeds the task count "
            f"{split.num_clusters}"
        )
    if not math.isfinite(sel.alpha):
        v.append("selection.alpha: must be finite")

    tr = cfg.training
    if tr.rank < 1:
        v.append("training.rank: rank must be >= 1")
    if not (tr.learning_rate > 0 and math.isfinite(tr.learning_rate)):
        v.append("training.learning_rate: must be positive and finite")
    if tr.weight_decay < 0:
        v.append("training.weight_decay: must be >= 0")
    if tr.max_epochs is not None and tr.max_epochs < 1:
        v.append("training.max_epochs: must be >= 1 when set")
    for step, lr in tr.step_overrides.items():
        if not (lr > 0 and math.isfinite(lr)):
            v.append(f"training.step_overrides[{step}]: lr must be positive")

    if cfg.method == MODE_FIXED_MEMORY:
        if cfg.memory_quota is None or cfg.memory_quota < 1:
            v.append("memory_quota: fixed-memory method needs a quota >= 1")
    elif cfg.memory_quota is not None and cfg.memory_quota < 1:
        v.append("memory_quota: must be >= 1 when set")
    if cfg.max_input_length is not None and cfg.max_input_length < 1:
        v.append("max_input_length: must be >= 1 when set")
    return v
