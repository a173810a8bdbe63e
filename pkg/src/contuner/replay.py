"""Replay sampling.

Old examples are drawn hierarchically from the full cumulative history:
first a uniform old-task id, then a uniform example within that task. This
keeps per-task coverage equal regardless of task size imbalance. A fixed
old:new ratio and a per-step batch-number budget make the per-task training
cost independent of how many tasks came before.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Example
from .errors import InvalidArgumentError

PHASE_SELECTOR = "selector"
PHASE_TASK_MODULE = "task-module"


@dataclass(frozen=True)
class ReplayPlan:
    batch_size: int = 8
    old_new_ratio: tuple[int, int] = (1, 1)
    iter1: int = 1  # selector budget, in batches
    iter2: int = 1  # task-module budget, in batches
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        if self.iter1 < 1 or self.iter2 < 1:
            raise InvalidArgumentError("batch budgets must be >= 1")
        old, new = self.old_new_ratio
        if old < 1 or new < 1:
            raise InvalidArgumentError("old_new_ratio components must be positive")


@dataclass(frozen=True)
class Batch:
    new_part: tuple[Example, ...]
    old_part: tuple[Example, ...]

    @property
    def examples(self) -> tuple[Example, ...]:
        return self.new_part + self.old_part


def batch_split(plan: ReplayPlan, has_history: bool) -> tuple[int, int]:
    """(new, old) counts per batch. With no history the batch is all new;
    under an odd split the extra example goes to the new part."""
    if not has_history:
        return plan.batch_size, 0
    old_w, new_w = plan.old_new_ratio
    n_old = plan.batch_size * old_w // (old_w + new_w)
    return plan.batch_size - n_old, n_old


def sample_batch(
    plan: ReplayPlan,
    new_data: Sequence[Example],
    history: Sequence[Sequence[Example]],
    rng: np.random.Generator,
) -> Batch:
    """Draw one training batch.

    New examples are uniform with replacement from the current task. Each
    old example comes from a uniform old-task index followed by a uniform
    draw within that task, also with replacement. Deterministic given the
    generator state; draw order is all new indices first, then per-old-draw
    (task, example) pairs.
    """
    if not new_data:
        raise InvalidArgumentError("new_data must be non-empty")
    pools = [pool for pool in history if len(pool) > 0]
    if pools and plan.batch_size < 2:
        raise InvalidArgumentError("batch_size must be >= 2 once history exists")
    n_new, n_old = batch_split(plan, bool(pools))
    new_idx = rng.integers(0, len(new_data), size=n_new)
    new_part = tuple(new_data[int(i)] for i in new_idx)
    old_part = []
    for _ in range(n_old):
        task_i = int(rng.integers(0, len(pools)))
        pool = pools[task_i]
        old_part.append(pool[int(rng.integers(0, len(pool)))])
    return Batch(new_part=new_part, old_part=tuple(old_part))


def batch_budget(plan: ReplayPlan, phase: str) -> int:
    """Per-step batch budget for a phase; constant in the task number."""
    if phase == PHASE_SELECTOR:
        return plan.iter1
    if phase == PHASE_TASK_MODULE:
        return plan.iter2
    raise InvalidArgumentError(f"unknown phase {phase!r}")


def split_budget(total_limit: int, train_valid_ratio: tuple[int, int] = (4, 1)) -> tuple[int, int]:
    """Split a combined train+validation batch limit by the given ratio."""
    if total_limit < 1:
        raise InvalidArgumentError("total_limit must be >= 1")
    t_w, v_w = train_valid_ratio
    if t_w < 1 or v_w < 0:
        raise InvalidArgumentError("bad train/valid ratio")
    train = total_limit * t_w // (t_w + v_w)
    return train, total_limit - train


def epoch_plan(
    budget: int, n_new: int, new_per_batch: int, max_epochs: int | None
) -> tuple[int, int]:
    """(total batches, batches per epoch) for one training phase.

    An epoch covers the new data once on average. When a maximum epoch count
    is set, the stopping point is the minimum of the batch budget and that
    many epochs, so tiny datasets stop early.
    """
    if max_epochs is None:
        return budget, budget
    if max_epochs < 1:
        raise InvalidArgumentError("max_epochs must be >= 1")
    epoch_len = max(1, math.ceil(n_new / max(1, new_per_batch)))
    return min(budget, max_epochs * epoch_len), epoch_len


def fixed_memory_sample(
    history: Sequence[Sequence[Example]],
    per_type_quota: int,
    seed: int,
) -> list[Example]:
    """Uniform per-type memory selection for the fixed-memory baseline.

    Keeps min(quota, available) examples of every type seen in the given
    views. Selection order is deterministic: types sorted, kept examples in
    corpus order.
    """
    if per_type_quota < 1:
        raise InvalidArgumentError("per_type_quota must be >= 1")
    groups: dict[str, list[Example]] = {}
    for view in history:
        for ex in view:
            groups.setdefault(ex.label, []).append(ex)
    rng = np.random.default_rng(seed)
    memory: list[Example] = []
    for label in sorted(groups):
        pool = groups[label]
        take = min(per_type_quota, len(pool))
        chosen = rng.choice(len(pool), size=take, replace=False)
        memory.extend(pool[i] for i in sorted(int(c) for c in chosen))
    return memory
