"""The static engine: one module trained continually across all tasks.

Two data regimes share the trainer. Dynamic-replay mode draws old examples
hierarchically from the full cumulative history under the per-step batch
budget. Fixed-memory mode is the classic bounded-memory baseline: it never
touches history beyond its memory set, drawing old examples from the
memory pool instead, and tops the memory up with a per-type quota from the
new task after training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import pet
from .data import Example, TaskSequence, flatten, make_preprocessor
from .encoder import Encoder
from .errors import InvalidArgumentError
from .metrics import StepReport, average_accuracy, whole_accuracy
from .replay import (
    PHASE_TASK_MODULE,
    ReplayPlan,
    batch_budget,
    batch_split,
    epoch_plan,
    fixed_memory_sample,
    sample_batch,
)
from .seeding import derive_seed
from .training import TrainSettings, restore_params, snapshot_params

MODE_DYNAMIC_REPLAY = "static-dynamic-replay"
MODE_FIXED_MEMORY = "static-fixed-memory"
STATIC_MODES = (MODE_DYNAMIC_REPLAY, MODE_FIXED_MEMORY)


@dataclass
class StaticState:
    mode: str
    module: pet.PetModule | None = None
    memory: list[Example] = field(default_factory=list)
    current_step: int = 0

    def __post_init__(self):
        if self.mode not in STATIC_MODES:
            raise InvalidArgumentError(f"unknown static mode {self.mode!r}")


@dataclass(frozen=True)
class StaticTrainStats:
    batches: int
    encoder_calls: int


def static_predict(state: StaticState, encoder: Encoder, inp) -> pet.PredictionRecord:
    """Argmax over the single module's logits; ties to the lower index."""
    if state.module is None:
        raise InvalidArgumentError("no trained module yet")
    logits = pet.forward_trace(state.module, encoder, inp).logits
    winner = int(np.argmax(logits))
    return pet.PredictionRecord(
        label=state.module.class_ids[winner],
        logits=logits,
        class_ids=state.module.class_ids,
    )


def _valid_average_accuracy(state, encoder, valid_views, preprocessor) -> float:
    accs = []
    for view in valid_views:
        if not view:
            continue
        hit = sum(
            static_predict(state, encoder, preprocessor(ex)).label == ex.label
            for ex in view
        )
        accs.append(hit / len(view))
    return sum(accs) / len(accs) if accs else 0.0


def static_train_task(
    state: StaticState,
    encoder: Encoder,
    new_data,
    history,
    plan: ReplayPlan,
    settings: TrainSettings,
    task_types,
    *,
    memory_quota: int | None = None,
    master_seed: int = 0,
    preprocessor=None,
    batch_hook=None,
    valid_views=None,
) -> StaticTrainStats:
    """Grow the head to cover the new task's types and train under the batch
    budget. ``batch_hook(module, examples, loss, grads)`` runs once per batch
    and may return a replacement (loss, grads) pair; auxiliary objectives of
    replay-based methods attach there.

    Fixed-memory mode must be called with ``history=None``: the training pool
    is exactly memory plus the new data, nothing else.
    """
    k = state.current_step + 1
    if preprocessor is None:
        raise InvalidArgumentError("static_train_task needs a preprocessor")
    if not new_data:
        raise InvalidArgumentError("new task has no training data")
    task_types = tuple(task_types)
    fixed_memory = state.mode == MODE_FIXED_MEMORY
    if fixed_memory:
        if history is not None:
            raise InvalidArgumentError(
                "fixed-memory mode must not receive history views"
            )
        if memory_quota is None or memory_quota < 1:
            raise InvalidArgumentError("fixed-memory mode needs a per-type quota")
        old_views: tuple = (tuple(state.memory),) if state.memory else ()
    else:
        old_views = tuple(history) if history is not None else ()
        if len(old_views) != k - 1:
            raise InvalidArgumentError(
                f"expected {k - 1} history views, got {len(old_views)}"
            )

    if state.module is None:
        if k != 1:
            raise InvalidArgumentError("module missing after step 1")
        module = pet.init_module(
            pet.SELECTOR_ID,
            settings.rank,
            encoder.config.feature_dim,
            encoder.config.hidden_dim,
            class_ids=task_types,
            seed=derive_seed(master_seed, "init/static"),
        )
    else:
        module = pet.dimension_expand(
            state.module, state.module.class_ids + task_types
        )
    state.module = module

    calls_before = encoder.forward_calls
    rng = np.random.default_rng(derive_seed(plan.seed, f"step{k}/static"))
    has_old = any(len(v) > 0 for v in old_views)
    n_new_per_batch, _ = batch_split(plan, has_old)
    total, epoch_len = epoch_plan(
        batch_budget(plan, PHASE_TASK_MODULE),
        len(new_data),
        n_new_per_batch,
        settings.max_epochs,
    )
    opt = pet.AdamState(lr=settings.lr_for(k), weight_decay=settings.weight_decay)
    do_early_stop = settings.early_stop and valid_views is not None
    best: tuple[float, dict] | None = None
    for i in range(total):
        batch = sample_batch(plan, new_data, old_views, rng)
        items = [
            (preprocessor(ex), module.label_index(ex.label)) for ex in batch.examples
        ]
        loss, grads = pet.loss_and_grads(module, encoder, items)
        if batch_hook is not None:
            hooked = batch_hook(module, batch.examples, loss, grads)
            if hooked is not None:
                loss, grads = hooked
        pet.optimizer_step(module, opt, grads)
        if do_early_stop and (i + 1) % epoch_len == 0:
            score = _valid_average_accuracy(state, encoder, valid_views, preprocessor)
            if best is None or score > best[0]:
                best = (score, snapshot_params(module))
    if best is not None:
        restore_params(module, best[1])

    if fixed_memory:
        state.memory.extend(
            fixed_memory_sample(
                (tuple(new_data),),
                memory_quota,
                derive_seed(plan.seed, f"step{k}/memory"),
            )
        )
    state.current_step = k
    return StaticTrainStats(
        batches=total, encoder_calls=encoder.forward_calls - calls_before
    )


def run_static_sequence(
    sequence: TaskSequence,
    encoder: Encoder,
    plan: ReplayPlan,
    settings: TrainSettings,
    *,
    mode: str,
    task_kind: str,
    memory_quota: int | None = None,
    master_seed: int = 0,
    batch_hook=None,
) -> tuple[list[StepReport], StaticState]:
    """Train the single module across the sequence, evaluating cumulatively."""
    state = StaticState(mode=mode)
    preprocessor = make_preprocessor(task_kind)
    reports: list[StepReport] = []
    for k in range(1, sequence.num_tasks + 1):
        history = None if mode == MODE_FIXED_MEMORY else sequence.train[: k - 1]
        calls_before = encoder.forward_calls
        stats = static_train_task(
            state,
            encoder,
            sequence.train[k - 1],
            history,
            plan,
            settings,
            sequence.clusters[k - 1].ordered_types(),
            memory_quota=memory_quota,
            master_seed=master_seed,
            preprocessor=preprocessor,
            batch_hook=batch_hook,
            valid_views=sequence.valid[:k] if settings.early_stop else None,
        )
        predictions: dict[str, str] = {}
        for view in sequence.cumulative_test(k):
            for ex in view:
                predictions[ex.id] = static_predict(
                    state, encoder, preprocessor(ex)
                ).label
        per_task = [
            whole_accuracy(predictions, view) for view in sequence.cumulative_test(k)
        ]
        reports.append(
            StepReport(
                step=k,
                whole_acc=whole_accuracy(predictions, flatten(sequence.cumulative_test(k))),
                avg_acc=average_accuracy(per_task),
                per_task_acc=tuple(per_task),
                encoder_calls=encoder.forward_calls - calls_before,
                cache_hits=0,
                batches_selector=0,
                batches_module=stats.batches,
                method=mode,
            )
        )
    return reports, state
