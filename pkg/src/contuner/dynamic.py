"""The dynamic engine: one expert module per task, a trainable selector that
pre-selects a fixed number of active experts, and padded-logit prediction.

Training a task runs two budgeted phases. The selector head is first
expanded by one class and trained as a task-id classifier on replayed
batches. The new task module is then trained on the concatenated label
space: every batch example is routed through the (now frozen) selector with
teacher forcing, active experts contribute their real logits, inactive
slots are filled with a constant low value, and gradients flow only into
the new module. Both budgets are fixed per step, so training cost does not
grow with the number of tasks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import pet
from .cache import CacheEntry, LogitCache
from .data import (
    Example,
    PreprocessedInput,
    TaskSequence,
    flatten,
    make_preprocessor,
)
from .encoder import Encoder
from .errors import ConfigurationError, InvalidArgumentError, NumericalError
from .metrics import StepReport, average_accuracy, whole_accuracy
from .replay import (
    PHASE_SELECTOR,
    PHASE_TASK_MODULE,
    ReplayPlan,
    batch_budget,
    batch_split,
    epoch_plan,
    sample_batch,
)
from .seeding import derive_seed
from .training import TrainSettings, restore_params, snapshot_params

METHOD_DYNAMIC = "dynamic"
METHOD_WO_SEL = "w/o-sel"
METHOD_LIMITLESS = "limitless"
DYNAMIC_METHODS = (METHOD_DYNAMIC, METHOD_WO_SEL, METHOD_LIMITLESS)


@dataclass(frozen=True)
class SelectionConfig:
    num_active: int = 1  # experts kept active per example
    alpha: float = -1e4  # fill value for inactive experts' logit slots
    teacher_forcing: bool = True

    def __post_init__(self):
        if self.num_active < 1:
            raise InvalidArgumentError("num_active must be >= 1")
        if not np.isfinite(self.alpha):
            raise InvalidArgumentError("alpha must be finite")


@dataclass
class DynamicState:
    selector: pet.PetModule | None = None
    task_modules: list[pet.PetModule] = field(default_factory=list)
    current_step: int = 0

    @property
    def num_tasks(self) -> int:
        return len(self.task_modules)

    def module_for_task(self, task: int) -> pet.PetModule:
        return self.task_modules[task - 1]

    def global_class_ids(self) -> tuple:
        out: list = []
        for module in self.task_modules:
            out.extend(module.class_ids)
        return tuple(out)


@dataclass(frozen=True)
class TaskTrainStats:
    batches_selector: int
    batches_module: int
    encoder_calls: int
    forcing_fraction: float


def _cached_logits(
    module: pet.PetModule,
    encoder: Encoder,
    inp: PreprocessedInput,
    cache: LogitCache | None,
) -> np.ndarray:
    """Module logits, served from the cache when the module is frozen and the
    input carries an example id."""
    usable = (
        cache is not None
        and module.frozen
        and cache.accepts(module.module_id)
        and inp.example_id is not None
    )
    if usable:
        got = cache.get(inp.example_id, module.module_id)
        if got is not None:
            return got
    logits = pet.forward_trace(module, encoder, inp).logits
    if usable:
        cache.put(CacheEntry(inp.example_id, module.module_id, logits))
    return logits


def select_modules(
    state: DynamicState,
    config: SelectionConfig,
    encoder: Encoder,
    inp: PreprocessedInput,
    true_task: int | None = None,
    cache: LogitCache | None = None,
) -> list[int]:
    """Indices of the active task modules, best selector score first.

    Ties break toward the lower index. Under teacher forcing the true task's
    module is always active: if it misses the top scores, it replaces the
    lowest-scoring selected slot. When every module fits (t >= k) the
    selector is not consulted at all.
    """
    k = state.num_tasks
    if k == 0:
        raise InvalidArgumentError("no task modules registered")
    t = config.num_active
    if t > k:
        raise InvalidArgumentError(f"num_active {t} exceeds task count {k}")
    if t == k:
        return list(range(1, k + 1))
    if state.selector is None or state.selector.n_classes != k:
        raise InvalidArgumentError("selector missing or not sized for the task count")
    scores = _cached_logits(state.selector, encoder, inp, cache)
    order = np.argsort(-scores, kind="stable")
    active = [int(i) + 1 for i in order[:t]]
    if (
        config.teacher_forcing
        and true_task is not None
        and true_task not in active
    ):
        active[-1] = true_task
        active.sort(key=lambda j: (-scores[j - 1], j))
    return active


def _concat_with_padding(
    state: DynamicState,
    config: SelectionConfig,
    encoder: Encoder,
    inp: PreprocessedInput,
    active: list[int],
    cache: LogitCache | None,
    live_module: pet.PetModule | None = None,
) -> tuple[np.ndarray, pet.ForwardTrace | None, list[tuple[int, int]]]:
    """Concatenated logit vector over all seen schemas in task order.

    Active modules contribute real logits; inactive slots carry the padding
    constant. ``live_module`` (the module under training) goes through a
    traced forward so its gradients can be backed out later. Returns the
    vector, the live trace when produced, and per-task slice offsets.
    """
    slices: list[tuple[int, int]] = []
    offset = 0
    for module in state.task_modules:
        slices.append((offset, offset + module.n_classes))
        offset += module.n_classes
    concat = np.full(offset, config.alpha, dtype=np.float64)
    live_trace: pet.ForwardTrace | None = None
    active_set = set(active)
    real_min = math.inf
    for task in active:
        module = state.module_for_task(task)
        lo, hi = slices[task - 1]
        if live_module is not None and module is live_module:
            live_trace = pet.forward_trace(module, encoder, inp)
            values = live_trace.logits
        else:
            values = _cached_logits(module, encoder, inp, cache)
        concat[lo:hi] = values
        real_min = min(real_min, float(values.min()))
    if len(active_set) < state.num_tasks and real_min <= config.alpha:
        raise ConfigurationError(
            f"padding value {config.alpha} is not below the logit floor {real_min}"
        )
    return concat, live_trace, slices


def predict(
    state: DynamicState,
    config: SelectionConfig,
    encoder: Encoder,
    inp: PreprocessedInput,
    active: list[int] | None = None,
    cache: LogitCache | None = None,
) -> pet.PredictionRecord:
    """Global argmax over the concatenated logits of all seen schemas; ties
    go to the lowest global class index."""
    if active is None:
        active = select_modules(state, config, encoder, inp, cache=cache)
    concat, _, _ = _concat_with_padding(state, config, encoder, inp, active, cache)
    class_ids = state.global_class_ids()
    winner = int(np.argmax(concat))
    return pet.PredictionRecord(
        label=class_ids[winner],
        logits=concat,
        class_ids=class_ids,
        active=tuple(active),
    )


def _selector_valid_accuracy(
    state: DynamicState,
    encoder: Encoder,
    valid_views,
    preprocessor,
) -> float:
    """Mean per-task accuracy of the selector's task-id predictions."""
    accs = []
    for task_no, view in enumerate(valid_views, start=1):
        if not view:
            continue
        hit = 0
        for ex in view:
            scores = pet.forward_trace(state.selector, encoder, preprocessor(ex)).logits
            hit += int(np.argmax(scores)) + 1 == task_no
        accs.append(hit / len(view))
    return sum(accs) / len(accs) if accs else 0.0


def _prediction_valid_accuracy(
    state: DynamicState,
    config: SelectionConfig,
    encoder: Encoder,
    valid_views,
    preprocessor,
    cache: LogitCache | None,
) -> float:
    accs = []
    for view in valid_views:
        if not view:
            continue
        hit = 0
        for ex in view:
            rec = predict(state, config, encoder, preprocessor(ex), cache=cache)
            hit += rec.label == ex.label
        accs.append(hit / len(view))
    return sum(accs) / len(accs) if accs else 0.0


def train_task(
    state: DynamicState,
    encoder: Encoder,
    new_data,
    history,
    plan: ReplayPlan,
    selection: SelectionConfig,
    settings: TrainSettings,
    task_types,
    *,
    cache: LogitCache | None = None,
    master_seed: int = 0,
    preprocessor=None,
    valid_views=None,
) -> TaskTrainStats:
    """Train one task end to end: expand and train the selector, then train
    the new task module on the concatenated label space, freezing both."""
    k = state.current_step + 1
    if len(history) != k - 1:
        raise InvalidArgumentError(f"expected {k - 1} history views, got {len(history)}")
    if not new_data:
        raise InvalidArgumentError("new task has no training data")
    for module in state.task_modules:
        if not module.frozen:
            raise InvalidArgumentError(f"module {module.module_id} not frozen before step {k}")
    task_types = tuple(task_types)
    for ex in new_data:
        if ex.task_index != k:
            raise InvalidArgumentError(f"example {ex.id!r} is not task-{k} data")
        if ex.label not in task_types:
            raise InvalidArgumentError(f"example {ex.id!r} label outside the task's types")
    if preprocessor is None:
        raise InvalidArgumentError("train_task needs a preprocessor")
    do_early_stop = settings.early_stop and valid_views is not None

    calls_before = encoder.forward_calls
    feat_dim = encoder.config.feature_dim
    hid_dim = encoder.config.hidden_dim

    # Phase 1: selector. Expanded from last step's selector (fresh at k=1),
    # trained as a k-way task-id classifier on replayed batches.
    if state.selector is None:
        if k != 1:
            raise InvalidArgumentError("selector missing after step 1")
        selector = pet.init_module(
            pet.SELECTOR_ID,
            settings.rank,
            feat_dim,
            hid_dim,
            class_ids=(1,),
            seed=derive_seed(master_seed, "init/selector"),
        )
    else:
        if state.selector.n_classes != k - 1:
            raise InvalidArgumentError("selector head not sized k-1 before expansion")
        selector = pet.dimension_expand(state.selector, tuple(range(1, k + 1)))
        if cache is not None:
            # Expansion stales every stored selector logit vector.
            cache.invalidate_module(pet.SELECTOR_ID)
    state.selector = selector

    rng_sel = np.random.default_rng(derive_seed(plan.seed, f"step{k}/selector"))
    n_new_per_batch, _ = batch_split(plan, any(len(v) > 0 for v in history))
    total_sel, epoch_len_sel = epoch_plan(
        batch_budget(plan, PHASE_SELECTOR), len(new_data), n_new_per_batch, settings.max_epochs
    )
    opt = pet.AdamState(lr=settings.lr_for(k), weight_decay=settings.weight_decay)
    best: tuple[float, dict] | None = None
    for i in range(total_sel):
        batch = sample_batch(plan, new_data, history, rng_sel)
        items = [(preprocessor(ex), ex.task_index - 1) for ex in batch.examples]
        _, grads = pet.loss_and_grads(selector, encoder, items)
        pet.optimizer_step(selector, opt, grads)
        if do_early_stop and (i + 1) % epoch_len_sel == 0:
            score = _selector_valid_accuracy(state, encoder, valid_views, preprocessor)
            if best is None or score > best[0]:
                best = (score, snapshot_params(selector))
    if best is not None:
        restore_params(selector, best[1])
    pet.freeze(selector)
    if cache is not None:
        cache.mark_frozen(pet.SELECTOR_ID)

    # Phase 2: the task module, trained over the concatenated label space
    # with the selector routing each example (teacher forcing on).
    module = pet.init_module(
        k,
        settings.rank,
        feat_dim,
        hid_dim,
        class_ids=task_types,
        seed=derive_seed(master_seed, f"init/module/{k}"),
    )
    state.task_modules.append(module)
    global_ids = state.global_class_ids()
    global_index = {cid: i for i, cid in enumerate(global_ids)}

    rng_mod = np.random.default_rng(derive_seed(plan.seed, f"step{k}/module"))
    total_mod, epoch_len_mod = epoch_plan(
        batch_budget(plan, PHASE_TASK_MODULE), len(new_data), n_new_per_batch, settings.max_epochs
    )
    opt = pet.AdamState(lr=settings.lr_for(k), weight_decay=settings.weight_decay)
    best = None
    forced_hits = 0
    routed = 0
    for i in range(total_mod):
        batch = sample_batch(plan, new_data, history, rng_mod)
        traces: list[pet.ForwardTrace] = []
        logit_grads: list[np.ndarray] = []
        batch_loss = 0.0
        scale = 1.0 / len(batch.examples)
        for ex in batch.examples:
            inp = preprocessor(ex)
            true_task = ex.task_index if selection.teacher_forcing else None
            active = select_modules(
                state, selection, encoder, inp, true_task=true_task, cache=cache
            )
            routed += 1
            forced_hits += ex.task_index in active
            concat, live_trace, slices = _concat_with_padding(
                state, selection, encoder, inp, active, cache, live_module=module
            )
            loss, grad = pet.softmax_xent(concat, global_index[ex.label])
            batch_loss += loss
            if live_trace is not None:
                lo, hi = slices[k - 1]
                traces.append(live_trace)
                logit_grads.append(grad[lo:hi] * scale)
        mean_loss = batch_loss * scale
        if not np.isfinite(mean_loss):
            raise NumericalError(f"non-finite loss {mean_loss} at step {k}")
        grads = pet.grads_from_logit_grads(module, traces, logit_grads)
        pet.optimizer_step(module, opt, grads)
        if do_early_stop and (i + 1) % epoch_len_mod == 0:
            score = _prediction_valid_accuracy(
                state, selection, encoder, valid_views, preprocessor, cache=None
            )
            if best is None or score > best[0]:
                best = (score, snapshot_params(module))
    if best is not None:
        restore_params(module, best[1])
    pet.freeze(module)
    if cache is not None:
        cache.mark_frozen(k)

    state.current_step = k
    return TaskTrainStats(
        batches_selector=total_sel,
        batches_module=total_mod,
        encoder_calls=encoder.forward_calls - calls_before,
        forcing_fraction=forced_hits / routed if routed else 1.0,
    )


def run_sequence(
    sequence: TaskSequence,
    encoder: Encoder,
    plan: ReplayPlan,
    selection: SelectionConfig,
    settings: TrainSettings,
    *,
    method: str = METHOD_DYNAMIC,
    task_kind: str,
    cache: LogitCache | None = None,
    master_seed: int = 0,
) -> tuple[list[StepReport], DynamicState]:
    """Run the whole task sequence, evaluating cumulatively after each step."""
    if method not in DYNAMIC_METHODS:
        raise InvalidArgumentError(f"unknown dynamic method {method!r}")
    state = DynamicState()
    preprocessor = make_preprocessor(task_kind)
    reports: list[StepReport] = []
    run_settings = settings
    if method == METHOD_LIMITLESS:
        # The budget is removed: one pass per phase over all data seen so
        # far, so per-step cost grows with the cumulative volume.
        run_settings = replace(settings, max_epochs=None, early_stop=False)
    for k in range(1, sequence.num_tasks + 1):
        sel_cfg = selection
        if method == METHOD_WO_SEL:
            sel_cfg = replace(selection, num_active=k)
        plan_k = plan
        if method == METHOD_LIMITLESS:
            cumulative = sum(len(view) for view in sequence.cumulative_train(k))
            per_phase = max(1, math.ceil(cumulative / plan.batch_size))
            plan_k = replace(plan, iter1=per_phase, iter2=per_phase)
        calls_before = encoder.forward_calls
        hits_before = cache.hits if cache is not None else 0
        stats = train_task(
            state,
            encoder,
            sequence.train[k - 1],
            sequence.train[: k - 1],
            plan_k,
            sel_cfg,
            run_settings,
            sequence.clusters[k - 1].ordered_types(),
            cache=cache,
            master_seed=master_seed,
            preprocessor=preprocessor,
            valid_views=sequence.valid[:k] if run_settings.early_stop else None,
        )
        predictions: dict[str, str] = {}
        for view in sequence.cumulative_test(k):
            for ex in view:
                rec = predict(state, sel_cfg, encoder, preprocessor(ex), cache=cache)
                predictions[ex.id] = rec.label
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
                cache_hits=(cache.hits - hits_before) if cache is not None else 0,
                batches_selector=stats.batches_selector,
                batches_module=stats.batches_module,
                method=method,
            )
        )
    return reports, state
