"""Shared builders and fixtures."""

from __future__ import annotations

import numpy as np
import pytest

from contuner.data import Example, PreprocessedInput, build_task_sequence
from contuner.dynamic import SelectionConfig, run_sequence
from contuner.encoder import Encoder, EncoderConfig
from contuner.replay import ReplayPlan
from contuner.synth import make_separable_corpus
from contuner.training import TrainSettings

SMALL_ENCODER = dict(feature_dim=256, hidden_dim=32, seed=9)


def small_encoder(**overrides) -> Encoder:
    params = {**SMALL_ENCODER, **overrides}
    return Encoder(EncoderConfig(**params))


def typing_example(
    id="e1",
    text=("Paris", "is", "big"),
    head_span=(0, 1),
    label="city",
    task_index=None,
) -> Example:
    return Example(
        id=id,
        text=tuple(text),
        head_span=head_span,
        tail_span=None,
        label=label,
        task_index=task_index,
    )


def random_inputs(n: int, seed: int = 0, vocab: int = 50) -> list[PreprocessedInput]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        length = int(rng.integers(2, 9))
        tokens = tuple(f"w{int(t)}" for t in rng.integers(0, vocab, size=length))
        out.append(PreprocessedInput(marked_text=tokens, example_id=f"rand{i:04d}"))
    return out


def separable_sequence(
    num_tasks=4, types_per_task=3, per_type=20, seed=7, split_seed=11, **synth_kwargs
):
    examples, clusters = make_separable_corpus(
        num_tasks, types_per_task, per_type, seed=seed, **synth_kwargs
    )
    return build_task_sequence(examples, clusters, (0.8, 0.1, 0.1), seed=split_seed)


def default_plan(**overrides) -> ReplayPlan:
    params = dict(batch_size=8, old_new_ratio=(1, 1), iter1=40, iter2=40, seed=5)
    params.update(overrides)
    return ReplayPlan(**params)


def default_settings(**overrides) -> TrainSettings:
    params = dict(learning_rate=0.05, weight_decay=0.01, rank=4)
    params.update(overrides)
    return TrainSettings(**params)


@pytest.fixture(scope="session")
def trained_dynamic():
    """A 4-task dynamic run shared by read-only tests: (reports, state, encoder, seq)."""
    seq = separable_sequence()
    encoder = small_encoder()
    reports, state = run_sequence(
        seq,
        encoder,
        default_plan(),
        SelectionConfig(num_active=1),
        default_settings(),
        method="dynamic",
        task_kind="entity-typing",
        master_seed=1,
    )
    return reports, state, encoder, seq
