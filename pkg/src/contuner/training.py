"""Training-loop settings shared by both engines."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .pet import PARAM_NAMES, PetModule


@dataclass(frozen=True)
class TrainSettings:
    """Hyper-parameters of the trainable modules and the loop around them.

    ``step_lr_overrides`` maps a step index to a learning rate, honoring
    schedules that adjust the rate for the first few steps only. When
    ``max_epochs`` is set, a phase stops at the earlier of its batch budget
    and that many passes over the new data; with ``early_stop`` the best
    epoch by validation average accuracy is kept.
    """

    learning_rate: float = 1e-2
    weight_decay: float = 0.01
    rank: int = 4
    step_lr_overrides: dict[int, float] = field(default_factory=dict)
    max_epochs: int | None = None
    early_stop: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0 or not np.isfinite(self.learning_rate):
            raise InvalidArgumentError("learning_rate must be positive and finite")
        if self.weight_decay < 0:
            raise InvalidArgumentError("weight_decay must be >= 0")
        if self.rank < 1:
            raise InvalidArgumentError("rank must be >= 1")

    def lr_for(self, step: int) -> float:
        return self.step_lr_overrides.get(step, self.learning_rate)


def snapshot_params(module: PetModule) -> dict[str, np.ndarray]:
    return {name: getattr(module, name).copy() for name in PARAM_NAMES}


def restore_params(module: PetModule, snapshot: dict[str, np.ndarray]) -> None:
    for name in PARAM_NAMES:
        target = getattr(module, name)
        target[...] = snapshot[name]
