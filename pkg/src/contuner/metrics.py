"""Whole and average accuracy, plus the per-step report record.

Whole accuracy pools all seen tasks' evaluation data; average accuracy is
the unweighted mean of per-task accuracies and is the forgetting-sensitive
of the two.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

from .data import Example
from .errors import InvalidArgumentError


def whole_accuracy(predictions: Mapping[str, str], examples: Iterable[Example]) -> float:
    """Fraction of examples whose prediction matches the gold label."""
    examples = list(examples)
    if not examples:
        raise InvalidArgumentError("no evaluation examples")
    correct = 0
    for ex in examples:
        if ex.id not in predictions:
            raise InvalidArgumentError(f"missing prediction for example {ex.id!r}")
        correct += predictions[ex.id] == ex.label
    return correct / len(examples)


def average_accuracy(per_task_acc: Iterable[float]) -> float:
    """Unweighted mean of per-task accuracies."""
    accs = list(per_task_acc)
    if not accs:
        raise InvalidArgumentError("no per-task accuracies")
    return sum(accs) / len(accs)


@dataclass(frozen=True)
class StepReport:
    step: int
    whole_acc: float
    avg_acc: float
    per_task_acc: tuple[float, ...]
    encoder_calls: int
    cache_hits: int
    batches_selector: int
    batches_module: int
    method: str

    def to_record(self) -> dict:
        """JSON-ready record; accuracies carry 4 decimal places."""
        return {
            "step": self.step,
            "whole_acc": round(self.whole_acc, 4),
            "avg_acc": round(self.avg_acc, 4),
            "per_task_acc": [round(a, 4) for a in self.per_task_acc],
            "encoder_calls": self.encoder_calls,
            "cache_hits": self.cache_hits,
            "batches_selector": self.batches_selector,
            "batches_module": self.batches_module,
            "method": self.method,
        }
