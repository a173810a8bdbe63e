"""Examples, schema clusters, task sequences, corpus ingestion and marker
preprocessing.

All types here are immutable after construction and safe to share across
threads; the operations are pure functions of their inputs (and a seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import InvalidArgumentError, ParseError, ValidationError

ENTITY_TYPING = "entity-typing"
RELATION_EXTRACTION = "relation-extraction"
TASK_KINDS = (ENTITY_TYPING, RELATION_EXTRACTION)

HEAD_OPEN, HEAD_CLOSE = "[E1]", "[/E1]"
TAIL_OPEN, TAIL_CLOSE = "[E2]", "[/E2]"
MARKER_TOKENS = frozenset({HEAD_OPEN, HEAD_CLOSE, TAIL_OPEN, TAIL_CLOSE})

TYPING_TEMPLATE = "In this sentence, {entity} is a [MASK]."
RELATION_TEMPLATE = "In this sentence, {tail} is the [MASK] of {head}."


@dataclass(frozen=True)
class Example:
    """One labeled instance. Spans are half-open token index ranges."""

    id: str
    text: tuple[str, ...]
    head_span: tuple[int, int]
    tail_span: tuple[int, int] | None
    label: str
    task_index: int | None = None

    def __post_init__(self):
        if not self.text:
            raise InvalidArgumentError(f"example {self.id!r}: empty text")
        self._check_span(self.head_span, "head_span")
        if self.tail_span is not None:
            self._check_span(self.tail_span, "tail_span")

    def _check_span(self, span: tuple[int, int], name: str) -> None:
        lo, hi = span
        if not (0 <= lo < hi <= len(self.text)):
            raise InvalidArgumentError(
                f"example {self.id!r}: {name} {span} outside text of "
                f"length {len(self.text)}"
            )


@dataclass(frozen=True)
class SchemaCluster:
    """One task's disjoint set of schema types."""

    index: int
    types: frozenset[str]

    def ordered_types(self) -> tuple[str, ...]:
        """Deterministic class ordering used everywhere downstream."""
        return tuple(sorted(self.types))


@dataclass(frozen=True)
class PreprocessedInput:
    """Marked token sequence with the prompt template appended at the end.

    ``example_id`` keeps the provenance needed for logit caching.
    """

    marked_text: tuple[str, ...]
    example_id: str | None = None


@dataclass(frozen=True)
class TaskSequence:
    """Ordered schema clusters plus per-task train/valid/test partitions."""

    clusters: tuple[SchemaCluster, ...]
    train: tuple[tuple[Example, ...], ...]
    valid: tuple[tuple[Example, ...], ...]
    test: tuple[tuple[Example, ...], ...]

    def __post_init__(self):
        seen: set[str] = set()
        for cluster in self.clusters:
            if cluster.types & seen:
                raise ValidationError(
                    f"cluster {cluster.index} overlaps earlier clusters"
                )
            seen |= cluster.types
        by_index = {c.index: c for c in self.clusters}
        for part in (self.train, self.valid, self.test):
            if len(part) != len(self.clusters):
                raise ValidationError("partition length differs from cluster count")
            for task_no, examples in enumerate(part, start=1):
                for ex in examples:
                    if ex.task_index != task_no:
                        raise ValidationError(
                            f"example {ex.id!r} filed under task {task_no} "
                            f"but has task_index {ex.task_index}"
                        )
                    if ex.label not in by_index[task_no].types:
                        raise ValidationError(
                            f"example {ex.id!r} label {ex.label!r} not in "
                            f"cluster {task_no}"
                        )

    @property
    def num_tasks(self) -> int:
        return len(self.clusters)

    def label_set(self) -> frozenset[str]:
        out: set[str] = set()
        for cluster in self.clusters:
            out |= cluster.types
        return frozenset(out)

    # Cumulative views share the underlying per-task tuples; nothing is copied.
    def cumulative_train(self, k: int) -> tuple[tuple[Example, ...], ...]:
        return self.train[:k]

    def cumulative_test(self, k: int) -> tuple[tuple[Example, ...], ...]:
        return self.test[:k]


def flatten(views: Iterable[Sequence[Example]]) -> list[Example]:
    """Flatten per-task views into one list of references."""
    out: list[Example] = []
    for view in views:
        out.extend(view)
    return out


# ---------------------------------------------------------------------------
# corpus ingestion


def _parse_span(value, field: str, line_no: int) -> tuple[int, int]:
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 2
        or not all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    ):
        raise ParseError(line_no, f"field {field!r} must be a pair of integers")
    return (value[0], value[1])


def _load_jsonl(path) -> list[Example]:
    examples: list[Example] = []
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(line_no, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(record, dict):
                raise ParseError(line_no, "record is not an object")
            for field in ("id", "text", "head_span", "label"):
                if field not in record:
                    raise ParseError(line_no, f"missing field {field!r}")
            rec_id = record["id"]
            if not isinstance(rec_id, str) or not rec_id:
                raise ParseError(line_no, "field 'id' must be a non-empty string")
            if rec_id in seen_ids:
                raise ValidationError(f"duplicate example id {rec_id!r} at line {line_no}")
            seen_ids.add(rec_id)
            text = record["text"]
            if not isinstance(text, str) or not text.split():
                raise ParseError(line_no, "field 'text' must be a non-empty string")
            label = record["label"]
            if not isinstance(label, str) or not label:
                raise ParseError(line_no, "field 'label' must be a non-empty string")
            head_span = _parse_span(record["head_span"], "head_span", line_no)
            tail_raw = record.get("tail_span")
            tail_span = None
            if tail_raw is not None:
                tail_span = _parse_span(tail_raw, "tail_span", line_no)
            try:
                examples.append(
                    Example(
                        id=rec_id,
                        text=tuple(text.split()),
                        head_span=head_span,
                        tail_span=tail_span,
                        label=label,
                    )
                )
            except InvalidArgumentError as exc:
                raise ParseError(line_no, str(exc)) from exc
    return examples


CORPUS_LOADERS: dict[str, Callable[..., list[Example]]] = {
    "jsonl": _load_jsonl,
}


def load_corpus(path, format: str = "jsonl") -> list[Example]:
    """Load a corpus file through the loader registered for ``format``."""
    loader = CORPUS_LOADERS.get(format)
    if loader is None:
        raise InvalidArgumentError(
            f"unknown corpus format {format!r}; known: {sorted(CORPUS_LOADERS)}"
        )
    return loader(path)


def write_corpus_jsonl(examples: Iterable[Example], path) -> None:
    """Serialize examples to the line-delimited corpus format."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            record = {
                "id": ex.id,
                "text": " ".join(ex.text),
                "head_span": list(ex.head_span),
                "label": ex.label,
            }
            if ex.tail_span is not None:
                record["tail_span"] = list(ex.tail_span)
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# task splitting


def split_tasks(labels: Iterable[str], num_clusters: int, seed: int) -> list[SchemaCluster]:
    """Partition the label set into near-equal clusters: seeded shuffle
    followed by round-robin assignment, so sizes differ by at most one."""
    ordered = sorted(set(labels))
    if num_clusters < 1:
        raise InvalidArgumentError("num_clusters must be >= 1")
    if num_clusters > len(ordered):
        raise InvalidArgumentError(
            f"num_clusters {num_clusters} exceeds label count {len(ordered)}"
        )
    rng = np.random.default_rng(seed)
    shuffled = list(ordered)
    rng.shuffle(shuffled)
    return [
        SchemaCluster(index=i + 1, types=frozenset(shuffled[i::num_clusters]))
        for i in range(num_clusters)
    ]


def load_task_split(path) -> list[SchemaCluster]:
    """Load an explicit task-split file: a JSON object mapping task index
    (as a string) to the list of type ids owned by that task."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict) or not raw:
        raise ValidationError("task-split file must be a non-empty JSON object")
    try:
        indices = sorted(int(k) for k in raw)
    except ValueError as exc:
        raise ValidationError(f"task-split keys must be integers: {exc}") from exc
    if indices != list(range(1, len(indices) + 1)):
        raise ValidationError("task indices must be contiguous and start at 1")
    clusters: list[SchemaCluster] = []
    seen: set[str] = set()
    for index in indices:
        types = raw[str(index)]
        if not isinstance(types, list) or not types:
            raise ValidationError(f"task {index} must map to a non-empty list")
        type_set = frozenset(types)
        if len(type_set) != len(types):
            raise ValidationError(f"task {index} lists a type twice")
        if type_set & seen:
            raise ValidationError(f"task {index} overlaps an earlier task")
        seen |= type_set
        clusters.append(SchemaCluster(index=index, types=type_set))
    return clusters


def write_task_split(clusters: Iterable[SchemaCluster], path) -> None:
    payload = {str(c.index): sorted(c.types) for c in clusters}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def assign_task_indices(
    examples: Iterable[Example], clusters: Sequence[SchemaCluster]
) -> list[Example]:
    """Stamp each example with the index of the cluster owning its label."""
    owner: dict[str, int] = {}
    for cluster in clusters:
        for label in cluster.types:
            if label in owner:
                raise ValidationError(f"label {label!r} appears in two clusters")
            owner[label] = cluster.index
    out = []
    for ex in examples:
        task = owner.get(ex.label)
        if task is None:
            raise ValidationError(f"example {ex.id!r}: label {ex.label!r} not in any cluster")
        out.append(replace(ex, task_index=task))
    return out


def _largest_remainder_counts(n: int, ratios: Sequence[float]) -> list[int]:
    # Exact targets rounded so the counts sum to n; the leftover goes to the
    # largest fractional part, ties resolved toward the earlier split.
    exact = [n * r for r in ratios]
    base = [math.floor(e) for e in exact]
    leftover = n - sum(base)
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[:leftover]:
        base[i] += 1
    return base


def split_examples(
    examples: Sequence[Example],
    ratios: Sequence[float],
    seed: int,
) -> tuple[tuple[tuple[Example, ...], ...], ...]:
    """Partition each task's examples into train/valid/test.

    Returns (train, valid, test), each a tuple of per-task example tuples.
    Every example must already carry a task_index. The partition is
    exhaustive and disjoint, with per-task sizes within one example of the
    exact ratio targets.
    """
    if not examples:
        raise InvalidArgumentError("cannot split an empty example list")
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise InvalidArgumentError("ratios must be three positive numbers")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidArgumentError("ratios must sum to 1")
    by_task: dict[int, list[Example]] = {}
    for ex in examples:
        if ex.task_index is None:
            raise InvalidArgumentError(f"example {ex.id!r} has no task_index")
        by_task.setdefault(ex.task_index, []).append(ex)
    rng = np.random.default_rng(seed)
    train: list[tuple[Example, ...]] = []
    valid: list[tuple[Example, ...]] = []
    test: list[tuple[Example, ...]] = []
    for task in sorted(by_task):
        pool = list(by_task[task])
        order = rng.permutation(len(pool))
        shuffled = [pool[i] for i in order]
        n_train, n_valid, n_test = _largest_remainder_counts(len(pool), ratios)
        train.append(tuple(shuffled[:n_train]))
        valid.append(tuple(shuffled[n_train : n_train + n_valid]))
        test.append(tuple(shuffled[n_train + n_valid :]))
        assert n_train + n_valid + n_test == len(pool)
    return tuple(train), tuple(valid), tuple(test)


def build_task_sequence(
    examples: Sequence[Example],
    clusters: Sequence[SchemaCluster],
    ratios: Sequence[float],
    seed: int,
) -> TaskSequence:
    """Assign task indices and split into a full TaskSequence."""
    assigned = assign_task_indices(examples, clusters)
    covered = {ex.label for ex in assigned}
    for cluster in clusters:
        missing = cluster.types - covered
        if missing:
            raise ValidationError(
                f"cluster {cluster.index} types {sorted(missing)} have no examples"
            )
    train, valid, test = split_examples(assigned, ratios, seed)
    return TaskSequence(
        clusters=tuple(clusters), train=train, valid=valid, test=test
    )


# ---------------------------------------------------------------------------
# marker/prompt preprocessing


def preprocess(example: Example, task_kind: str) -> PreprocessedInput:
    """Insert entity markers around the spans and append the prompt template.

    Entity typing marks the head span only; relation extraction marks head
    and tail. Original tokens are untouched apart from marker insertion, so
    the raw text is recoverable by stripping markers and the template.
    """
    if task_kind not in TASK_KINDS:
        raise InvalidArgumentError(f"unknown task kind {task_kind!r}")
    if task_kind == RELATION_EXTRACTION and example.tail_span is None:
        raise InvalidArgumentError(
            f"example {example.id!r}: relation extraction requires a tail span"
        )
    if task_kind == ENTITY_TYPING and example.tail_span is not None:
        raise InvalidArgumentError(
            f"example {example.id!r}: entity typing must not carry a tail span"
        )

    head_text = " ".join(example.text[example.head_span[0] : example.head_span[1]])
    # Insertion events: (position, opener?, marker). Closers sort before
    # openers at the same position so adjacent spans never nest.
    events = [
        (example.head_span[0], 1, HEAD_OPEN),
        (example.head_span[1], 0, HEAD_CLOSE),
    ]
    if example.tail_span is not None:
        events.append((example.tail_span[0], 1, TAIL_OPEN))
        events.append((example.tail_span[1], 0, TAIL_CLOSE))
    events.sort(key=lambda e: (e[0], e[1]))

    marked: list[str] = []
    cursor = 0
    for pos, _, marker in events:
        marked.extend(example.text[cursor:pos])
        marked.append(marker)
        cursor = pos
    marked.extend(example.text[cursor:])

    if task_kind == ENTITY_TYPING:
        template = TYPING_TEMPLATE.format(entity=head_text)
    else:
        tail_text = " ".join(
            example.text[example.tail_span[0] : example.tail_span[1]]
        )
        template = RELATION_TEMPLATE.format(tail=tail_text, head=head_text)
    marked.extend(template.split(" "))
    return PreprocessedInput(marked_text=tuple(marked), example_id=example.id)


def make_preprocessor(task_kind: str) -> Callable[[Example], PreprocessedInput]:
    """Memoizing preprocessor; preprocess is pure so one result per id suffices."""
    memo: dict[str, PreprocessedInput] = {}

    def prep(example: Example) -> PreprocessedInput:
        got = memo.get(example.id)
        if got is None:
            got = preprocess(example, task_kind)
            memo[example.id] = got
        return got

    return prep


def truncate_example(example: Example, max_tokens: int) -> Example:
    """Cap the token length, never cutting into a span."""
    if max_tokens < 1:
        raise InvalidArgumentError("max_tokens must be >= 1")
    cut = max(max_tokens, example.head_span[1])
    if example.tail_span is not None:
        cut = max(cut, example.tail_span[1])
    if len(example.text) <= cut:
        return example
    return replace(example, text=example.text[:cut])
