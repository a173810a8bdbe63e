import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contuner.data import (
    MARKER_TOKENS,
    Example,
    assign_task_indices,
    build_task_sequence,
    load_corpus,
    load_task_split,
    preprocess,
    split_examples,
    split_tasks,
    truncate_example,
    write_task_split,
)
from contuner.errors import InvalidArgumentError, ParseError, ValidationError

from conftest import typing_example


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def record(id, text="a b c", head=(0, 1), label="x", tail=None):
    rec = {"id": id, "text": text, "head_span": list(head), "label": label}
    if tail is not None:
        rec["tail_span"] = list(tail)
    return json.dumps(rec)


class TestLoadCorpus:
    def test_three_valid_records_in_file_order(self, tmp_path):
        path = tmp_path / "c.jsonl"
        write_lines(path, [record("a"), record("b"), record("c")])
        examples = load_corpus(path)
        assert [ex.id for ex in examples] == ["a", "b", "c"]
        assert examples[0].text == ("a", "b", "c")

    def test_missing_label_names_line(self, tmp_path):
        path = tmp_path / "c.jsonl"
        bad = json.dumps({"id": "b", "text": "a", "head_span": [0, 1]})
        write_lines(path, [record("a"), bad])
        with pytest.raises(ParseError, match="line 2"):
            load_corpus(path)

    def test_invalid_json_names_line(self, tmp_path):
        path = tmp_path / "c.jsonl"
        write_lines(path, [record("a"), "{not json"])
        with pytest.raises(ParseError, match="line 2"):
            load_corpus(path)

    def test_duplicate_id_is_validation_error(self, tmp_path):
        path = tmp_path / "c.jsonl"
        write_lines(path, [record("a"), record("a")])
        with pytest.raises(ValidationError, match="duplicate"):
            load_corpus(path)

    def test_span_out_of_bounds_names_line(self, tmp_path):
        path = tmp_path / "c.jsonl"
        write_lines(path, [record("a", text="a b", head=(0, 5))])
        with pytest.raises(ParseError, match="line 1"):
            load_corpus(path)

    def test_unknown_format_rejected(self, tmp_path):
        path = tmp_path / "c.jsonl"
        write_lines(path, [record("a")])
        with pytest.raises(InvalidArgumentError, match="format"):
            load_corpus(path, format="parquet")

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text(record("a") + "\n\n" + record("b") + "\n")
        assert len(load_corpus(path)) == 2


@pytest.mark.slow
def test_large_corpus_roundtrip(tmp_path):
    # Scale check: a corpus of 486,044 records over 66 labels loads fully.
    path = tmp_path / "big.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(486_044):
            fh.write(
                '{"id": "r%d", "text": "t%d x", "head_span": [0, 1], '
                '"label": "L%d"}\n' % (i, i % 97, i % 66)
            )
    examples = load_corpus(path)
    assert len(examples) == 486_044
    assert len({ex.label for ex in examples}) == 66


class TestSplitTasks:
    def test_66_labels_10_clusters(self):
        labels = {f"L{i}" for i in range(66)}
        clusters = split_tasks(labels, 10, seed=3)
        sizes = sorted(len(c.types) for c in clusters)
        assert len(clusters) == 10
        assert set(sizes) <= {6, 7}
        union = set()
        for c in clusters:
            assert not (c.types & union)
            union |= c.types
        assert union == labels

    def test_18_labels_5_clusters_covers_all(self):
        labels = {f"R{i}" for i in range(18)}
        clusters = split_tasks(labels, 5, seed=0)
        assert len(clusters) == 5
        assert set().union(*(c.types for c in clusters)) == labels

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_four_labels_four_clusters_singletons(self, seed):
        clusters = split_tasks({"a", "b", "c", "d"}, 4, seed=seed)
        assert sorted(len(c.types) for c in clusters) == [1, 1, 1, 1]

    def test_too_many_clusters_rejected(self):
        with pytest.raises(InvalidArgumentError):
            split_tasks({"a", "b"}, 3, seed=0)
        with pytest.raises(InvalidArgumentError):
            split_tasks({"a"}, 0, seed=0)

    def test_deterministic_given_seed(self):
        labels = {f"L{i}" for i in range(23)}
        assert split_tasks(labels, 4, seed=9) == split_tasks(labels, 4, seed=9)

    @given(
        n_labels=st.integers(1, 40),
        n_clusters=st.integers(1, 40),
        seed=st.integers(0, 2**31),
    )
    @settings(max_examples=60, deadline=None)
    def test_partition_properties(self, n_labels, n_clusters, seed):
        if n_clusters > n_labels:
            return
        labels = {f"L{i}" for i in range(n_labels)}
        clusters = split_tasks(labels, n_clusters, seed)
        sizes = [len(c.types) for c in clusters]
        assert max(sizes) - min(sizes) <= 1
        assert sum(sizes) == n_labels
        assert set().union(*(c.types for c in clusters)) == labels


def make_labeled(n, label="x", task=1):
    return [
        typing_example(id=f"ex{i}", text=("tok", str(i)), label=label, task_index=task)
        for i in range(n)
    ]


class TestSplitExamples:
    def test_100_at_8_1_1(self):
        train, valid, test = split_examples(make_labeled(100), (0.8, 0.1, 0.1), seed=1)
        assert (len(train[0]), len(valid[0]), len(test[0])) == (80, 10, 10)

    def test_single_example_lands_in_train(self):
        train, valid, test = split_examples(make_labeled(1), (0.8, 0.1, 0.1), seed=1)
        assert len(train[0]) == 1 and not valid[0] and not test[0]

    def test_two_seeds_give_distinct_valid_partitions(self):
        examples = make_labeled(10_000)
        parts_a = split_examples(examples, (0.8, 0.1, 0.1), seed=1)
        parts_b = split_examples(examples, (0.8, 0.1, 0.1), seed=2)
        sig_a = tuple(tuple(ex.id for ex in view) for part in parts_a for view in part)
        sig_b = tuple(tuple(ex.id for ex in view) for part in parts_b for view in part)
        assert sig_a != sig_b
        for parts in (parts_a, parts_b):
            ids = [ex.id for part in parts for view in part for ex in view]
            assert len(ids) == 10_000 and len(set(ids)) == 10_000

    def test_rejects_bad_input(self):
        with pytest.raises(InvalidArgumentError):
            split_examples([], (0.8, 0.1, 0.1), seed=1)
        with pytest.raises(InvalidArgumentError):
            split_examples(make_labeled(5), (0.8, 0.1, 0.2), seed=1)
        with pytest.raises(InvalidArgumentError):
            split_examples(make_labeled(5), (1.0, -0.1, 0.1), seed=1)

    @given(n=st.integers(1, 120), seed=st.integers(0, 2**31))
    @settings(max_examples=40, deadline=None)
    def test_partition_exhaustive_and_near_exact(self, n, seed):
        train, valid, test = split_examples(make_labeled(n), (0.8, 0.1, 0.1), seed=seed)
        sizes = (len(train[0]), len(valid[0]), len(test[0]))
        assert sum(sizes) == n
        for size, ratio in zip(sizes, (0.8, 0.1, 0.1)):
            assert abs(size - n * ratio) < 1.0 + 1e-9

    def test_deterministic(self):
        examples = make_labeled(50)
        a = split_examples(examples, (0.8, 0.1, 0.1), seed=4)
        b = split_examples(examples, (0.8, 0.1, 0.1), seed=4)
        assert a == b


class TestPreprocess:
    def test_typing_markers_and_template(self):
        ex = typing_example(text=("Paris", "is", "big"), head_span=(0, 1), label="city")
        out = preprocess(ex, "entity-typing")
        assert " ".join(out.marked_text) == (
            "[E1] Paris [/E1] is big In this sentence, Paris is a [MASK]."
        )
        assert out.example_id == ex.id

    def test_relation_markers_and_template(self):
        ex = Example(
            id="r1",
            text=("A", "employs", "B"),
            head_span=(0, 1),
            tail_span=(2, 3),
            label="employer",
        )
        out = preprocess(ex, "relation-extraction")
        joined = " ".join(out.marked_text)
        assert "[E1] A [/E1]" in joined and "[E2] B [/E2]" in joined
        assert joined.endswith("In this sentence, B is the [MASK] of A.")

    def test_whole_text_span(self):
        ex = typing_example(text=("Rome",), head_span=(0, 1), label="city")
        out = preprocess(ex, "entity-typing")
        assert out.marked_text[:3] == ("[E1]", "Rome", "[/E1]")
        assert out.marked_text[-1] == "[MASK]."

    def test_kind_span_mismatch_rejected(self):
        ex = typing_example()
        with pytest.raises(InvalidArgumentError):
            preprocess(ex, "relation-extraction")
        rel = Example(
            id="r", text=("a", "b"), head_span=(0, 1), tail_span=(1, 2), label="x"
        )
        with pytest.raises(InvalidArgumentError):
            preprocess(rel, "entity-typing")
        with pytest.raises(InvalidArgumentError):
            preprocess(ex, "span-labeling")

    @given(
        n_tokens=st.integers(1, 12),
        start=st.integers(0, 11),
        length=st.integers(1, 12),
        seed=st.integers(0, 1000),
    )
    @settings(max_examples=60, deadline=None)
    def test_original_text_recoverable(self, n_tokens, start, length, seed):
        if start + length > n_tokens:
            return
        text = tuple(f"t{(seed + i) % 7}" for i in range(n_tokens))
        ex = typing_example(text=text, head_span=(start, start + length))
        out = preprocess(ex, "entity-typing")
        body = out.marked_text[: n_tokens + 2]  # markers add two tokens
        recovered = tuple(t for t in body if t not in MARKER_TOKENS)
        assert recovered == text


class TestTaskAssignmentAndSequence:
    def test_assign_task_indices(self):
        clusters = split_tasks({"a", "b", "c", "d"}, 2, seed=0)
        examples = [typing_example(id=f"e{i}", label=lab) for i, lab in enumerate("abcd")]
        assigned = assign_task_indices(examples, clusters)
        owner = {lab: c.index for c in clusters for lab in c.types}
        assert all(ex.task_index == owner[ex.label] for ex in assigned)

    def test_unknown_label_rejected(self):
        clusters = split_tasks({"a"}, 1, seed=0)
        with pytest.raises(ValidationError):
            assign_task_indices([typing_example(label="zz")], clusters)

    def test_sequence_checks_membership(self):
        seq_examples = [
            typing_example(id=f"e{i}", label="a", task_index=1) for i in range(10)
        ]
        clusters = split_tasks({"a"}, 1, seed=0)
        seq = build_task_sequence(seq_examples, clusters, (0.8, 0.1, 0.1), seed=3)
        assert seq.num_tasks == 1
        assert seq.label_set() == {"a"}
        # cumulative views share the per-task tuples, not copies
        assert seq.cumulative_train(1)[0] is seq.train[0]

    def test_sequence_rejects_cluster_without_examples(self):
        clusters = split_tasks({"a", "b"}, 2, seed=0)
        examples = [typing_example(id="e0", label="a")]
        with pytest.raises(ValidationError):
            build_task_sequence(examples, clusters, (0.8, 0.1, 0.1), seed=3)


class TestTaskSplitFile:
    def test_roundtrip(self, tmp_path):
        clusters = split_tasks({f"L{i}" for i in range(7)}, 3, seed=1)
        path = tmp_path / "split.json"
        write_task_split(clusters, path)
        loaded = load_task_split(path)
        assert loaded == sorted(clusters, key=lambda c: c.index)

    def test_rejects_overlap_and_gaps(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"1": ["a"], "3": ["b"]}')
        with pytest.raises(ValidationError):
            load_task_split(path)
        path.write_text('{"1": ["a"], "2": ["a"]}')
        with pytest.raises(ValidationError):
            load_task_split(path)


def test_truncate_example_keeps_spans():
    ex = typing_example(text=tuple(f"t{i}" for i in range(10)), head_span=(6, 8))
    cut = truncate_example(ex, 4)
    assert len(cut.text) == 8  # span end wins over the cap
    assert cut.head_span == (6, 8)
    assert truncate_example(ex, 12) is ex
    short = truncate_example(typing_example(text=("a", "b", "c")), 2)
    assert short.text == ("a", "b")
