"""Corpus parsing, filtering, splitting, batching, and grouping."""

from __future__ import annotations

import json
from collections import Counter

import pytest
import torch

from metarec.corpus import (
    PAD_ID,
    Corpus,
    Example,
    InteractionSequence,
    ItemVocab,
    LengthRange,
    corpus_stats,
    group_by_length,
    load_corpus,
    make_batches,
    pad_row,
    parse_length_ranges,
    split_leave_one_out,
)

# ---------------------------------------------------------------------------
# Parsing and filtering


def test_load_corpus_assigns_dense_ids_in_first_seen_order(write_corpus):
    path = write_corpus(
        [
            "u1 z q z m",
            "u2 m q z q",
        ]
    )
    corpus = load_corpus(path, min_interactions=2)
    assert corpus.vocab.tokens == ("z", "q", "m")
    assert corpus.vocab.n_items == 3
    assert corpus.vocab.mask_id == 4
    assert corpus.vocab.pad_id == PAD_ID == 0
    assert [s.user_id for s in corpus.sequences] == ["u1", "u2"]
    assert corpus.sequences[0].items == (1, 2, 1, 3)
    assert corpus.sequences[1].items == (3, 2, 1, 2)


def test_vocab_token_lookup_round_trip():
    vocab = ItemVocab(tokens=("a", "b", "c"))
    assert [vocab.dense_id(t) for t in vocab.tokens] == [1, 2, 3]
    with pytest.raises(KeyError, match="unknown item token"):
        vocab.dense_id("nope")


def test_load_corpus_skips_blank_lines(write_corpus):
    path = write_corpus(["u1 a b", "", "   ", "u2 a b"])
    corpus = load_corpus(path, min_interactions=2)
    assert len(corpus.sequences) == 2


def test_load_corpus_malformed_line_reports_line_number(write_corpus):
    path = write_corpus(["u1 a b", "lonely"])
    with pytest.raises(ValueError, match=r":2: malformed line"):
        load_corpus(path, min_interactions=1)


def test_load_corpus_duplicate_user_reports_line_number(write_corpus):
    path = write_corpus(["u1 a b", "u2 a b", "u1 b a"])
    with pytest.raises(ValueError, match=r":3: duplicate user id 'u1'"):
        load_corpus(path, min_interactions=1)


def test_load_corpus_rejects_bad_min_interactions(write_corpus):
    path = write_corpus(["u1 a b"])
    with pytest.raises(ValueError, match="min_interactions"):
        load_corpus(path, min_interactions=0)


def test_min_count_filter_keeps_dense_block(write_corpus):
    # 5 users sharing the same 6 items: every item occurs 5 times and every
    # user keeps 6 interactions, so nothing is dropped at threshold 5.
    items = "a b c d e f"
    path = write_corpus([f"u{i} {items}" for i in range(5)])
    corpus = load_corpus(path, min_interactions=5)
    assert len(corpus.sequences) == 5
    assert corpus.vocab.n_items == 6
    assert all(len(s.items) == 6 for s in corpus.sequences)


def test_min_count_filter_iterates_to_fixpoint(write_corpus):
    # y occurs once -> dropped -> u3 falls to one item -> dropped -> x falls
    # to one occurrence -> dropped from u1.  A single pass would keep x.
    path = write_corpus(
        [
            "u1 a b x",
            "u2 a b",
            "u3 x y",
        ]
    )
    corpus = load_corpus(path, min_interactions=2)
    assert [s.user_id for s in corpus.sequences] == ["u1", "u2"]
    assert set(corpus.vocab.tokens) == {"a", "b"}
    assert corpus.sequences[0].items == (1, 2)
    assert corpus.sequences[1].items == (1, 2)


def test_min_count_filter_invariants_hold_after_load(write_corpus):
    lines = [
        "u1 a b c a",
        "u2 b c d",
        "u3 a c e",
        "u4 e f",
        "u5 f g h",
    ]
    path = write_corpus(lines)
    corpus = load_corpus(path, min_interactions=2)
    counts = Counter(i for s in corpus.sequences for i in s.items)
    assert all(c >= 2 for c in counts.values())
    assert all(len(s.items) >= 2 for s in corpus.sequences)
    assert set(counts) == set(range(1, corpus.vocab.n_items + 1))


def test_min_count_filter_can_empty_the_corpus(write_corpus):
    path = write_corpus(["u1 a b c", "u2 a b c", "u3 a b d"])
    with pytest.raises(ValueError, match="empty after min-count filtering"):
        load_corpus(path, min_interactions=3)


def test_missing_file_raises():
    with pytest.raises(FileNotFoundError):
        load_corpus("/nonexistent/corpus.txt")


# ---------------------------------------------------------------------------
# Leave-one-out split


def _seq(user: str, items: list[int]) -> InteractionSequence:
    return InteractionSequence(user_id=user, items=tuple(items))


def test_split_five_item_sequence():
    split = split_leave_one_out([_seq("u", [11, 12, 13, 14, 15])])
    assert split.train_sequences[0].items == (11, 12, 13)
    assert split.train[0] == Example("u", (11, 12), 13)
    assert split.valid[0] == Example("u", (11, 12, 13), 14)
    assert split.test[0] == Example("u", (11, 12, 13, 14), 15)


def test_split_minimum_length_three():
    split = split_leave_one_out([_seq("u", [7, 8, 9])])
    assert split.train_sequences[0].items == (7,)
    assert split.train[0] == Example("u", (), 7)
    assert split.valid[0] == Example("u", (7,), 8)
    assert split.test[0] == Example("u", (7, 8), 9)


def test_split_rejects_short_sequences():
    with pytest.raises(ValueError, match="user 'shorty'"):
        split_leave_one_out([_seq("ok", [1, 2, 3]), _seq("shorty", [1, 2])])


def test_split_reconstructs_original_sequences(small_corpus: Corpus):
    split = split_leave_one_out(small_corpus)
    for seq, tr_seq, tr, va, te in zip(
        small_corpus.sequences,
        split.train_sequences,
        split.train,
        split.valid,
        split.test,
    ):
        assert te.inputs + (te.target,) == seq.items
        assert va.inputs + (va.target,) == seq.items[:-1]
        assert tr.inputs + (tr.target,) == seq.items[:-2]
        assert tr_seq.items == seq.items[:-2]
        assert seq.user_id == tr.user_id == va.user_id == te.user_id


def test_split_accepts_corpus_and_sequence_list(small_corpus: Corpus):
    a = split_leave_one_out(small_corpus)
    b = split_leave_one_out(small_corpus.sequences)
    assert a == b


# ---------------------------------------------------------------------------
# Padding and batching


def test_pad_row_left_pads_short_rows():
    assert pad_row([1, 2], 5) == ([0, 0, 0, 1, 2], 2)


def test_pad_row_keeps_most_recent_items():
    assert pad_row([1, 2, 3, 4, 5, 6, 7], 4) == ([4, 5, 6, 7], 4)


def test_pad_row_empty_input():
    assert pad_row([], 3) == ([0, 0, 0], 0)


def test_make_batches_preserves_order_without_seed():
    examples = [Example(f"u{i}", (i, i + 1), i + 2) for i in range(7)]
    batches = make_batches(examples, batch_size=3, n=4)
    assert [len(b) for b in batches] == [3, 3, 1]
    flat_users = [u for b in batches for u in b.user_ids]
    assert flat_users == [f"u{i}" for i in range(7)]
    first = batches[0]
    assert first.ids.shape == (3, 4)
    assert first.ids[0].tolist() == [0, 0, 0, 1]
    assert first.lengths.tolist() == [2, 2, 2]
    assert first.targets.tolist() == [2, 3, 4]
    assert first.ids.dtype == torch.long


def test_make_batches_shuffle_is_deterministic():
    examples = [Example(f"u{i}", (i + 1,), i + 2) for i in range(40)]
    a = make_batches(examples, batch_size=8, n=3, shuffle_seed=123)
    b = make_batches(examples, batch_size=8, n=3, shuffle_seed=123)
    c = make_batches(examples, batch_size=8, n=3, shuffle_seed=124)
    users_a = [u for batch in a for u in batch.user_ids]
    users_b = [u for batch in b for u in batch.user_ids]
    users_c = [u for batch in c for u in batch.user_ids]
    assert users_a == users_b
    assert users_a != users_c
    assert sorted(users_a) == sorted(users_c)


def test_make_batches_batch_contents_align_with_examples():
    examples = [Example("a", (5, 6, 7), 8), Example("b", (), 4)]
    (batch,) = make_batches(examples, batch_size=4, n=5)
    assert batch.ids.tolist() == [[0, 0, 5, 6, 7], [0, 0, 0, 0, 0]]
    assert batch.lengths.tolist() == [3, 0]
    assert batch.targets.tolist() == [8, 4]
    assert batch.user_ids == ("a", "b")


def test_make_batches_rejects_bad_batch_size():
    with pytest.raises(ValueError, match="batch_size"):
        make_batches([], batch_size=0, n=3)


# ---------------------------------------------------------------------------
# Length ranges and groups


def test_parse_length_ranges_round_trip():
    ranges = parse_length_ranges("=5,6-8,>8")
    assert ranges == (LengthRange(5, 5), LengthRange(6, 8), LengthRange(9, None))
    assert [r.label() for r in ranges] == ["=5", "6-8", ">8"]


def test_length_range_contains_boundaries():
    eq5, mid, tail = parse_length_ranges("=5,6-8,>8")
    assert eq5.contains(5) and not eq5.contains(4) and not eq5.contains(6)
    assert mid.contains(6) and mid.contains(8)
    assert not mid.contains(5) and not mid.contains(9)
    assert tail.contains(9) and tail.contains(1000) and not tail.contains(8)


def test_parse_length_ranges_rejects_overlap():
    with pytest.raises(ValueError, match="overlap"):
        parse_length_ranges("=5,5-6")
    with pytest.raises(ValueError, match="overlap"):
        parse_length_ranges(">5,>8")


def test_parse_length_ranges_rejects_garbage():
    with pytest.raises(ValueError, match="cannot parse"):
        parse_length_ranges("abc")
    with pytest.raises(ValueError, match="empty length range"):
        parse_length_ranges("8-6")


def test_group_by_length_partitions_users():
    seqs = [
        _seq("a", [1] * 5),
        _seq("b", [1] * 6),
        _seq("c", [1] * 8),
        _seq("d", [1] * 20),
    ]
    ranges = parse_length_ranges("=5,6-8,>8")
    groups = group_by_length(seqs, ranges)
    assert [s.user_id for s in groups[ranges[0]]] == ["a"]
    assert [s.user_id for s in groups[ranges[1]]] == ["b", "c"]
    assert [s.user_id for s in groups[ranges[2]]] == ["d"]
    total = sum(len(v) for v in groups.values())
    assert total == len(seqs)


def test_group_by_length_uncovered_length_errors():
    ranges = parse_length_ranges("=5,>8")
    with pytest.raises(ValueError, match="not covered"):
        group_by_length([_seq("u", [1] * 6)], ranges)


# ---------------------------------------------------------------------------
# Stats


def test_corpus_stats_hand_example():
    corpus = Corpus(
        sequences=(_seq("u1", [1, 2, 3]), _seq("u2", [2, 3, 1, 2])),
        vocab=ItemVocab(tokens=("a", "b", "c")),
    )
    stats = corpus_stats(corpus)
    assert stats.users == 2
    assert stats.items == 3
    assert stats.actions == 7
    assert stats.avg_length == pytest.approx(3.5)
    assert stats.sparsity == pytest.approx(1.0 - 7 / 6)


def test_corpus_stats_json_fields():
    corpus = Corpus(
        sequences=(_seq("u1", [1, 2, 3, 1]),),
        vocab=ItemVocab(tokens=("a", "b", "c")),
    )
    payload = json.loads(corpus_stats(corpus).to_json())
    assert payload["users"] == 1
    assert payload["items"] == 3
    assert payload["actions"] == 4
    assert payload["sparsity_pct"].endswith("%")
