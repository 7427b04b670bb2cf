"""Scoring tests.

The alignment oracle enumerates every alignment of the pair exhaustively and
applies the tie rule as a global criterion (among minimum-cost alignments,
the operation sequence read from the end is lexicographically smallest under
match < substitution < deletion < insertion), independent of the DP
backtrace mechanics.
"""

import random
from itertools import product

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lipfuse.errors import EmptyBatch, EmptyReference, IllegalValue
from lipfuse.metrics import (
    AlignmentCounts,
    align,
    render_score_csv,
    score_batch,
    sentence_correctness,
    strip_silence,
    word_accuracy,
    word_correctness,
)

# op codes ordered by backtrace preference
_MATCH, _SUB, _DEL, _INS = 0, 1, 2, 3


def oracle_align(ref, hyp):
    """Exhaustive minimum-cost alignment with the global tie criterion."""
    best = None  # (cost, reversed op sequence)

    def walk(i, j, cost, ops):
        nonlocal best
        if i == len(ref) and j == len(hyp):
            key = (cost, tuple(reversed(ops)))
            if best is None or key < best:
                best = key
            return
        if i < len(ref) and j < len(hyp):
            same = ref[i] == hyp[j]
            walk(i + 1, j + 1, cost + (not same), ops + [_MATCH if same else _SUB])
        if i < len(ref):
            walk(i + 1, j, cost + 1, ops + [_DEL])
        if j < len(hyp):
            walk(i, j + 1, cost + 1, ops + [_INS])

    walk(0, 0, 0, [])
    _, rev_ops = best
    return AlignmentCounts(
        len(ref),
        sum(1 for o in rev_ops if o == _MATCH),
        sum(1 for o in rev_ops if o == _SUB),
        sum(1 for o in rev_ops if o == _DEL),
        sum(1 for o in rev_ops if o == _INS),
    )


class TestAlignFixtures:
    def test_deletion_case(self):
        c = align(("how", "are", "you"), ("how", "you"))
        assert (c.n, c.hits, c.deletions, c.substitutions, c.insertions) == (3, 2, 1, 0, 0)

    def test_identical(self):
        c = align(("a", "b", "c", "d"), ("a", "b", "c", "d"))
        assert (c.n, c.hits, c.substitutions, c.deletions, c.insertions) == (4, 4, 0, 0, 0)

    def test_insertion_case(self):
        c = align(("see", "you"), ("thank", "you", "see", "you"))
        assert (c.n, c.hits, c.insertions) == (2, 2, 2)
        assert c.substitutions == 0 and c.deletions == 0

    def test_empty_hypothesis(self):
        c = align(("a", "b"), ())
        assert (c.n, c.hits, c.deletions, c.insertions) == (2, 0, 2, 0)

    def test_counts_partition_reference(self):
        c = align(("a", "b", "c"), ("x", "c"))
        assert c.hits + c.substitutions + c.deletions == c.n


class TestAlignOracle:
    def test_exhaustive_all_pairs_up_to_len3(self):
        vocab = ("a", "b", "c")
        seqs = [
            tuple(s)
            for length in range(4)
            for s in product(vocab, repeat=length)
        ]
        for ref in seqs:
            for hyp in seqs:
                assert align(ref, hyp) == oracle_align(ref, hyp), (ref, hyp)

    def test_random_pairs_up_to_len5(self):
        rng = random.Random(99)
        vocab = ("a", "b", "c")
        for _ in range(300):
            ref = tuple(rng.choice(vocab) for _ in range(rng.randint(0, 5)))
            hyp = tuple(rng.choice(vocab) for _ in range(rng.randint(0, 5)))
            assert align(ref, hyp) == oracle_align(ref, hyp), (ref, hyp)


class TestFormulas:
    def test_word_accuracy_formula(self):
        c = AlignmentCounts(10, 7, 2, 1, 3)
        assert word_accuracy(c) == pytest.approx((7 - 3) / 10 * 100)

    def test_word_correctness_ignores_insertions(self):
        c = AlignmentCounts(10, 7, 2, 1, 3)
        assert word_correctness(c) == pytest.approx(70.0)

    def test_accuracy_can_be_negative(self):
        c = AlignmentCounts(2, 1, 1, 0, 4)
        assert word_accuracy(c) == pytest.approx(-150.0)

    def test_empty_reference_rejected(self):
        with pytest.raises(EmptyReference):
            word_accuracy(AlignmentCounts(0, 0, 0, 0, 0))
        with pytest.raises(EmptyReference):
            word_correctness(AlignmentCounts(0, 0, 0, 0, 0))

    def test_inconsistent_counts_rejected(self):
        with pytest.raises(IllegalValue):
            AlignmentCounts(3, 1, 1, 0, 0)

    @given(
        st.integers(0, 30), st.integers(0, 30), st.integers(0, 30),
        st.integers(0, 30),
    )
    @settings(max_examples=200, deadline=None)
    def test_formulas_on_random_counts(self, h, s, d, i):
        n = h + s + d
        if n == 0:
            return
        c = AlignmentCounts(n, h, s, d, i)
        assert word_accuracy(c) == pytest.approx((h - i) / n * 100)
        assert word_correctness(c) == pytest.approx(h / n * 100)
        assert word_correctness(c) >= word_accuracy(c)


class TestSentenceCorrectness:
    def test_exact_match_rate(self):
        pairs = [(("a",), ("a",)), (("a", "b"), ("a",)), (("c",), ("c",))]
        assert sentence_correctness(pairs) == pytest.approx(200 / 3)

    def test_empty_batch_rejected(self):
        with pytest.raises(EmptyBatch):
            sentence_correctness([])


class TestScoreBatch:
    def test_pools_counts_over_batch(self):
        pairs = [
            (("how", "are", "you"), ("how", "you")),
            (("see", "you"), ("thank", "you", "see", "you")),
        ]
        rep = score_batch(pairs)
        t = rep.totals
        assert (t.n, t.hits, t.deletions, t.insertions) == (5, 4, 1, 2)
        assert rep.word_accuracy == pytest.approx((4 - 2) / 5 * 100)
        assert rep.word_correctness == pytest.approx(80.0)
        assert rep.sentence_correctness == pytest.approx(0.0)

    def test_silence_stripped_before_everything(self):
        pairs = [((" sil ".strip(), "hello", "sil"), ("sil", "hello"))]
        rep = score_batch(pairs)
        assert rep.sentence_correctness == pytest.approx(100.0)
        assert rep.rows[0].reference == ("hello",)

    def test_silence_only_reference_rejected(self):
        with pytest.raises(EmptyReference):
            score_batch([(("sil",), ("hello",))])

    def test_id_count_mismatch_rejected(self):
        with pytest.raises(IllegalValue):
            score_batch([(("a",), ("a",))], ["u1", "u2"])


def test_strip_silence():
    assert strip_silence(("sil", "a", "sil", "b", "sil")) == ("a", "b")


def test_render_score_csv_one_decimal():
    rep = score_batch([(("a", "b"), ("a", "c"))])
    text = render_score_csv([("0+30", "grid", rep)])
    lines = text.splitlines()
    assert lines[0] == "combination,scheme,sentence_correctness,word_accuracy,word_correctness"
    assert lines[1] == "0+30,grid,0.0,50.0,50.0"
