"""Fusion tests.

The fuse oracle recomputes weighted scores with Fraction arithmetic over a
dict-of-dicts representation and ranks with Python sorting, sharing no code
with the implementation.
"""

import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_nbest
from lipfuse.core import ViewAngle
from lipfuse.errors import (
    AllZeroCorrectness,
    EmptyLists,
    EmptyViewSet,
    IllegalValue,
    LengthMismatch,
    UnsupportedK,
    UtteranceMismatch,
    ViewWeightMismatch,
)
from lipfuse.core import FeatureSequence
from lipfuse.fusion import (
    FusionWeights,
    enumerate_simplex,
    feature_fuse,
    fuse,
    grid_search_weights,
    read_fused_file,
    read_weights_file,
    score_table,
    training_recognition_weights,
    write_fused_file,
    write_weights_file,
)

import numpy as np


def oracle_fuse(lists_by_view, tenths_by_view, backoff_delta=10.0,
                universe="union"):
    """Brute-force reranking oracle.

    lists_by_view: {view_int: {pid: (words, loglik)}}. Scores accumulate in
    float64 over ascending views exactly as documented; alongside, the same
    sum is carried in exact Fraction arithmetic so callers can bound the
    float error. Returns ranked [(pid, float_score, exact_score)].
    """
    views = sorted(lists_by_view)
    if universe == "union":
        pids = sorted({p for d in lists_by_view.values() for p in d})
    else:
        sets = [set(d) for d in lists_by_view.values()]
        pids = sorted(set.intersection(*sets))
    backoff = {
        v: min(ll for _, ll in lists_by_view[v].values()) - backoff_delta
        for v in views
    }
    ranked = []
    for pid in pids:
        score = 0.0
        exact = Fraction(0)
        for v in views:
            lam = tenths_by_view[v] / 10.0
            ll = lists_by_view[v][pid][1] if pid in lists_by_view[v] else backoff[v]
            score += lam * ll
            exact += Fraction(tenths_by_view[v], 10) * Fraction(ll)
        ranked.append((pid, score, exact))
    ranked.sort(key=lambda t: (-t[1], t[0]))
    return ranked


def random_instance(rng, n_views=None, allow_disjoint=True):
    """Random per-view n-best lists plus weights for one utterance."""
    views = rng.sample([0, 30, 45, 60, 90], rng.randint(2, 5) if n_views is None else n_views)
    views.sort()
    tenths = rng.choice(enumerate_simplex(len(views)))
    pool = list(range(8))
    lists = {}
    for v in views:
        k = rng.randint(1, 5)
        pids = rng.sample(pool, k) if allow_disjoint else pool[:k]
        lists[v] = {
            pid: ((f"w{pid}a", f"w{pid}b"), rng.uniform(-2000.0, -1.0))
            for pid in pids
        }
    return views, tenths, lists


def to_nblists(lists, utt="u1"):
    return {
        v: make_nbest(utt, v, [(pid, words, ll) for pid, (words, ll) in d.items()])
        for v, d in lists.items()
    }


class TestFusionWeights:
    def test_valid(self):
        w = FusionWeights((ViewAngle.of(0), ViewAngle.of(30)), (4, 6))
        assert w.as_floats() == (0.4, 0.6)
        assert w.weight(30) == 0.6

    def test_sum_enforced(self):
        with pytest.raises(IllegalValue):
            FusionWeights((ViewAngle.of(0), ViewAngle.of(30)), (4, 5))

    def test_views_must_ascend(self):
        with pytest.raises(IllegalValue):
            FusionWeights((ViewAngle.of(30), ViewAngle.of(0)), (4, 6))

    def test_length_mismatch(self):
        with pytest.raises(ViewWeightMismatch):
            FusionWeights((ViewAngle.of(0),), (4, 6))

    def test_non_integer_rejected(self):
        with pytest.raises(IllegalValue):
            FusionWeights((ViewAngle.of(0), ViewAngle.of(30)), (0.4, 0.6))

    def test_floats_sum_to_exactly_one(self):
        for tenths in enumerate_simplex(5):
            w = FusionWeights(tuple(map(ViewAngle.of, (0, 30, 45, 60, 90))), tenths)
            assert math.fsum(w.as_floats()) == 1.0


class TestFuseOracle:
    def test_random_instances_match_oracle(self):
        rng = random.Random(4242)
        for _ in range(400):
            views, tenths, lists = random_instance(rng)
            weights = FusionWeights(tuple(map(ViewAngle.of, views)), tuple(tenths))
            result = fuse(to_nblists(lists), weights)
            expect = oracle_fuse(lists, dict(zip(views, tenths)))
            assert [e.phrase_id for e in result.entries] == [p for p, _, _ in expect]
            for entry, (_, score, exact) in zip(result.entries, expect):
                assert entry.score == score  # identical accumulation
                assert entry.score == pytest.approx(float(exact), rel=1e-12)

    def test_intersection_universe(self):
        rng = random.Random(77)
        for _ in range(100):
            views, tenths, lists = random_instance(rng, allow_disjoint=False)
            weights = FusionWeights(tuple(map(ViewAngle.of, views)), tuple(tenths))
            result = fuse(to_nblists(lists), weights, universe="intersection")
            expect = oracle_fuse(lists, dict(zip(views, tenths)),
                                 universe="intersection")
            assert [e.phrase_id for e in result.entries] == [p for p, _, _ in expect]

    def test_weighted_sum_identity_for_fully_listed(self):
        # a hypothesis present in every list scores exactly sum lam_v * ll_v
        rng = random.Random(11)
        for _ in range(200):
            views, tenths, lists = random_instance(rng)
            shared_ll = {v: rng.uniform(-900, -10) for v in views}
            for v in views:
                lists[v][99] = (("shared",), shared_ll[v])
            weights = FusionWeights(tuple(map(ViewAngle.of, views)), tuple(tenths))
            result = fuse(to_nblists(lists), weights)
            got = next(e.score for e in result.entries if e.phrase_id == 99)
            want = sum(t / 10 * shared_ll[v] for v, t in zip(views, tenths))
            assert got == pytest.approx(want, rel=1e-12)

    def test_exact_flags_mark_backoff(self):
        lists = {0: {1: (("a",), -5.0), 2: (("b",), -9.0)}, 30: {1: (("a",), -6.0)}}
        w = FusionWeights((ViewAngle.of(0), ViewAngle.of(30)), (5, 5))
        result = fuse(to_nblists(lists), w)
        by_pid = {e.phrase_id: e for e in result.entries}
        assert by_pid[1].exact == (True, True)
        assert by_pid[2].exact == (True, False)
        # backoff for view 30 = -6 - 10 = -16
        assert by_pid[2].score == pytest.approx(0.5 * -9.0 + 0.5 * -16.0)


class TestFuseValidation:
    def test_weights_views_must_match(self):
        lists = {0: {1: (("a",), -5.0)}, 30: {1: (("a",), -6.0)}}
        w = FusionWeights((ViewAngle.of(0), ViewAngle.of(45)), (5, 5))
        with pytest.raises(ViewWeightMismatch):
            fuse(to_nblists(lists), w)

    def test_mixed_utterances_rejected(self):
        a = make_nbest("u1", 0, [(1, ("a",), -5.0)])
        b = make_nbest("u2", 30, [(1, ("a",), -6.0)])
        w = FusionWeights((ViewAngle.of(0), ViewAngle.of(30)), (5, 5))
        with pytest.raises(UtteranceMismatch):
            fuse({0: a, 30: b}, w)

    def test_empty_rejected(self):
        w = FusionWeights((ViewAngle.of(0),), (10,))
        with pytest.raises(EmptyLists):
            fuse({}, w)

    def test_conflicting_words_rejected(self):
        a = make_nbest("u1", 0, [(1, ("a",), -5.0)])
        b = make_nbest("u1", 30, [(1, ("b",), -6.0)])
        w = FusionWeights((ViewAngle.of(0), ViewAngle.of(30)), (5, 5))
        with pytest.raises(IllegalValue):
            fuse({0: a, 30: b}, w)

    def test_empty_intersection_rejected(self):
        a = make_nbest("u1", 0, [(1, ("a",), -5.0)])
        b = make_nbest("u1", 30, [(2, ("b",), -6.0)])
        w = FusionWeights((ViewAngle.of(0), ViewAngle.of(30)), (5, 5))
        with pytest.raises(EmptyLists):
            fuse({0: a, 30: b}, w, universe="intersection")


# -- invariants -------------------------------------------------------------------

_views_st = st.sets(st.sampled_from([0, 30, 45, 60, 90]), min_size=2, max_size=5)


@st.composite
def fuse_instance(draw):
    views = sorted(draw(_views_st))
    tenths = draw(st.sampled_from(enumerate_simplex(len(views))))
    lists = {}
    for v in views:
        pids = draw(st.sets(st.integers(0, 7), min_size=1, max_size=5))
        lists[v] = {
            pid: ((f"w{pid}",), draw(st.floats(-2000, -1, allow_nan=False)))
            for pid in pids
        }
    return views, tenths, lists


class TestFusionInvariants:
    @given(fuse_instance())
    @settings(max_examples=300, deadline=None)
    def test_identity_degeneration(self, inst):
        # weight 10 on one view reproduces that view's own ranking over its
        # listed pids; everything else lands strictly below on the backoff
        views, _, lists = inst
        v0 = views[0]
        tenths = tuple(10 if v == v0 else 0 for v in views)
        w = FusionWeights(tuple(map(ViewAngle.of, views)), tenths)
        result = fuse(to_nblists(lists), w)
        own = sorted(
            ((pid, ll) for pid, (_, ll) in lists[v0].items()),
            key=lambda t: (-t[1], t[0]),
        )
        backoff = min(ll for _, ll in own) - 10.0
        unlisted = sorted(
            pid for d in lists.values() for pid in d if pid not in lists[v0]
        )
        expect = [p for p, _ in own] + sorted(set(unlisted))
        assert [e.phrase_id for e in result.entries] == expect
        for e, (_, ll) in zip(result.entries, own):
            assert e.score == pytest.approx(ll, rel=1e-12)
        for e in result.entries[len(own):]:
            assert e.score == pytest.approx(backoff, rel=1e-12)

    @given(fuse_instance())
    @settings(max_examples=300, deadline=None)
    def test_view_relabeling_consistency(self, inst):
        # scores depend on (weight, list) pairs, not on which angle carries them
        views, tenths, lists = inst
        perm = list(views)
        random.Random(0).shuffle(perm)
        relabeled = {nv: lists[ov] for nv, ov in zip(views, perm)}
        rel_tenths = tuple(tenths[views.index(ov)] for ov in perm)
        w1 = FusionWeights(tuple(map(ViewAngle.of, views)), tuple(tenths))
        w2 = FusionWeights(tuple(map(ViewAngle.of, views)), rel_tenths)
        r1 = fuse(to_nblists(lists), w1)
        r2 = fuse(to_nblists(relabeled), w2)
        assert [e.phrase_id for e in r1.entries] == [e.phrase_id for e in r2.entries]
        for a, b in zip(r1.entries, r2.entries):
            assert a.score == pytest.approx(b.score, rel=1e-12)

    @given(fuse_instance(), st.floats(-50, 50, allow_nan=False))
    @settings(max_examples=300, deadline=None)
    def test_per_view_shift_preserves_ranking(self, inst, shift):
        # adding a constant to one view's logliks shifts all fused scores
        # equally, so the ranking is unchanged
        views, tenths, lists = inst
        v0 = views[0]
        shifted = {
            v: ({p: (w, ll + shift) for p, (w, ll) in d.items()} if v == v0 else d)
            for v, d in lists.items()
        }
        w = FusionWeights(tuple(map(ViewAngle.of, views)), tuple(tenths))
        r1 = fuse(to_nblists(lists), w)
        r2 = fuse(to_nblists(shifted), w)
        assert [e.phrase_id for e in r1.entries] == [e.phrase_id for e in r2.entries]


class TestScoreTable:
    def test_agrees_with_fuse_bit_for_bit(self):
        rng = random.Random(31337)
        for _ in range(100):
            views, tenths, lists = random_instance(rng)
            nbl = to_nblists(lists)
            w = FusionWeights(tuple(map(ViewAngle.of, views)), tuple(tenths))
            result = fuse(nbl, w)
            tviews, pids, words_of, matrix, exact = score_table(nbl)
            assert tuple(int(v) for v in tviews) == tuple(views)
            lam = w.as_floats()
            for e in result.entries:
                j = pids.index(e.phrase_id)
                score = 0.0
                for i in range(len(views)):
                    score += lam[i] * matrix[i][j]
                assert score == e.score  # exact float equality required

    def test_vectorized_accumulation_matches(self):
        # the experiment surface path accumulates with numpy in the same order
        rng = random.Random(2718)
        for _ in range(50):
            views, tenths, lists = random_instance(rng)
            nbl = to_nblists(lists)
            w = FusionWeights(tuple(map(ViewAngle.of, views)), tuple(tenths))
            result = fuse(nbl, w)
            _, pids, _, matrix, _ = score_table(nbl)
            m = np.asarray(matrix)
            lam = np.asarray(w.as_floats())
            fused = np.zeros(m.shape[1])
            for i in range(len(views)):
                fused += lam[i] * m[i]
            for e in result.entries:
                assert fused[pids.index(e.phrase_id)] == e.score


class TestSimplex:
    def test_counts_match_formula(self):
        for k in range(2, 6):
            pts = enumerate_simplex(k)
            assert len(pts) == math.comb(10 + k - 1, k - 1)
        assert len(enumerate_simplex(1)) == 1

    def test_exhaustive_counts(self):
        assert len(enumerate_simplex(2)) == 11
        assert len(enumerate_simplex(3)) == 66
        assert len(enumerate_simplex(4)) == 286
        assert len(enumerate_simplex(5)) == 1001

    def test_lexicographic_ascending_and_unique(self):
        for k in (2, 3, 4, 5):
            pts = enumerate_simplex(k)
            assert pts == sorted(pts)
            assert len(set(pts)) == len(pts)
            assert all(sum(p) == 10 for p in pts)
            assert all(len(p) == k for p in pts)

    def test_coarser_step(self):
        pts = enumerate_simplex(2, step=0.5)
        assert pts == [(0, 10), (5, 5), (10, 0)]

    def test_bad_k(self):
        with pytest.raises(UnsupportedK):
            enumerate_simplex(0)
        with pytest.raises(UnsupportedK):
            enumerate_simplex(6)

    def test_bad_step(self):
        with pytest.raises(IllegalValue):
            enumerate_simplex(2, step=0.3)


class TestGridSearch:
    def test_recovers_planted_optimum(self):
        target = (3, 0, 7)
        views = (0, 45, 90)

        def ev(w):
            return -sum((a - b) ** 2 for a, b in zip(w.tenths, target))

        best, score = grid_search_weights(views, ev)
        assert best.tenths == target
        assert score == 0

    def test_first_maximizer_wins_ties(self):
        best, _ = grid_search_weights((0, 30), lambda w: 1.0)
        assert best.tenths == (0, 10)  # first point in lexicographic order

    def test_empty_views_rejected(self):
        with pytest.raises(EmptyViewSet):
            grid_search_weights((), lambda w: 0.0)


class TestTrainingRecognitionWeights:
    def test_published_example(self):
        w = training_recognition_weights({0: 80.0, 30: 55.0})
        assert w.tenths == (6, 4)

    def test_sums_to_ten_on_random_vectors(self):
        rng = random.Random(5)
        for _ in range(500):
            k = rng.randint(2, 5)
            views = sorted(rng.sample([0, 30, 45, 60, 90], k))
            vals = {v: rng.uniform(0.001, 100.0) for v in views}
            w = training_recognition_weights(vals)
            assert sum(w.tenths) == 10
            assert tuple(int(v) for v in w.views) == tuple(views)

    def test_proportionality(self):
        w = training_recognition_weights({0: 20.0, 30: 20.0, 45: 60.0})
        assert w.tenths == (2, 2, 6)

    def test_remainder_tie_favors_lower_angle(self):
        # raw = (2.5, 2.5, 5.0): one leftover tenth goes to view 0
        w = training_recognition_weights({0: 25.0, 30: 25.0, 45: 50.0})
        assert w.tenths == (3, 2, 5)

    def test_all_zero_rejected(self):
        with pytest.raises(AllZeroCorrectness):
            training_recognition_weights({0: 0.0, 30: 0.0})

    def test_negative_rejected(self):
        with pytest.raises(IllegalValue):
            training_recognition_weights({0: -1.0, 30: 5.0})

    def test_largest_remainder_is_exact_for_multiples(self):
        w = training_recognition_weights({0: 10.0, 30: 90.0})
        assert w.tenths == (1, 9)


class TestWeightsFile:
    def test_round_trip(self, tmp_path):
        w = FusionWeights(tuple(map(ViewAngle.of, (0, 45, 90))), (3, 0, 7))
        p = tmp_path / "w.json"
        write_weights_file(p, w, "grid")
        w2, scheme = read_weights_file(p)
        assert w2 == w and scheme == "grid"

    def test_golden_fixture_rows_are_valid(self):
        import json
        from pathlib import Path

        data = json.loads(
            (Path(__file__).parent / "data" / "golden_weights.json").read_text()
        )
        assert len(data["rows"]) == 26
        for row in data["rows"]:
            views = tuple(map(ViewAngle.of, row["views"]))
            for key in ("grid", "rec"):
                w = FusionWeights(views, tuple(row[key]))
                assert sum(w.tenths) == 10


class TestFusedFile:
    def test_round_trip_preserves_scores_exactly(self, tmp_path):
        rng = random.Random(8)
        views, tenths, lists = random_instance(rng)
        w = FusionWeights(tuple(map(ViewAngle.of, views)), tuple(tenths))
        results = [fuse(to_nblists(lists, utt=f"u{i}"), w) for i in range(3)]
        p = tmp_path / "fused.jsonl"
        write_fused_file(p, results)
        back = read_fused_file(p)
        assert back == results


class TestFeatureFuse:
    def test_concatenates_ascending(self):
        a = FeatureSequence(np.arange(6, dtype=np.float32).reshape(3, 2), 30.0)
        b = FeatureSequence(np.arange(6, 12, dtype=np.float32).reshape(3, 2), 30.0)
        out = feature_fuse({30: b, 0: a})
        assert out.data.shape == (3, 4)
        assert np.array_equal(out.data[:, :2], a.data)
        assert np.array_equal(out.data[:, 2:], b.data)

    def test_length_mismatch_rejected(self):
        a = FeatureSequence(np.zeros((3, 2), np.float32), 30.0)
        b = FeatureSequence(np.zeros((4, 2), np.float32), 30.0)
        with pytest.raises(LengthMismatch):
            feature_fuse({0: a, 30: b})

    def test_single_stream_is_identity(self):
        a = FeatureSequence(np.random.default_rng(0).normal(size=(5, 3)).astype(np.float32), 30.0)
        out = feature_fuse({0: a})
        assert np.array_equal(out.data, a.data)
