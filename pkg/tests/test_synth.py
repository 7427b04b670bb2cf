"""Synthetic corpus generator tests.

The load-bearing property is per-view confusability: a view that confuses
phrase pair (a, b) must render both phrases with the class layout of
min(a, b) stretched over the utterance's own speech span, while honest views
render the truth. With noise disabled this is checkable exactly against a
class-to-feature-row map recovered from unconfused utterances.
"""

import numpy as np
import pytest

from conftest import image_config, tiny_config
from lipfuse.config import Config, ViewProfile
from lipfuse.core import SILENCE_CLASS, ViewAngle
from lipfuse.corpus import corpus_fingerprint, load_corpus
from lipfuse.errors import InvalidConfig
from lipfuse.synth import default_phrase_set, gen_synthetic, word_classes
from lipfuse.temporal import read_label_file


def oracle_stretch(segment_classes, span):
    """Spread `span` frames over the segments, earliest absorb the remainder."""
    base, rem = divmod(span, len(segment_classes))
    out = []
    for i, c in enumerate(segment_classes):
        out.extend([c] * (base + (1 if i < rem else 0)))
    return out


def silence_margins(labels):
    lead = 0
    while lead < len(labels) and labels[lead] == SILENCE_CLASS:
        lead += 1
    trail = 0
    while trail < len(labels) and labels[-1 - trail] == SILENCE_CLASS:
        trail += 1
    return lead, trail


def phrase_class_layout(phrases, phrase_id):
    classes = word_classes(phrases)
    layout = []
    for w in phrases.by_id(phrase_id).words:
        layout.extend(classes[w])
    return layout


class TestStructure:
    def test_counts_and_layout(self, tiny_corpus):
        corpus, cfg = tiny_corpus
        assert corpus.mode == "features"
        assert len(corpus.subjects) == 4
        assert corpus.subjects == ("s01", "s02", "s03", "s04")
        assert [int(v) for v in corpus.views] == [0, 30]
        assert len(corpus.phrases) == 10
        assert len(corpus.utterances) == 4 * 10 * 2
        for utt in corpus.utterances:
            assert utt.views == corpus.views
            counts = set(utt.frame_counts.values())
            assert len(counts) == 1
            assert corpus.labels[utt.utterance_id].shape == (counts.pop(),)

    def test_streams_match_recorded_lengths(self, tiny_corpus):
        corpus, cfg = tiny_corpus
        utt = corpus.utterances[0]
        for view in corpus.views:
            seq = corpus.features(utt.utterance_id, view)
            assert seq.num_frames == utt.frame_counts[view]
            assert seq.dim == cfg.synthetic.feature_dim
        corpus.reset_audit()

    def test_default_corpus_counts(self, default_corpus):
        corpus, _ = default_corpus
        assert len(corpus.subjects) == 12
        assert len(corpus.views) == 5
        assert len(corpus.utterances) == 12 * 10 * 3

    def test_labels_file(self, tiny_corpus):
        corpus, cfg = tiny_corpus
        path = corpus.root / "labels.txt"
        first = path.read_text().splitlines()[0]
        assert first == f"# silence_class=0 num_classes={cfg.synthetic.num_classes}"
        labels, num_classes, silence = read_label_file(path)
        assert num_classes == cfg.synthetic.num_classes
        assert silence == SILENCE_CLASS
        assert set(labels) == {u.utterance_id for u in corpus.utterances}
        for utt_id, seq in labels.items():
            assert np.array_equal(seq, corpus.labels[utt_id])

    def test_manifest_round_trip_and_fingerprint(self, tiny_corpus):
        corpus, _ = tiny_corpus
        loaded = load_corpus(corpus.root)
        assert corpus_fingerprint(loaded) == corpus_fingerprint(corpus)
        assert loaded.subjects == corpus.subjects
        assert [u.utterance_id for u in loaded.utterances] == [
            u.utterance_id for u in corpus.utterances
        ]


class TestDeterminism:
    def test_regeneration_is_byte_identical(self, tmp_path):
        cfg = tiny_config(subjects=2, repetitions=1, views=(0,), confusions=((2, 3),))
        a = gen_synthetic(tmp_path / "a", cfg)
        b = gen_synthetic(tmp_path / "b", cfg)
        files_a = sorted(p.relative_to(a.root) for p in a.root.rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(b.root) for p in b.root.rglob("*") if p.is_file())
        assert files_a == files_b
        assert len(files_a) == 2 * 10 * 1 + 2  # streams + manifest + labels
        for rel in files_a:
            assert (a.root / rel).read_bytes() == (b.root / rel).read_bytes(), rel

    def test_seed_changes_the_data(self, tmp_path):
        cfg_a = tiny_config(subjects=2, repetitions=1, views=(0,), confusions=((2, 3),))
        cfg_b = tiny_config(subjects=2, repetitions=1, views=(0,), confusions=((2, 3),))
        cfg_b.seed = 7
        a = gen_synthetic(tmp_path / "a", cfg_a)
        b = gen_synthetic(tmp_path / "b", cfg_b)
        changed = False
        for pa in sorted(a.root.rglob("*.feat")):
            pb = b.root / pa.relative_to(a.root)
            if not pb.is_file() or pa.read_bytes() != pb.read_bytes():
                changed = True
                break
        assert changed


@pytest.fixture(scope="module")
def clean_corpus(tmp_path_factory):
    # noise-free, view 0 confuses (6, 7), view 30 is honest
    cfg = tiny_config(
        subjects=2, repetitions=1, views=(0, 30), noise=0.0,
        confusions=((6, 7), ()),
    )
    root = tmp_path_factory.mktemp("clean") / "corpus"
    return gen_synthetic(root, cfg), cfg


class TestRendering:
    def test_zero_noise_rows_are_class_codes(self, clean_corpus):
        # same subject, same class => identical feature row, per view
        corpus, _ = clean_corpus
        subject = corpus.subjects[0]
        for view in corpus.views:
            rows = {}
            for utt in corpus.utterances_for([subject]):
                if utt.phrase_id in (6, 7):
                    continue
                seq = corpus.features(utt.utterance_id, view)
                for c, row in zip(corpus.labels[utt.utterance_id], seq.data):
                    rows.setdefault(int(c), []).append(row)
            for group in rows.values():
                for row in group[1:]:
                    assert np.array_equal(group[0], row)
            distinct = [g[0] for g in rows.values()]
            for i in range(len(distinct)):
                for j in range(i + 1, len(distinct)):
                    assert not np.array_equal(distinct[i], distinct[j])
        corpus.reset_audit()

    def test_subjects_differ(self, clean_corpus):
        corpus, _ = clean_corpus
        utt1 = next(u for u in corpus.utterances if u.subject == "s01" and u.phrase_id == 0)
        utt2 = next(u for u in corpus.utterances if u.subject == "s02" and u.phrase_id == 0)
        a = corpus.features(utt1.utterance_id, ViewAngle.V30)
        b = corpus.features(utt2.utterance_id, ViewAngle.V30)
        assert not np.array_equal(a.data[:1], b.data[:1])
        corpus.reset_audit()

    def test_confused_view_renders_canonical_twin(self, clean_corpus):
        corpus, _ = clean_corpus
        phrases = corpus.phrases
        twin_layout = phrase_class_layout(phrases, 6)  # canonical = min(6, 7)
        for subject in corpus.subjects:
            # class -> row map is per subject (each has its own offset)
            row_of = {}
            for utt in corpus.utterances_for([subject]):
                if utt.phrase_id in (6, 7):
                    continue
                seq = corpus.features(utt.utterance_id, ViewAngle.FRONTAL)
                for c, row in zip(corpus.labels[utt.utterance_id], seq.data):
                    row_of[int(c)] = row
            for pid in (6, 7):
                utt = next(
                    u for u in corpus.utterances_for([subject]) if u.phrase_id == pid
                )
                labels = corpus.labels[utt.utterance_id]
                lead, trail = silence_margins(labels)
                span = len(labels) - lead - trail
                expected_classes = (
                    [SILENCE_CLASS] * lead
                    + oracle_stretch(twin_layout, span)
                    + [SILENCE_CLASS] * trail
                )
                got = corpus.features(utt.utterance_id, ViewAngle.FRONTAL).data
                want = np.stack([row_of[c] for c in expected_classes])
                assert np.array_equal(got, want), (subject, pid)
        corpus.reset_audit()

    def test_twin_pair_is_indistinguishable_only_in_confused_view(self, clean_corpus):
        # view 0 collapses 6 and 7 onto one layout; view 30 keeps them apart
        corpus, _ = clean_corpus
        u6 = next(u for u in corpus.utterances if u.subject == "s01" and u.phrase_id == 6)
        u7 = next(u for u in corpus.utterances if u.subject == "s01" and u.phrase_id == 7)
        rows0_6 = {r.tobytes() for r in corpus.features(u6.utterance_id, 0).data}
        rows0_7 = {r.tobytes() for r in corpus.features(u7.utterance_id, 0).data}
        assert rows0_6 == rows0_7  # same class inventory at the confused view
        rows30_6 = {r.tobytes() for r in corpus.features(u6.utterance_id, 30).data}
        rows30_7 = {r.tobytes() for r in corpus.features(u7.utterance_id, 30).data}
        assert rows30_6 != rows30_7
        corpus.reset_audit()

    def test_honest_view_renders_truth(self, clean_corpus):
        corpus, _ = clean_corpus
        subject = corpus.subjects[0]
        row_of = {}
        for utt in corpus.utterances_for([subject]):
            if utt.phrase_id in (6, 7):
                continue
            seq = corpus.features(utt.utterance_id, ViewAngle.V30)
            for c, row in zip(corpus.labels[utt.utterance_id], seq.data):
                row_of[int(c)] = row

        # phrase 6 ("see you"): every class occurs in other phrases too
        utt6 = next(u for u in corpus.utterances_for([subject]) if u.phrase_id == 6)
        got = corpus.features(utt6.utterance_id, ViewAngle.V30).data
        want = np.stack([row_of[c] for c in corpus.labels[utt6.utterance_id]])
        assert np.array_equal(got, want)

        # phrase 7 ("sorry you"): "sorry" exists nowhere else, so check the
        # shared classes exactly and the private ones for consistency
        utt7 = next(u for u in corpus.utterances_for([subject]) if u.phrase_id == 7)
        got = corpus.features(utt7.utterance_id, ViewAngle.V30).data
        private: dict[int, np.ndarray] = {}
        for c, row in zip(corpus.labels[utt7.utterance_id], got):
            c = int(c)
            if c in row_of:
                assert np.array_equal(row, row_of[c])
            else:
                if c in private:
                    assert np.array_equal(row, private[c])
                private[c] = row
        assert private  # the "sorry" classes really were exercised
        for row in private.values():
            for other in row_of.values():
                assert not np.array_equal(row, other)
        corpus.reset_audit()


class TestImageMode:
    def test_frames_and_manifest(self, image_corpus):
        corpus, cfg = image_corpus
        assert corpus.mode == "images"
        width, height = cfg.synthetic.resolution
        utt = corpus.utterances[0]
        stack = corpus.frames(utt.utterance_id, ViewAngle.FRONTAL)
        assert stack.shape == (utt.frame_counts[ViewAngle.FRONTAL], height, width)
        assert stack.min() >= 0 and stack.max() <= 255
        assert stack.std() > 0
        corpus.reset_audit()

    def test_views_render_differently(self, image_corpus):
        corpus, _ = image_corpus
        utt = corpus.utterances[0]
        a = corpus.frames(utt.utterance_id, ViewAngle.FRONTAL)
        b = corpus.frames(utt.utterance_id, ViewAngle.V90)
        assert a.shape == b.shape
        assert not np.array_equal(a, b)
        corpus.reset_audit()

    def test_image_regeneration_is_byte_identical(self, tmp_path):
        cfg = image_config(subjects=2, views=(0,), resolution=(16, 12))
        a = gen_synthetic(tmp_path / "a", cfg)
        b = gen_synthetic(tmp_path / "b", cfg)
        pgms = sorted(p.relative_to(a.root) for p in a.root.rglob("*.pgm"))
        assert pgms
        for rel in pgms:
            assert (a.root / rel).read_bytes() == (b.root / rel).read_bytes()


class TestValidation:
    def test_rejects_single_subject(self, tmp_path):
        cfg = Config()
        cfg.synthetic.subjects = 1
        with pytest.raises(InvalidConfig):
            gen_synthetic(tmp_path / "c", cfg)

    def test_rejects_short_words(self, tmp_path):
        cfg = Config()
        cfg.synthetic.frames_per_word = (2, 6)
        with pytest.raises(InvalidConfig):
            gen_synthetic(tmp_path / "c", cfg)

    def test_rejects_small_class_inventory(self, tmp_path):
        cfg = Config()
        cfg.synthetic.num_classes = 10
        with pytest.raises(InvalidConfig):
            gen_synthetic(tmp_path / "c", cfg)

    def test_rejects_unknown_confusion_ids(self, tmp_path):
        cfg = Config()
        cfg.synthetic.views = {
            ViewAngle.FRONTAL: ViewProfile(noise=0.1, confusions=((0, 99),))
        }
        with pytest.raises(InvalidConfig):
            gen_synthetic(tmp_path / "c", cfg)


class TestDefaultGrammar:
    def test_phrase_inventory(self):
        phrases = default_phrase_set()
        assert len(phrases) == 10
        assert [p.phrase_id for p in phrases] == list(range(10))
        assert phrases.by_id(4).words == ("how", "are", "you")

    def test_word_classes_are_disjoint_pairs(self):
        phrases = default_phrase_set()
        classes = word_classes(phrases)
        assert set(classes) == set(phrases.vocabulary)
        seen = set()
        for c1, c2 in classes.values():
            assert c1 != SILENCE_CLASS and c2 != SILENCE_CLASS
            assert c2 == c1 + 1
            assert c1 not in seen and c2 not in seen
            seen.update((c1, c2))
        assert max(seen) == 2 * len(classes)
