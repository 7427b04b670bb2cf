"""Shared fixtures: small deterministic corpora and n-best builders."""

import pytest

from lipfuse.config import Config, ViewProfile
from lipfuse.core import ViewAngle
from lipfuse.nbest import NBestEntry, NBestList
from lipfuse.synth import gen_synthetic


def make_nbest(utterance_id, view, scored_words):
    """(phrase_id, words, loglik) triples to a sorted NBestList."""
    entries = [NBestEntry(pid, tuple(words), ll) for pid, words, ll in scored_words]
    entries.sort(key=lambda e: (-e.loglik, e.phrase_id))
    return NBestList(utterance_id, ViewAngle.of(view), tuple(entries))


def tiny_config(subjects=4, repetitions=2, views=(0, 30), noise=0.4,
                confusions=((2, 3), (0, 1))):
    """Small feature-mode corpus config; one confusable pair per view."""
    cfg = Config()
    cfg.synthetic.subjects = subjects
    cfg.synthetic.repetitions = repetitions
    cfg.synthetic.views = {
        ViewAngle.of(v): ViewProfile(
            noise=noise,
            confusions=(tuple(confusions[i]),) if confusions[i] else (),
        )
        for i, v in enumerate(views)
    }
    cfg.recognizer.max_mixtures = 2
    cfg.recognizer.em_iterations = 4
    cfg.recognizer.em_tolerance = 1e-4
    return cfg


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """4 subjects x 10 phrases x 2 reps x 2 views, feature mode."""
    cfg = tiny_config()
    root = tmp_path_factory.mktemp("tiny") / "corpus"
    return gen_synthetic(root, cfg), cfg


@pytest.fixture(scope="session")
def default_corpus(tmp_path_factory):
    """The full-size synthetic feature corpus at default settings (seed 42)."""
    cfg = Config()
    root = tmp_path_factory.mktemp("default") / "corpus"
    return gen_synthetic(root, cfg), cfg


def image_config(subjects=2, views=(0, 90), resolution=(24, 16)):
    """Small image-mode corpus config with plain (unconfused) views."""
    cfg = Config()
    cfg.synthetic.mode = "images"
    cfg.synthetic.subjects = subjects
    cfg.synthetic.repetitions = 1
    cfg.synthetic.resolution = resolution
    cfg.synthetic.frames_per_word = (4, 6)
    cfg.synthetic.silence_frames = (2, 3)
    cfg.synthetic.views = {
        ViewAngle.of(v): ViewProfile(noise=0.2, confusions=()) for v in views
    }
    return cfg


@pytest.fixture(scope="session")
def image_corpus(tmp_path_factory):
    """2 subjects x 10 phrases x 1 rep x 2 views of small grayscale frames."""
    cfg = image_config()
    root = tmp_path_factory.mktemp("imgs") / "corpus"
    return gen_synthetic(root, cfg), cfg
