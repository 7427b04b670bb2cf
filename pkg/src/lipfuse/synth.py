"""Deterministic synthetic multi-view corpus generator.

Every utterance samples one ground-truth timeline: leading and trailing
silence around per-word spans, each word span split between its two frame
classes. Each camera view then renders that timeline either as a feature
stream (per-class Gaussian emissions) or as grayscale mouth-proxy images.

The key construction is per-view confusability: a view configured to
confuse phrase pair (a, b) renders BOTH phrases with the canonical class
layout of min(a, b), stretched over the utterance's speech span. From that
view the pair is indistinguishable by design, while other views render the
truth, so fusing views recovers what any single view must lose.
"""

from __future__ import annotations

import errno
import math
from pathlib import Path

import numpy as np

from .config import Config, SyntheticConfig, ViewProfile
from .core import (
    ALL_VIEWS,
    FeatureSequence,
    Phrase,
    PhraseSet,
    SILENCE_CLASS,
    Utterance,
    ViewAngle,
    utterance_id_for,
    write_feature_file,
)
from .corpus import (
    Corpus,
    feature_path,
    frame_dir,
    frame_path,
    write_manifest,
)
from .errors import DiskFull, InvalidConfig
from .temporal import write_label_file

#: Built-in closed grammar: ten short phrases over a twelve-word vocabulary.
DEFAULT_PHRASES: tuple[tuple[int, tuple[str, ...]], ...] = (
    (0, ("hello",)),
    (1, ("goodbye",)),
    (2, ("excuse", "me")),
    (3, ("thank", "you")),
    (4, ("how", "are", "you")),
    (5, ("nice", "see", "you")),
    (6, ("see", "you")),
    (7, ("sorry", "you")),
    (8, ("you", "are", "welcome")),
    (9, ("you", "are", "nice")),
)


def default_phrase_set() -> PhraseSet:
    return PhraseSet(tuple(Phrase(pid, words) for pid, words in DEFAULT_PHRASES))


def word_classes(phrases: PhraseSet) -> dict[str, tuple[int, int]]:
    """Two frame classes per vocabulary word; class 0 stays silence."""
    return {
        w: (1 + 2 * i, 2 + 2 * i) for i, w in enumerate(phrases.vocabulary)
    }


def _guard_disk(action, *args, **kwargs):
    try:
        return action(*args, **kwargs)
    except OSError as exc:
        if exc.errno == errno.ENOSPC:
            raise DiskFull(f"out of disk space while writing corpus: {exc}") from exc
        raise


def _phrase_classes(phrase: Phrase, classes: dict) -> list[int]:
    seq = []
    for w in phrase.words:
        seq.extend(classes[w])
    return seq


def _stretch(segment_classes: list[int], span: int) -> np.ndarray:
    """Distribute `span` frames over class segments, earliest get the remainder."""
    k = len(segment_classes)
    base, rem = divmod(span, k)
    out = []
    for i, c in enumerate(segment_classes):
        out.extend([c] * (base + (1 if i < rem else 0)))
    return np.asarray(out, dtype=np.int64)


class _Timeline:
    __slots__ = ("labels", "lead", "trail")

    def __init__(self, labels: np.ndarray, lead: int, trail: int):
        self.labels = labels
        self.lead = lead
        self.trail = trail

    @property
    def span(self) -> int:
        return self.labels.shape[0] - self.lead - self.trail


def _sample_timeline(rng: np.random.Generator, phrase: Phrase,
                     classes: dict, cfg: SyntheticConfig) -> _Timeline:
    lead = int(rng.integers(cfg.silence_frames[0], cfg.silence_frames[1] + 1))
    trail = int(rng.integers(cfg.silence_frames[0], cfg.silence_frames[1] + 1))
    parts = [np.full(lead, SILENCE_CLASS, dtype=np.int64)]
    for w in phrase.words:
        n = int(rng.integers(cfg.frames_per_word[0], cfg.frames_per_word[1] + 1))
        c1, c2 = classes[w]
        n1 = (n + 1) // 2
        parts.append(np.full(n1, c1, dtype=np.int64))
        parts.append(np.full(n - n1, c2, dtype=np.int64))
    parts.append(np.full(trail, SILENCE_CLASS, dtype=np.int64))
    return _Timeline(np.concatenate(parts), lead, trail)


def _rendered_classes(timeline: _Timeline, phrase: Phrase, profile: ViewProfile,
                      phrases: PhraseSet, classes: dict) -> np.ndarray:
    """What the view actually shows: the truth, or the canonical twin layout."""
    for a, b in profile.confusions:
        if phrase.phrase_id in (a, b):
            canonical = phrases.by_id(min(a, b))
            rendered = timeline.labels.copy()
            rendered[timeline.lead:timeline.labels.shape[0] - timeline.trail] = _stretch(
                _phrase_classes(canonical, classes), timeline.span
            )
            return rendered
    return timeline.labels


def _class_codebook(seed: int, num_classes: int, dim: int,
                    separation: float) -> np.ndarray:
    rng = np.random.default_rng([seed, 101])
    return separation * rng.standard_normal((num_classes, dim))


def _subject_offset(seed: int, subject_index: int, dim: int, scale: float) -> np.ndarray:
    rng = np.random.default_rng([seed, 202, subject_index])
    return scale * rng.standard_normal(dim)


def _shape_codebook(seed: int, num_classes: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 505])
    return rng.random((num_classes, 4))


def _render_feature_stream(rendered: np.ndarray, codebook: np.ndarray,
                           offset: np.ndarray, noise: float,
                           rng: np.random.Generator) -> np.ndarray:
    clean = codebook[rendered] + offset[None, :]
    if noise == 0:
        return clean
    return clean + noise * rng.standard_normal(clean.shape)


def _render_image_stream(rendered: np.ndarray, shapes: np.ndarray,
                         resolution: tuple[int, int], view: ViewAngle,
                         noise: float, tint: float,
                         rng: np.random.Generator) -> np.ndarray:
    """(T, H, W) uint8 frames: a wobbling filled ellipse per frame class."""
    width, height = resolution
    yy = np.arange(height, dtype=np.float64)[:, None]
    xx = np.arange(width, dtype=np.float64)[None, :]
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    squash = 0.35 + 0.65 * math.cos(math.radians(int(view)))
    frames = np.empty((rendered.shape[0], height, width), dtype=np.uint8)
    seg_start = 0
    for t, c in enumerate(rendered):
        if t > 0 and rendered[t] != rendered[t - 1]:
            seg_start = t
        wf, hf, level, phase = shapes[c]
        wobble = 1.0 + 0.15 * math.sin(2.0 * math.pi * (0.12 * (t - seg_start) + phase))
        ax = max((0.30 + 0.45 * wf) * (width / 2.0) * squash * wobble, 1.0)
        ay = max((0.08 + 0.32 * hf) * (height / 2.0) * (2.0 - wobble), 1.0)
        mask = ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0
        img = np.full((height, width), 30.0 + 40.0 * tint)
        img[mask] = 100.0 + 120.0 * level
        if noise > 0:
            img += 25.0 * noise * rng.standard_normal((height, width))
        frames[t] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return frames


def _write_pgm_stack(directory: Path, frames: np.ndarray) -> None:
    from PIL import Image

    _guard_disk(directory.mkdir, parents=True, exist_ok=True)
    for i in range(frames.shape[0]):
        img = Image.fromarray(frames[i], mode="L")
        _guard_disk(img.save, frame_path(directory, i), format="PPM")


def gen_synthetic(root, config: Config) -> Corpus:
    """Generate a corpus under `root` and return its loaded description.

    Byte-identical for identical (config, seed). Writes the manifest, the
    per-frame labels, and either .feat streams or PGM frame directories.
    """
    cfg = config.synthetic
    seed = config.seed
    phrases = default_phrase_set()
    if cfg.subjects < 2:
        raise InvalidConfig("synthetic.subjects must be >= 2")
    if cfg.frames_per_word[0] < 4:
        raise InvalidConfig(
            "synthetic.frames_per_word minimum must be >= 4 so word models stay alignable"
        )
    views = tuple(sorted(cfg.views)) if cfg.views else ALL_VIEWS
    known = {p.phrase_id for p in phrases}
    for v in views:
        for a, b in cfg.profile(v).confusions:
            if a not in known or b not in known:
                raise InvalidConfig(
                    f"view {int(v)} confuses unknown phrase pair ({a}, {b})"
                )

    classes = word_classes(phrases)
    top_class = max(c for pair in classes.values() for c in pair)
    if cfg.num_classes <= top_class:
        raise InvalidConfig(
            f"synthetic.num_classes={cfg.num_classes} cannot hold class {top_class}"
        )
    root = Path(root)
    subjects = tuple(f"s{i + 1:02d}" for i in range(cfg.subjects))
    codebook = _class_codebook(seed, cfg.num_classes, cfg.feature_dim,
                               cfg.class_separation)
    shapes = _shape_codebook(seed, cfg.num_classes)

    utterances = []
    labels: dict[str, np.ndarray] = {}
    for si, subject in enumerate(subjects):
        offset = _subject_offset(seed, si, cfg.feature_dim, cfg.subject_variation)
        tint = float(np.random.default_rng([seed, 606, si]).random())
        for phrase in sorted(phrases, key=lambda p: p.phrase_id):
            for rep in range(1, cfg.repetitions + 1):
                rng_t = np.random.default_rng([seed, 303, si, phrase.phrase_id, rep])
                timeline = _sample_timeline(rng_t, phrase, classes, cfg)
                utt_id = utterance_id_for(subject, phrase.phrase_id, rep)
                labels[utt_id] = timeline.labels
                frame_counts = {}
                for view in views:
                    profile = cfg.profile(view)
                    rendered = _rendered_classes(timeline, phrase, profile,
                                                 phrases, classes)
                    rng_e = np.random.default_rng(
                        [seed, 404, si, phrase.phrase_id, rep, int(view)]
                    )
                    if cfg.mode == "features":
                        data = _render_feature_stream(
                            rendered, codebook, offset, profile.noise, rng_e
                        )
                        path = feature_path(root, subject, view,
                                            phrase.phrase_id, rep)
                        _guard_disk(path.parent.mkdir, parents=True, exist_ok=True)
                        _guard_disk(
                            write_feature_file, path,
                            FeatureSequence(data, config.dataset.frame_rate),
                        )
                    else:
                        frames = _render_image_stream(
                            rendered, shapes, cfg.resolution, view,
                            profile.noise, tint, rng_e,
                        )
                        _write_pgm_stack(
                            frame_dir(root, subject, view, phrase.phrase_id, rep),
                            frames,
                        )
                    frame_counts[view] = timeline.labels.shape[0]
                utterances.append(
                    Utterance(
                        utterance_id=utt_id,
                        subject=subject,
                        phrase_id=phrase.phrase_id,
                        repetition=rep,
                        views=views,
                        frame_counts=frame_counts,
                    )
                )

    corpus = Corpus(
        root=root,
        mode=cfg.mode,
        frame_rate=config.dataset.frame_rate,
        resolution=cfg.resolution,
        views=views,
        subjects=subjects,
        phrases=phrases,
        utterances=tuple(utterances),
        labels=labels,
    )
    _guard_disk(write_manifest, corpus)
    _guard_disk(
        write_label_file, root / "labels.txt", labels,
        silence_class=SILENCE_CLASS, num_classes=cfg.num_classes,
    )
    return corpus
