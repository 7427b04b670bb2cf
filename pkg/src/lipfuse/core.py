"""Shared vocabulary types: views, phrases, utterances, feature streams.

Camera views are a closed set of five yaw angles. Every stage of the pipeline
speaks in terms of these types, so their invariants are checked eagerly at
construction time.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyViewSet,
    IllegalValue,
    LengthMismatch,
    MissingFile,
    ShapeMismatch,
)

#: Reserved transcript token for the silence model. Class id 0 in frame-label
#: inventories refers to the same thing.
SILENCE_WORD = "sil"
SILENCE_CLASS = 0


class ViewAngle(IntEnum):
    """Camera yaw in degrees. The set is closed; anything else is rejected."""

    FRONTAL = 0
    V30 = 30
    V45 = 45
    V60 = 60
    V90 = 90

    @classmethod
    def of(cls, value: int) -> "ViewAngle":
        try:
            return cls(int(value))
        except ValueError:
            raise IllegalValue(
                f"view angle must be one of {{0, 30, 45, 60, 90}}, got {value!r}"
            ) from None

    def __str__(self) -> str:  # "0", "30", ...
        return str(int(self))


ALL_VIEWS: tuple[ViewAngle, ...] = tuple(ViewAngle)


def parse_views(values) -> tuple[ViewAngle, ...]:
    """Normalize an iterable of ints/strings to a sorted unique view tuple."""
    views = sorted({ViewAngle.of(v) for v in values})
    if not views:
        raise EmptyViewSet("at least one view is required")
    return tuple(views)


def enumerate_view_combinations(views) -> list[tuple[ViewAngle, ...]]:
    """All non-empty subsets of `views`, ordered by size then by angles.

    For the full five-view set this yields the 31 combinations of the
    experiment matrix.
    """
    views = parse_views(views)
    out: list[tuple[ViewAngle, ...]] = []
    for k in range(1, len(views) + 1):
        out.extend(itertools.combinations(views, k))
    return out


def combo_label(views) -> str:
    """Render a view combination as e.g. "0+30+90"."""
    return "+".join(str(int(v)) for v in views)


@dataclass(frozen=True)
class Phrase:
    """A closed-grammar sentence: an id and its word sequence (no silence)."""

    phrase_id: int
    words: tuple[str, ...]

    def __post_init__(self):
        if self.phrase_id < 0:
            raise IllegalValue(f"phrase id must be >= 0, got {self.phrase_id}")
        if not self.words:
            raise IllegalValue(f"phrase {self.phrase_id} has no words")
        if SILENCE_WORD in self.words:
            raise IllegalValue(
                f"phrase {self.phrase_id} contains the reserved token {SILENCE_WORD!r}"
            )


@dataclass(frozen=True)
class PhraseSet:
    """The decoding grammar: a fixed list of phrases with unique ids."""

    phrases: tuple[Phrase, ...]

    def __post_init__(self):
        ids = [p.phrase_id for p in self.phrases]
        if len(set(ids)) != len(ids):
            raise IllegalValue("duplicate phrase ids in phrase set")
        if not self.phrases:
            raise IllegalValue("phrase set is empty")

    def __iter__(self):
        return iter(self.phrases)

    def __len__(self) -> int:
        return len(self.phrases)

    def by_id(self, phrase_id: int) -> Phrase:
        for p in self.phrases:
            if p.phrase_id == phrase_id:
                return p
        raise IllegalValue(f"unknown phrase id {phrase_id}")

    @property
    def vocabulary(self) -> tuple[str, ...]:
        words = sorted({w for p in self.phrases for w in p.words})
        return tuple(words)


class FeatureSequence:
    """A (T, D) float matrix of per-frame features plus the frame rate.

    Values must be finite; T >= 1 and D >= 1.
    """

    __slots__ = ("data", "frame_rate")

    def __init__(self, data: np.ndarray, frame_rate: float = 30.0):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ShapeMismatch(
                f"feature matrix must be (T>=1, D>=1), got shape {data.shape}"
            )
        if not np.all(np.isfinite(data)):
            raise IllegalValue("feature matrix contains non-finite values")
        if not (frame_rate > 0):
            raise IllegalValue(f"frame rate must be positive, got {frame_rate}")
        self.data = data
        self.frame_rate = float(frame_rate)

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, FeatureSequence)
            and self.frame_rate == other.frame_rate
            and self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
        )

    def __repr__(self) -> str:
        return f"FeatureSequence(T={self.num_frames}, D={self.dim}, fps={self.frame_rate})"


@dataclass(frozen=True)
class Utterance:
    """One recording: a subject saying one phrase once, seen from >=1 views.

    `frame_counts` records the stream length per view; synthetic corpora keep
    them equal across views, real recordings may not.
    """

    utterance_id: str
    subject: str
    phrase_id: int
    repetition: int
    views: tuple[ViewAngle, ...]
    frame_counts: dict[ViewAngle, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.views:
            raise EmptyViewSet(f"utterance {self.utterance_id} has no views")
        if self.repetition < 1:
            raise IllegalValue(
                f"repetition index must be >= 1, got {self.repetition}"
            )


def utterance_id_for(subject: str, phrase_id: int, repetition: int) -> str:
    """Mint the canonical utterance id, e.g. "s03-p2-r1"."""
    return f"{subject}-p{phrase_id}-r{repetition}"


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint train/test subject lists."""

    train_subjects: tuple[str, ...]
    test_subjects: tuple[str, ...]

    def __post_init__(self):
        overlap = set(self.train_subjects) & set(self.test_subjects)
        if overlap:
            raise IllegalValue(f"subjects in both splits: {sorted(overlap)}")
        if not self.train_subjects or not self.test_subjects:
            raise IllegalValue("both splits must be non-empty")

    @classmethod
    def default_for(cls, subjects) -> "DatasetSplit":
        """Deterministic default: sorted ids, ~77% train (the 40/52 ratio)."""
        subjects = sorted(subjects)
        if len(subjects) < 2:
            raise IllegalValue("need at least 2 subjects to split")
        n_train = int(round(len(subjects) * 40 / 52))
        n_train = min(max(n_train, 1), len(subjects) - 1)
        return cls(tuple(subjects[:n_train]), tuple(subjects[n_train:]))


# -- feature file format -------------------------------------------------------
#
# Layout (little-endian): magic "FEAT", version u32, T u32, D u32,
# frame_rate f32, then T*D float32 values row-major.

_FEAT_MAGIC = b"FEAT"
_FEAT_VERSION = 1


def write_feature_file(path, seq: FeatureSequence) -> None:
    path = Path(path)
    payload = seq.data.astype("<f4").tobytes(order="C")
    header = _FEAT_MAGIC + struct.pack(
        "<IIIf", _FEAT_VERSION, seq.num_frames, seq.dim, seq.frame_rate
    )
    path.write_bytes(header + payload)


def read_feature_file(path) -> FeatureSequence:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"feature file not found: {path}")
    blob = path.read_bytes()
    if len(blob) < 20 or blob[:4] != _FEAT_MAGIC:
        raise ShapeMismatch(f"not a feature file: {path}")
    version, t, d = struct.unpack("<III", blob[4:16])
    (frame_rate,) = struct.unpack("<f", blob[16:20])
    if version != _FEAT_VERSION:
        raise IllegalValue(f"unsupported feature file version {version}")
    expected = 20 + 4 * t * d
    if len(blob) != expected:
        raise LengthMismatch(
            f"feature file {path} has {len(blob)} bytes, expected {expected}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=20).reshape(t, d)
    return FeatureSequence(np.asarray(data, dtype=np.float64), float(frame_rate))


def check_same_dim(seqs) -> int:
    """Return the shared feature dimension of `seqs` or raise DimensionMismatch."""
    dims = {s.dim for s in seqs}
    if len(dims) != 1:
        raise DimensionMismatch(f"mixed feature dimensions: {sorted(dims)}")
    return dims.pop()
