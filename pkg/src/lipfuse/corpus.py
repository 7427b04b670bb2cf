"""Corpus layout, manifest handling and audited data access.

A corpus root contains `corpus.json` (the manifest), `labels.txt`
(per-frame class targets, optional for decode-only use) and one directory
per subject. Inside a subject directory each camera view is a directory
named by its angle in degrees; an utterance is either a single feature
file `p<phrase>_r<rep>.feat` or, for image corpora, a directory
`p<phrase>_r<rep>/` of `frame_<n>.pgm` grayscale frames.

Every feature or frame read is recorded in an access log keyed by subject
so experiments can prove that held-out speakers were never touched while
training.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    FeatureSequence,
    Phrase,
    PhraseSet,
    Utterance,
    ViewAngle,
    read_feature_file,
    utterance_id_for,
)
from .errors import (
    IllegalValue,
    MissingFile,
    SchemaViolation,
)
from .temporal import read_label_file

MANIFEST_NAME = "corpus.json"
LABELS_NAME = "labels.txt"


def feature_path(root, subject: str, view: ViewAngle, phrase_id: int,
                 repetition: int) -> Path:
    return (
        Path(root) / subject / str(int(view))
        / f"p{phrase_id:02d}_r{repetition:02d}.feat"
    )


def frame_dir(root, subject: str, view: ViewAngle, phrase_id: int,
              repetition: int) -> Path:
    return (
        Path(root) / subject / str(int(view))
        / f"p{phrase_id:02d}_r{repetition:02d}"
    )


def frame_path(directory: Path, index: int) -> Path:
    return Path(directory) / f"frame_{index:05d}.pgm"


@dataclass
class Corpus:
    """A loaded manifest plus audited access to the data beneath it."""

    root: Path
    mode: str  # "features" or "images"
    frame_rate: float
    resolution: tuple[int, int]
    views: tuple[ViewAngle, ...]
    subjects: tuple[str, ...]
    phrases: PhraseSet
    utterances: tuple[Utterance, ...]
    labels: dict = field(default_factory=dict)  # utterance_id -> int array
    _by_id: dict = field(default_factory=dict, repr=False)
    _access_log: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.root = Path(self.root)
        self._by_id = {u.utterance_id: u for u in self.utterances}

    def utterance(self, utterance_id: str) -> Utterance:
        if utterance_id not in self._by_id:
            raise IllegalValue(f"unknown utterance {utterance_id!r}")
        return self._by_id[utterance_id]

    def utterances_for(self, subjects) -> tuple[Utterance, ...]:
        wanted = set(subjects)
        unknown = wanted - set(self.subjects)
        if unknown:
            raise IllegalValue(f"unknown subjects: {sorted(unknown)}")
        return tuple(u for u in self.utterances if u.subject in wanted)

    def words_of(self, utterance_id: str) -> tuple[str, ...]:
        return self.phrases.by_id(self.utterance(utterance_id).phrase_id).words

    def labels_of(self, utterance_id: str) -> np.ndarray:
        self.utterance(utterance_id)
        if utterance_id not in self.labels:
            raise MissingFile(
                f"no frame labels for {utterance_id!r}; corpus has no usable {LABELS_NAME}"
            )
        return self.labels[utterance_id]

    # -- audited reads --------------------------------------------------------

    def _record(self, utterance: Utterance, view: ViewAngle) -> None:
        self._access_log.append((utterance.subject, utterance.utterance_id, int(view)))

    @property
    def accessed_subjects(self) -> frozenset:
        return frozenset(subject for subject, _, _ in self._access_log)

    @property
    def access_log(self) -> tuple:
        return tuple(self._access_log)

    def reset_audit(self) -> None:
        self._access_log.clear()

    def features(self, utterance_id: str, view: ViewAngle) -> FeatureSequence:
        """Read the stored feature sequence for one utterance and view."""
        if self.mode != "features":
            raise IllegalValue(
                f"corpus mode is {self.mode!r}; extract features from frames first"
            )
        utt = self.utterance(utterance_id)
        view = ViewAngle.of(view)
        if view not in utt.views:
            raise IllegalValue(f"{utterance_id} has no view {int(view)}")
        self._record(utt, view)
        return read_feature_file(
            feature_path(self.root, utt.subject, view, utt.phrase_id, utt.repetition)
        )

    def frames(self, utterance_id: str, view: ViewAngle) -> np.ndarray:
        """Read the grayscale frame stack (T, H, W) for one utterance view."""
        if self.mode != "images":
            raise IllegalValue(f"corpus mode is {self.mode!r}; it has no image frames")
        utt = self.utterance(utterance_id)
        view = ViewAngle.of(view)
        if view not in utt.views:
            raise IllegalValue(f"{utterance_id} has no view {int(view)}")
        self._record(utt, view)
        directory = frame_dir(self.root, utt.subject, view, utt.phrase_id, utt.repetition)
        count = utt.frame_counts[view]
        from PIL import Image

        frames = []
        for i in range(count):
            p = frame_path(directory, i)
            if not p.is_file():
                raise MissingFile(f"missing frame {p}")
            with Image.open(p) as img:
                frames.append(np.asarray(img.convert("L"), dtype=np.float64))
        stack = np.stack(frames, axis=0)
        if stack.shape[1:] != (self.resolution[1], self.resolution[0]):
            raise IllegalValue(
                f"{directory} frames are {stack.shape[2]}x{stack.shape[1]}, "
                f"manifest says {self.resolution[0]}x{self.resolution[1]}"
            )
        return stack


def manifest_dict(corpus: Corpus) -> dict:
    """Canonical manifest content (stable key order for fingerprinting)."""
    return {
        "format": "lipfuse-corpus",
        "version": 1,
        "mode": corpus.mode,
        "frame_rate": corpus.frame_rate,
        "resolution": list(corpus.resolution),
        "views": [int(v) for v in corpus.views],
        "subjects": list(corpus.subjects),
        "phrases": [
            {"phrase_id": p.phrase_id, "words": list(p.words)}
            for p in sorted(corpus.phrases, key=lambda p: p.phrase_id)
        ],
        "utterances": [
            {
                "utterance_id": u.utterance_id,
                "subject": u.subject,
                "phrase_id": u.phrase_id,
                "repetition": u.repetition,
                "frames": {str(int(v)): u.frame_counts[v] for v in u.views},
            }
            for u in corpus.utterances
        ],
    }


def write_manifest(corpus: Corpus) -> Path:
    path = corpus.root / MANIFEST_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest_dict(corpus), indent=1) + "\n", encoding="utf-8")
    return path


def corpus_fingerprint(corpus: Corpus) -> str:
    """Stable digest of the manifest, used to key cached experiment state."""
    blob = json.dumps(manifest_dict(corpus), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _require(obj: dict, key: str, kind, where: str):
    if key not in obj:
        raise SchemaViolation(f"{where}: missing key {key!r}")
    value = obj[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise SchemaViolation(f"{where}: {key!r} must be a number")
        return float(value)
    if not isinstance(value, kind):
        raise SchemaViolation(f"{where}: {key!r} must be {kind.__name__}")
    return value


def load_corpus(root) -> Corpus:
    """Load a corpus from its manifest; frame labels load when present."""
    root = Path(root)
    manifest = root / MANIFEST_NAME
    if not manifest.is_file():
        raise MissingFile(f"no {MANIFEST_NAME} under {root}")
    try:
        doc = json.loads(manifest.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{manifest} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaViolation(f"{manifest}: manifest must be a JSON object")
    where = str(manifest)
    mode = _require(doc, "mode", str, where)
    if mode not in ("features", "images"):
        raise SchemaViolation(f"{where}: mode must be 'features' or 'images'")
    frame_rate = _require(doc, "frame_rate", float, where)
    resolution = _require(doc, "resolution", list, where)
    if len(resolution) != 2 or not all(isinstance(v, int) and v > 0 for v in resolution):
        raise SchemaViolation(f"{where}: resolution must be two positive integers")
    views = tuple(ViewAngle.of(v) for v in _require(doc, "views", list, where))
    subjects = tuple(_require(doc, "subjects", list, where))
    if len(set(subjects)) != len(subjects):
        raise SchemaViolation(f"{where}: duplicate subjects")
    phrases = PhraseSet(
        tuple(
            Phrase(
                _require(p, "phrase_id", int, where),
                tuple(_require(p, "words", list, where)),
            )
            for p in _require(doc, "phrases", list, where)
        )
    )
    utterances = []
    for entry in _require(doc, "utterances", list, where):
        frames = _require(entry, "frames", dict, where)
        utt_views = tuple(sorted(ViewAngle.of(int(k)) for k in frames))
        utterances.append(
            Utterance(
                utterance_id=_require(entry, "utterance_id", str, where),
                subject=_require(entry, "subject", str, where),
                phrase_id=_require(entry, "phrase_id", int, where),
                repetition=_require(entry, "repetition", int, where),
                views=utt_views,
                frame_counts={ViewAngle.of(int(k)): int(v) for k, v in frames.items()},
            )
        )
    corpus = Corpus(
        root=root,
        mode=mode,
        frame_rate=frame_rate,
        resolution=(resolution[0], resolution[1]),
        views=views,
        subjects=subjects,
        phrases=phrases,
        utterances=tuple(utterances),
    )
    labels_file = root / LABELS_NAME
    if labels_file.is_file():
        corpus.labels, _, _ = read_label_file(labels_file)
    return corpus


def scan_corpus(root, phrases: PhraseSet, frame_rate: float = 30.0) -> Corpus:
    """Build a manifest by walking a bare directory tree of image utterances.

    Expects `<root>/<subject>/<view>/p<phrase>_r<rep>/frame_*.pgm`. Useful
    for data recorded outside this tool; the phrase inventory must be
    supplied because the tree does not encode word sequences.
    """
    root = Path(root)
    if not root.is_dir():
        raise MissingFile(f"corpus root {root} is not a directory")
    subjects = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not subjects:
        raise MissingFile(f"no subject directories under {root}")
    views_seen: set[ViewAngle] = set()
    entries: dict[tuple[str, int, int], dict] = {}
    resolution = None
    from PIL import Image

    for subject in subjects:
        for view_dir in sorted((root / subject).iterdir()):
            if not view_dir.is_dir():
                continue
            view = ViewAngle.of(int(view_dir.name))
            views_seen.add(view)
            for utt_dir in sorted(view_dir.iterdir()):
                if not utt_dir.is_dir():
                    continue
                name = utt_dir.name
                if not name.startswith("p") or "_r" not in name:
                    raise SchemaViolation(
                        f"unrecognized utterance directory name {utt_dir}"
                    )
                pid_text, rep_text = name[1:].split("_r", 1)
                phrase_id, repetition = int(pid_text), int(rep_text)
                count = len(list(utt_dir.glob("frame_*.pgm")))
                if count == 0:
                    raise MissingFile(f"no frames under {utt_dir}")
                if resolution is None:
                    with Image.open(frame_path(utt_dir, 0)) as img:
                        resolution = (img.width, img.height)
                key = (subject, phrase_id, repetition)
                entry = entries.setdefault(key, {})
                entry[view] = count
    utterances = tuple(
        Utterance(
            utterance_id=utterance_id_for(subject, phrase_id, repetition),
            subject=subject,
            phrase_id=phrase_id,
            repetition=repetition,
            views=tuple(sorted(entry)),
            frame_counts=dict(entry),
        )
        for (subject, phrase_id, repetition), entry in sorted(entries.items())
    )
    corpus = Corpus(
        root=root,
        mode="images",
        frame_rate=frame_rate,
        resolution=resolution,
        views=tuple(sorted(views_seen)),
        subjects=tuple(subjects),
        phrases=phrases,
        utterances=utterances,
    )
    labels_file = root / LABELS_NAME
    if labels_file.is_file():
        corpus.labels, _, _ = read_label_file(labels_file)
    return corpus
