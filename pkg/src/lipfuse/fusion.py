"""Weighted decision fusion of per-view n-best lists.

Each camera view decodes independently and contributes a log-likelihood per
phrase hypothesis; a convex weight vector (stored as integer tenths so the
weights sum to one exactly) combines them per hypothesis:

    fused(h) = sum_v lambda_v * score_v(h)

A hypothesis missing from a view's list is backed off to that view's worst
listed log-likelihood minus a fixed penalty, so a single view can never veto
a hypothesis outright.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import FeatureSequence, ViewAngle
from .errors import (
    AllZeroCorrectness,
    EmptyLists,
    EmptyViewSet,
    IllegalValue,
    LengthMismatch,
    MissingFile,
    SchemaViolation,
    UnsupportedK,
    UtteranceMismatch,
    ViewWeightMismatch,
)
from .nbest import NBestList, _fmt17

TOTAL_TENTHS = 10


@dataclass(frozen=True)
class FusionWeights:
    """A convex combination over views, held as integer tenths.

    views are strictly ascending; tenths align with them and sum to exactly
    10, so the float weights sum to exactly 1.0.
    """

    views: tuple[ViewAngle, ...]
    tenths: tuple[int, ...]

    def __post_init__(self):
        if not self.views:
            raise EmptyViewSet("fusion weights need at least one view")
        if list(self.views) != sorted(set(self.views)):
            raise IllegalValue(f"views must be strictly ascending, got {self.views}")
        if len(self.tenths) != len(self.views):
            raise ViewWeightMismatch(
                f"{len(self.views)} views but {len(self.tenths)} weights"
            )
        for t in self.tenths:
            if not isinstance(t, int) or isinstance(t, bool) or not 0 <= t <= TOTAL_TENTHS:
                raise IllegalValue(f"weight tenths must be integers in [0, 10], got {t!r}")
        if sum(self.tenths) != TOTAL_TENTHS:
            raise IllegalValue(
                f"weight tenths must sum to exactly {TOTAL_TENTHS}, got "
                f"{self.tenths} (sum {sum(self.tenths)})"
            )

    def weight(self, view: ViewAngle) -> float:
        return self.tenths[self.views.index(view)] / 10.0

    def as_floats(self) -> tuple[float, ...]:
        return tuple(t / 10.0 for t in self.tenths)


@dataclass(frozen=True)
class FusedEntry:
    phrase_id: int
    words: tuple[str, ...]
    score: float
    #: aligned with FusedResult.views: True where the view listed this
    #: hypothesis, False where the backoff score was used.
    exact: tuple[bool, ...]


@dataclass(frozen=True)
class FusedResult:
    utterance_id: str
    views: tuple[ViewAngle, ...]
    entries: tuple[FusedEntry, ...]

    @property
    def best(self) -> FusedEntry:
        return self.entries[0]


def _normalize_lists(lists) -> dict[ViewAngle, NBestList]:
    if isinstance(lists, dict):
        items = [(ViewAngle.of(v), nb) for v, nb in lists.items()]
        for view, nb in items:
            if nb.view != view:
                raise ViewWeightMismatch(
                    f"list keyed {view} carries view {nb.view}"
                )
        return dict(items)
    out: dict[ViewAngle, NBestList] = {}
    for nb in lists:
        if nb.view in out:
            raise IllegalValue(f"two n-best lists for view {nb.view}")
        out[nb.view] = nb
    return out


def fuse(
    lists,
    weights: FusionWeights,
    *,
    backoff_delta: float = 10.0,
    universe: str = "union",
) -> FusedResult:
    """Fuse per-view n-best lists into a single ranked hypothesis list.

    `lists` is a mapping view -> NBestList (or an iterable of lists with
    distinct views), all for the same utterance. The hypothesis universe is
    the union of the lists (or their intersection when requested); scores
    accumulate over views in ascending-angle order.
    """
    by_view = _normalize_lists(lists)
    if not by_view:
        raise EmptyLists("no n-best lists to fuse")
    views = tuple(sorted(by_view))
    if views != weights.views:
        raise ViewWeightMismatch(
            f"weights cover views {tuple(map(int, weights.views))}, "
            f"lists cover {tuple(map(int, views))}"
        )
    utt_ids = {nb.utterance_id for nb in by_view.values()}
    if len(utt_ids) != 1:
        raise UtteranceMismatch(f"lists mix utterances: {sorted(utt_ids)}")
    for v in views:
        if not by_view[v].entries:
            raise EmptyLists(f"n-best list for view {v} is empty")
    if backoff_delta < 0:
        raise IllegalValue(f"backoff delta must be >= 0, got {backoff_delta}")
    if universe not in ("union", "intersection"):
        raise IllegalValue(f"unknown hypothesis universe {universe!r}")

    pids, words_of, matrix, exact_flags = _score_table(by_view, views,
                                                       backoff_delta, universe)
    lambdas = weights.as_floats()
    entries = []
    for j, pid in enumerate(pids):
        score = 0.0
        for i, lam in enumerate(lambdas):
            score += lam * matrix[i][j]
        entries.append(
            FusedEntry(pid, words_of[pid], score,
                       tuple(bool(exact_flags[i][j]) for i in range(len(views))))
        )
    entries.sort(key=lambda e: (-e.score, e.phrase_id))
    utterance_id = next(iter(utt_ids))
    return FusedResult(utterance_id, views, tuple(entries))


def _score_table(by_view, views, backoff_delta, universe):
    """Per-view hypothesis scores with backoff filled in.

    Returns (pids, words_of, matrix, exact) where matrix[i][j] is view
    views[i]'s score (listed or backoff) for hypothesis pids[j]. fuse() and
    the bulk weight-surface evaluator share this table so their arithmetic
    agrees bit for bit.
    """
    listed: dict[ViewAngle, dict[int, float]] = {}
    backoff: dict[ViewAngle, float] = {}
    words_of: dict[int, tuple[str, ...]] = {}
    for v in views:
        scores = {e.phrase_id: e.loglik for e in by_view[v].entries}
        listed[v] = scores
        backoff[v] = min(scores.values()) - backoff_delta
        for e in by_view[v].entries:
            prior = words_of.setdefault(e.phrase_id, e.words)
            if prior != e.words:
                raise IllegalValue(
                    f"phrase {e.phrase_id} has conflicting word sequences "
                    f"{prior} vs {e.words}"
                )
    if universe == "union":
        pids = tuple(sorted(words_of))
    else:
        common = set(listed[views[0]])
        for v in views[1:]:
            common &= set(listed[v])
        if not common:
            raise EmptyLists("intersection universe is empty")
        pids = tuple(sorted(common))
    matrix = [
        [listed[v].get(pid, backoff[v]) for pid in pids] for v in views
    ]
    exact = [[pid in listed[v] for pid in pids] for v in views]
    return pids, words_of, matrix, exact


def score_table(lists, *, backoff_delta: float = 10.0, universe: str = "union"):
    """Public view of the fused scoring table for one utterance.

    Returns (views, pids, words_of, matrix, exact); see fuse() for the
    backoff and universe semantics.
    """
    by_view = _normalize_lists(lists)
    if not by_view:
        raise EmptyLists("no n-best lists to score")
    views = tuple(sorted(by_view))
    utt_ids = {nb.utterance_id for nb in by_view.values()}
    if len(utt_ids) != 1:
        raise UtteranceMismatch(f"lists mix utterances: {sorted(utt_ids)}")
    for v in views:
        if not by_view[v].entries:
            raise EmptyLists(f"n-best list for view {v} is empty")
    if backoff_delta < 0:
        raise IllegalValue(f"backoff delta must be >= 0, got {backoff_delta}")
    if universe not in ("union", "intersection"):
        raise IllegalValue(f"unknown hypothesis universe {universe!r}")
    pids, words_of, matrix, exact = _score_table(by_view, views, backoff_delta,
                                                 universe)
    return views, pids, words_of, matrix, exact


# -- weight enumeration and selection -------------------------------------------


def enumerate_simplex(k: int, step: float = 0.1) -> list[tuple[int, ...]]:
    """All k-tuples of integer tenths summing to 10, lexicographically ascending.

    `step` must divide the unit total into whole tenths; the default 0.1 walks
    the full tenths grid (C(10+k-1, k-1) points).
    """
    if not isinstance(k, int) or not 1 <= k <= 5:
        raise UnsupportedK(f"simplex enumeration supports 1 <= k <= 5 views, got {k}")
    inc = round(step * 10)
    if inc < 1 or abs(step * 10 - inc) > 1e-9 or TOTAL_TENTHS % inc != 0:
        raise IllegalValue(
            f"step must divide 1.0 into whole tenths, got {step}"
        )
    out: list[tuple[int, ...]] = []

    def rec(prefix: tuple[int, ...], remaining: int, slots: int) -> None:
        if slots == 1:
            out.append(prefix + (remaining,))
            return
        for first in range(0, remaining + 1, inc):
            rec(prefix + (first,), remaining - first, slots - 1)

    rec((), TOTAL_TENTHS, k)
    return out


def grid_search_weights(views, evaluator, step: float = 0.1):
    """Exhaustive search over the weight simplex; first maximizer wins ties.

    `evaluator` maps a FusionWeights to a comparable score (higher is better).
    Returns (best_weights, best_score).
    """
    views = tuple(sorted(ViewAngle.of(v) for v in set(views)))
    if not views:
        raise EmptyViewSet("grid search needs at least one view")
    best: FusionWeights | None = None
    best_score = None
    for tenths in enumerate_simplex(len(views), step):
        w = FusionWeights(views, tenths)
        score = evaluator(w)
        if best is None or score > best_score:
            best, best_score = w, score
    return best, best_score


def training_recognition_weights(correctness) -> FusionWeights:
    """Proportional weights from per-view training correctness values.

    Normalizes the (non-negative, not all zero) correctness values and rounds
    them to tenths by largest remainder; remainder ties favor the lower view
    angle. The tenths always sum to exactly 10.
    """
    items = sorted((ViewAngle.of(v), float(c)) for v, c in dict(correctness).items())
    if not items:
        raise EmptyViewSet("no views given")
    for v, c in items:
        if not math.isfinite(c) or c < 0:
            raise IllegalValue(f"correctness for view {v} must be >= 0, got {c}")
    total = sum(c for _, c in items)
    if total <= 0:
        raise AllZeroCorrectness("all per-view correctness values are zero")
    views = tuple(v for v, _ in items)
    raw = [TOTAL_TENTHS * c / total for _, c in items]
    base = [math.floor(r) for r in raw]
    leftover = TOTAL_TENTHS - sum(base)
    order = sorted(
        range(len(views)), key=lambda i: (-(raw[i] - base[i]), int(views[i]))
    )
    tenths = list(base)
    for i in order[:leftover]:
        tenths[i] += 1
    return FusionWeights(views, tuple(tenths))


def feature_fuse(streams) -> FeatureSequence:
    """Frame-wise concatenation of per-view streams in ascending angle order."""
    by_view = {ViewAngle.of(v): s for v, s in dict(streams).items()}
    if not by_view:
        raise EmptyViewSet("no streams to concatenate")
    views = sorted(by_view)
    lengths = {v: by_view[v].num_frames for v in views}
    if len(set(lengths.values())) != 1:
        raise LengthMismatch(f"streams disagree on frame count: {lengths}")
    rates = {by_view[v].frame_rate for v in views}
    if len(rates) != 1:
        raise IllegalValue(f"streams disagree on frame rate: {sorted(rates)}")
    data = np.hstack([by_view[v].data for v in views])
    return FeatureSequence(data, rates.pop())


# -- weights file ----------------------------------------------------------------


def write_weights_file(path, weights: FusionWeights, scheme: str) -> None:
    if scheme not in ("grid", "rec"):
        raise IllegalValue(f"weights scheme must be 'grid' or 'rec', got {scheme!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "views": [int(v) for v in weights.views],
        "tenths": list(weights.tenths),
        "scheme": scheme,
    }
    path.write_text(json.dumps(doc) + "\n", encoding="utf-8")


def read_weights_file(path) -> tuple[FusionWeights, str]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"weights file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        views = tuple(ViewAngle.of(v) for v in doc["views"])
        tenths = tuple(int(t) for t in doc["tenths"])
        scheme = str(doc["scheme"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise SchemaViolation(f"malformed weights file {path}: {exc}") from exc
    if scheme not in ("grid", "rec"):
        raise IllegalValue(f"weights scheme must be 'grid' or 'rec', got {scheme!r}")
    return FusionWeights(views, tenths), scheme


# -- fused-result file ------------------------------------------------------------


def fused_to_json(res: FusedResult) -> str:
    views = ", ".join(str(int(v)) for v in res.views)
    entries = ", ".join(
        '{"phrase_id": %d, "words": %s, "score": %s, "exact": %s}'
        % (
            e.phrase_id,
            json.dumps(list(e.words)),
            _fmt17(e.score),
            json.dumps(list(e.exact)),
        )
        for e in res.entries
    )
    return '{"utterance_id": %s, "views": [%s], "entries": [%s]}' % (
        json.dumps(res.utterance_id),
        views,
        entries,
    )


def write_fused_file(path, results) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        "".join(fused_to_json(r) + "\n" for r in results), encoding="utf-8"
    )


def read_fused_file(path) -> list[FusedResult]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"fused-result file not found: {path}")
    out = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            views = tuple(ViewAngle.of(v) for v in obj["views"])
            entries = tuple(
                FusedEntry(
                    int(e["phrase_id"]),
                    tuple(e["words"]),
                    float(e["score"]),
                    tuple(bool(x) for x in e["exact"]),
                )
                for e in obj["entries"]
            )
            out.append(FusedResult(str(obj["utterance_id"]), views, entries))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise SchemaViolation(f"{path}:{line_no}: malformed document: {exc}") from exc
    return out
