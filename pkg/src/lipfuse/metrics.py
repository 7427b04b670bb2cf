"""Word- and sentence-level scoring against reference transcriptions.

Alignment is minimum edit distance with unit costs. The backtrace resolves
cost ties with a fixed preference (match, then substitution, then deletion,
then insertion) so the reported counts are deterministic.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

from .core import SILENCE_WORD
from .errors import EmptyBatch, EmptyReference, IllegalValue


def strip_silence(words) -> tuple[str, ...]:
    """Remove silence tokens; evaluation never scores them."""
    return tuple(w for w in words if w != SILENCE_WORD)


@dataclass(frozen=True)
class AlignmentCounts:
    n: int
    hits: int
    substitutions: int
    deletions: int
    insertions: int

    def __post_init__(self):
        if self.hits + self.substitutions + self.deletions != self.n:
            raise IllegalValue(
                f"inconsistent counts: H={self.hits} S={self.substitutions} "
                f"D={self.deletions} do not partition N={self.n}"
            )

    def __add__(self, other: "AlignmentCounts") -> "AlignmentCounts":
        return AlignmentCounts(
            self.n + other.n,
            self.hits + other.hits,
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
        )


def align(reference, hypothesis) -> AlignmentCounts:
    """Count hits, substitutions, deletions, insertions for one pair.

    Both inputs are word sequences with silence already stripped. Among all
    minimum-cost alignments the backtrace picks, step by step from the end,
    the first applicable of: match, substitution, deletion, insertion.
    """
    ref = tuple(reference)
    hyp = tuple(hypothesis)
    n, m = len(ref), len(hyp)

    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dist[i][0] = i
    for j in range(m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        row = dist[i]
        prev = dist[i - 1]
        rw = ref[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (rw != hyp[j - 1])
            dele = prev[j] + 1
            ins = row[j - 1] + 1
            row[j] = min(sub, dele, ins)

    hits = subs = dels = inss = 0
    i, j = n, m
    while i > 0 or j > 0:
        here = dist[i][j]
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and dist[i - 1][j - 1] == here:
            hits += 1
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dist[i - 1][j - 1] + 1 == here:
            subs += 1
            i, j = i - 1, j - 1
        elif i > 0 and dist[i - 1][j] + 1 == here:
            dels += 1
            i -= 1
        else:
            inss += 1
            j -= 1
    return AlignmentCounts(n, hits, subs, dels, inss)


def word_accuracy(counts: AlignmentCounts) -> float:
    """(H - I) / N * 100; can be negative when insertions dominate."""
    if counts.n == 0:
        raise EmptyReference("word accuracy needs a non-empty reference")
    return (counts.hits - counts.insertions) / counts.n * 100.0


def word_correctness(counts: AlignmentCounts) -> float:
    """H / N * 100; insertions do not count against it."""
    if counts.n == 0:
        raise EmptyReference("word correctness needs a non-empty reference")
    return counts.hits / counts.n * 100.0


def sentence_correctness(pairs) -> float:
    """Percentage of (reference, hypothesis) pairs that match exactly."""
    pairs = list(pairs)
    if not pairs:
        raise EmptyBatch("sentence correctness needs at least one pair")
    exact = sum(1 for ref, hyp in pairs if tuple(ref) == tuple(hyp))
    return exact / len(pairs) * 100.0


@dataclass(frozen=True)
class UtteranceScore:
    utterance_id: str
    reference: tuple[str, ...]
    hypothesis: tuple[str, ...]
    counts: AlignmentCounts
    exact: bool


@dataclass(frozen=True)
class ScoreReport:
    """Pooled scores over a batch plus the per-utterance detail rows."""

    word_accuracy: float
    word_correctness: float
    sentence_correctness: float
    rows: tuple[UtteranceScore, ...]

    @property
    def totals(self) -> AlignmentCounts:
        total = AlignmentCounts(0, 0, 0, 0, 0)
        for row in self.rows:
            total = total + row.counts
        return total


def score_batch(pairs, utterance_ids=None) -> ScoreReport:
    """Score a batch of (reference, hypothesis) word-sequence pairs.

    Silence tokens are stripped before alignment. Word metrics pool the edit
    counts over the batch; sentence correctness is the exact-match rate.
    """
    pairs = [(strip_silence(r), strip_silence(h)) for r, h in pairs]
    if not pairs:
        raise EmptyBatch("no utterances to score")
    if utterance_ids is None:
        utterance_ids = [f"utt{i:04d}" for i in range(len(pairs))]
    utterance_ids = list(utterance_ids)
    if len(utterance_ids) != len(pairs):
        raise IllegalValue(
            f"{len(utterance_ids)} utterance ids for {len(pairs)} pairs"
        )
    rows = []
    total = AlignmentCounts(0, 0, 0, 0, 0)
    for uid, (ref, hyp) in zip(utterance_ids, pairs):
        if not ref:
            raise EmptyReference(f"utterance {uid} has an empty reference")
        counts = align(ref, hyp)
        total = total + counts
        rows.append(UtteranceScore(uid, ref, hyp, counts, ref == hyp))
    return ScoreReport(
        word_accuracy=word_accuracy(total),
        word_correctness=word_correctness(total),
        sentence_correctness=sum(r.exact for r in rows) / len(rows) * 100.0,
        rows=tuple(rows),
    )


# -- score CSV -------------------------------------------------------------------

SCORE_CSV_COLUMNS = (
    "combination",
    "scheme",
    "sentence_correctness",
    "word_accuracy",
    "word_correctness",
)


def render_score_csv(rows) -> str:
    """Rows of (combination_label, scheme, ScoreReport) to CSV at one decimal."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCORE_CSV_COLUMNS)
    for combination, scheme, report in rows:
        writer.writerow(
            [
                combination,
                scheme,
                f"{report.sentence_correctness:.1f}",
                f"{report.word_accuracy:.1f}",
                f"{report.word_correctness:.1f}",
            ]
        )
    return buf.getvalue()


def write_score_csv(path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_score_csv(rows), encoding="utf-8")
