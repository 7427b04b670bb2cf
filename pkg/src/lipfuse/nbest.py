"""N-best hypothesis lists and their JSON-lines serialization.

One JSON document per utterance/view pair, one document per line. The
log-likelihood is written with 17 significant digits so that a float64 value
survives the round trip bit-for-bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .core import ViewAngle
from .errors import IllegalValue, MissingFile, SchemaViolation


@dataclass(frozen=True)
class NBestEntry:
    phrase_id: int
    words: tuple[str, ...]
    loglik: float

    def __post_init__(self):
        if not math.isfinite(self.loglik):
            raise IllegalValue(
                f"n-best log-likelihood must be finite, got {self.loglik!r} "
                f"for phrase {self.phrase_id}"
            )


@dataclass(frozen=True)
class NBestList:
    """Hypotheses for one utterance seen from one view, best first.

    Ordering invariant: non-increasing log-likelihood, ties broken by
    ascending phrase id. Phrase ids are unique within a list.
    """

    utterance_id: str
    view: ViewAngle
    entries: tuple[NBestEntry, ...]

    def __post_init__(self):
        ids = [e.phrase_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise IllegalValue(
                f"duplicate phrase ids in n-best list for {self.utterance_id}"
            )
        key = [(-e.loglik, e.phrase_id) for e in self.entries]
        if key != sorted(key):
            raise IllegalValue(
                f"n-best list for {self.utterance_id} view {self.view} is not "
                "sorted by descending log-likelihood / ascending phrase id"
            )

    @property
    def best(self) -> NBestEntry:
        if not self.entries:
            raise IllegalValue(f"n-best list for {self.utterance_id} is empty")
        return self.entries[0]


def _fmt17(x: float) -> str:
    return format(float(x), ".17g")


def nbest_to_json(nb: NBestList) -> str:
    entries = ", ".join(
        '{"phrase_id": %d, "words": %s, "loglik": %s}'
        % (e.phrase_id, json.dumps(list(e.words)), _fmt17(e.loglik))
        for e in nb.entries
    )
    return '{"utterance_id": %s, "view_deg": %d, "entries": [%s]}' % (
        json.dumps(nb.utterance_id),
        int(nb.view),
        entries,
    )


def nbest_from_obj(obj: dict) -> NBestList:
    try:
        entries = tuple(
            NBestEntry(int(e["phrase_id"]), tuple(e["words"]), float(e["loglik"]))
            for e in obj["entries"]
        )
        return NBestList(str(obj["utterance_id"]), ViewAngle.of(obj["view_deg"]), entries)
    except (KeyError, TypeError) as exc:
        raise SchemaViolation(f"malformed n-best document: {exc}") from exc


def write_nbest_file(path, lists) -> None:
    """Write n-best lists as JSON lines (one utterance/view per line)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = "".join(nbest_to_json(nb) + "\n" for nb in lists)
    path.write_text(text, encoding="utf-8")


def read_nbest_file(path) -> list[NBestList]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"n-best file not found: {path}")
    out = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"{path}:{line_no}: invalid JSON: {exc}") from exc
        out.append(nbest_from_obj(obj))
    return out
