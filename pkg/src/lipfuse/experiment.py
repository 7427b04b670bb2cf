"""Cross-validated weight selection and the full view-combination experiment.

The protocol keeps a hard wall between splits: leave-one-subject-out folds
on the training split produce per-view n-best lists, weight vectors are
chosen from those alone, and only then are test-subject recordings decoded.
The corpus access log makes the wall checkable.

Every expensive artifact (fold decodes, per-view models, test decodes,
feature-fusion decodes) is cached on disk keyed by the corpus fingerprint
and plan digest, written atomically, so an interrupted run resumes into the
identical final table.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import Config
from .core import (
    DatasetSplit,
    ViewAngle,
    combo_label,
    enumerate_view_combinations,
)
from .corpus import Corpus, corpus_fingerprint, load_corpus
from .errors import EmptyTable, IllegalValue, TooFewSubjects
from .fusion import (
    FusionWeights,
    feature_fuse,
    fuse,
    enumerate_simplex,
    grid_search_weights,
    score_table,
    training_recognition_weights,
)
from .metrics import score_batch
from .nbest import NBestList, read_nbest_file, write_nbest_file
from .tandem import (
    decode_nbest,
    read_recognizer,
    train_recognizer,
    write_recognizer,
)

SCHEMES = ("grid", "rec", "feat")


@dataclass(frozen=True)
class ExperimentPlan:
    """Which combinations, schemes and split an experiment run covers."""

    combinations: tuple[tuple[ViewAngle, ...], ...]
    split: DatasetSplit
    schemes: tuple[str, ...] = SCHEMES
    nbest: int = 5
    seed: int = 42

    def __post_init__(self):
        if not self.combinations:
            raise IllegalValue("plan needs at least one view combination")
        for scheme in self.schemes:
            if scheme not in SCHEMES:
                raise IllegalValue(f"unknown scheme {scheme!r}")
        if len(set(self.schemes)) != len(self.schemes):
            raise IllegalValue("duplicate schemes in plan")
        if self.nbest < 1:
            raise IllegalValue(f"nbest must be >= 1, got {self.nbest}")
        seen = set()
        for combo in self.combinations:
            if tuple(combo) != tuple(sorted(combo)) or len(set(combo)) != len(combo):
                raise IllegalValue(f"combination {combo} must be sorted and unique")
            if tuple(combo) in seen:
                raise IllegalValue(f"duplicate combination {combo_label(combo)}")
            seen.add(tuple(combo))

    @property
    def views(self) -> tuple[ViewAngle, ...]:
        out: set[ViewAngle] = set()
        for combo in self.combinations:
            out.update(combo)
        return tuple(sorted(out))

    def check_against(self, corpus: Corpus) -> None:
        missing = set(self.views) - set(corpus.views)
        if missing:
            raise IllegalValue(
                f"plan uses views absent from the corpus: {sorted(map(int, missing))}"
            )
        unknown = (set(self.split.train_subjects) | set(self.split.test_subjects)) - set(
            corpus.subjects
        )
        if unknown:
            raise IllegalValue(f"plan names unknown subjects: {sorted(unknown)}")

    @classmethod
    def default_for(cls, corpus: Corpus, config: Config) -> "ExperimentPlan":
        if config.split.train_subjects or config.split.test_subjects:
            split = DatasetSplit(
                tuple(config.split.train_subjects), tuple(config.split.test_subjects)
            )
        else:
            split = DatasetSplit.default_for(corpus.subjects)
        return cls(
            combinations=tuple(enumerate_view_combinations(corpus.views)),
            split=split,
            schemes=tuple(config.fusion.schemes),
            nbest=config.fusion.nbest,
            seed=config.seed,
        )

    def to_dict(self) -> dict:
        return {
            "combinations": [combo_label(c) for c in self.combinations],
            "schemes": list(self.schemes),
            "train_subjects": list(self.split.train_subjects),
            "test_subjects": list(self.split.test_subjects),
            "nbest": self.nbest,
            "seed": self.seed,
        }


@dataclass
class LoocvResult:
    """Fold decodes plus everything weight selection needs."""

    folds: dict  # subject -> {ViewAngle: tuple[NBestList, ...]}
    surfaces: dict  # combo label -> tuple[(tenths, cv correctness %), ...]
    single_view_correctness: dict  # ViewAngle -> percent


@dataclass
class ResultRow:
    combination: str
    scheme: str
    weights: FusionWeights | None
    sentence_correctness: float
    word_accuracy: float
    word_correctness: float
    subject_mean_sentence_correctness: float
    counts: dict

    def to_dict(self) -> dict:
        return {
            "combination": self.combination,
            "scheme": self.scheme,
            "weights": None
            if self.weights is None
            else {
                "views": [int(v) for v in self.weights.views],
                "tenths": list(self.weights.tenths),
            },
            "sentence_correctness": self.sentence_correctness,
            "word_accuracy": self.word_accuracy,
            "word_correctness": self.word_correctness,
            "subject_mean_sentence_correctness": self.subject_mean_sentence_correctness,
            "counts": dict(self.counts),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ResultRow":
        w = doc.get("weights")
        weights = (
            None
            if w is None
            else FusionWeights(
                tuple(ViewAngle.of(v) for v in w["views"]), tuple(w["tenths"])
            )
        )
        return cls(
            combination=doc["combination"],
            scheme=doc["scheme"],
            weights=weights,
            sentence_correctness=doc["sentence_correctness"],
            word_accuracy=doc["word_accuracy"],
            word_correctness=doc["word_correctness"],
            subject_mean_sentence_correctness=doc["subject_mean_sentence_correctness"],
            counts=dict(doc["counts"]),
        )


@dataclass
class ResultsTable:
    combinations: tuple[str, ...]
    schemes: tuple[str, ...]
    rows: dict = field(default_factory=dict)  # (combination, scheme) -> ResultRow
    cv_single_view: dict = field(default_factory=dict)  # ViewAngle -> percent
    fingerprint: str = ""
    complete: bool = True

    def row(self, combination: str, scheme: str):
        return self.rows.get((combination, scheme))

    def to_dict(self) -> dict:
        return {
            "format": "lipfuse-results",
            "version": 1,
            "fingerprint": self.fingerprint,
            "complete": self.complete,
            "combinations": list(self.combinations),
            "schemes": list(self.schemes),
            "cv_single_view": {
                str(int(v)): c for v, c in sorted(self.cv_single_view.items())
            },
            "rows": [
                self.rows[key].to_dict()
                for key in sorted(
                    self.rows, key=lambda k: (self.combinations.index(k[0]), k[1])
                )
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ResultsTable":
        table = cls(
            combinations=tuple(doc["combinations"]),
            schemes=tuple(doc["schemes"]),
            fingerprint=doc.get("fingerprint", ""),
            complete=bool(doc.get("complete", False)),
        )
        table.cv_single_view = {
            ViewAngle.of(int(k)): float(v)
            for k, v in doc.get("cv_single_view", {}).items()
        }
        for row_doc in doc.get("rows", []):
            row = ResultRow.from_dict(row_doc)
            table.rows[(row.combination, row.scheme)] = row
        return table


# -- cache plumbing ----------------------------------------------------------------


def _atomic(path: Path, writer) -> None:
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    writer(tmp)
    os.replace(tmp, path)


def _digest(obj) -> str:
    return hashlib.sha256(
        json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


def _plan_digest(plan: ExperimentPlan, config: Config) -> str:
    return _digest(
        {
            "plan": plan.to_dict(),
            "recognizer": asdict(config.recognizer),
            "fusion": {
                "nbest": config.fusion.nbest,
                "backoff_delta": config.fusion.backoff_delta,
                "step": config.fusion.step,
                "hypothesis_universe": config.fusion.hypothesis_universe,
            },
        }
    )


def _prepare_cache(cache_dir: Path, corpus_fp: str, plan_fp: str) -> None:
    stamp = cache_dir / "fingerprint.txt"
    want = f"{corpus_fp}\n{plan_fp}\n"
    if cache_dir.is_dir():
        if stamp.is_file() and stamp.read_text() == want:
            return
        shutil.rmtree(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    stamp.write_text(want)


# -- parallel task bodies (top level so they pickle) --------------------------------


def _parallel(fn, args_list, jobs: int) -> list:
    if jobs <= 1 or len(args_list) <= 1:
        return [fn(a) for a in args_list]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, args_list))


def _train_view_model(corpus: Corpus, subjects, view: ViewAngle, rec_cfg,
                      trained_on: str):
    data = [
        (corpus.features(u.utterance_id, view), corpus.words_of(u.utterance_id))
        for u in corpus.utterances_for(subjects)
    ]
    return train_recognizer(data, corpus.phrases, rec_cfg, trained_on=trained_on)


def _decode_subjects(model, corpus: Corpus, subjects, view: ViewAngle,
                     nbest: int) -> list[NBestList]:
    return [
        decode_nbest(
            model, corpus.features(u.utterance_id, view), u.utterance_id, view, nbest
        )
        for u in corpus.utterances_for(subjects)
    ]


def _fold_task(args):
    root, held_out, rest, view_int, rec_cfg, nbest, out_file = args
    out_file = Path(out_file)
    if out_file.is_file():
        return str(out_file), ()
    corpus = load_corpus(root)
    view = ViewAngle.of(view_int)
    model = _train_view_model(corpus, rest, view, rec_cfg, f"loocv:-{held_out}")
    lists = _decode_subjects(model, corpus, (held_out,), view, nbest)
    _atomic(out_file, lambda p: write_nbest_file(p, lists))
    return str(out_file), corpus.access_log


def _final_model_task(args):
    root, train_subjects, view_int, rec_cfg, out_file = args
    out_file = Path(out_file)
    if out_file.is_file():
        return str(out_file), ()
    corpus = load_corpus(root)
    view = ViewAngle.of(view_int)
    model = _train_view_model(corpus, train_subjects, view, rec_cfg, "train-split")
    _atomic(out_file, lambda p: write_recognizer(p, model))
    return str(out_file), corpus.access_log


def _test_decode_task(args):
    root, model_file, test_subjects, view_int, nbest, out_file = args
    out_file = Path(out_file)
    if out_file.is_file():
        return str(out_file), ()
    corpus = load_corpus(root)
    view = ViewAngle.of(view_int)
    model = read_recognizer(model_file)
    lists = _decode_subjects(model, corpus, test_subjects, view, nbest)
    _atomic(out_file, lambda p: write_nbest_file(p, lists))
    return str(out_file), corpus.access_log


def _feat_task(args):
    root, train_subjects, test_subjects, view_ints, rec_cfg, nbest, out_file = args
    out_file = Path(out_file)
    if out_file.is_file():
        return str(out_file), ()
    corpus = load_corpus(root)
    views = tuple(ViewAngle.of(v) for v in view_ints)

    def concat(utt_id: str):
        return feature_fuse({v: corpus.features(utt_id, v) for v in views})

    data = [
        (concat(u.utterance_id), corpus.words_of(u.utterance_id))
        for u in corpus.utterances_for(train_subjects)
    ]
    model = train_recognizer(data, corpus.phrases, rec_cfg,
                             trained_on=f"feat:{combo_label(views)}")
    lists = [
        decode_nbest(model, concat(u.utterance_id), u.utterance_id, views[0], nbest)
        for u in corpus.utterances_for(test_subjects)
    ]
    _atomic(out_file, lambda p: write_nbest_file(p, lists))
    return str(out_file), corpus.access_log


# -- weight surfaces -----------------------------------------------------------------


def _surface_for_combo(views, fold_lists_by_utt, references, simplex,
                       backoff_delta, universe):
    """CV sentence-correctness for every simplex weight vector.

    The per-hypothesis accumulation mirrors fuse() step for step (same
    additions in the same order), so the chosen weights are exactly what
    per-utterance fuse() calls would select.
    """
    lam = np.array(
        [FusionWeights(views, t).as_floats() for t in simplex], dtype=np.float64
    )  # (W, k)
    correct = np.zeros(len(simplex), dtype=np.int64)
    total = 0
    for utt_id, by_view in fold_lists_by_utt:
        ref = references[utt_id]
        _, pids, words_of, matrix, _ = score_table(
            {v: by_view[v] for v in views},
            backoff_delta=backoff_delta,
            universe=universe,
        )
        m = np.asarray(matrix, dtype=np.float64)  # (k, H)
        fused = np.zeros((len(simplex), m.shape[1]))
        for i in range(len(views)):
            fused += lam[:, i:i + 1] * m[i][None, :]
        best = fused.max(axis=1, keepdims=True)
        pid_arr = np.asarray(pids, dtype=np.int64)
        winner = np.where(fused == best, pid_arr[None, :], np.iinfo(np.int64).max).min(axis=1)
        hit = np.fromiter(
            (words_of[int(p)] == ref for p in winner), dtype=bool, count=len(simplex)
        )
        correct += hit
        total += 1
    values = 100.0 * correct / max(total, 1)
    return tuple((tuple(t), float(v)) for t, v in zip(simplex, values))


def run_loocv(corpus: Corpus, plan: ExperimentPlan, config: Config,
              cache_dir=None, jobs: int = 1) -> LoocvResult:
    """Leave-one-subject-out decodes on the training split plus weight surfaces.

    One fold per training subject: models trained on the remaining training
    subjects decode the held-out subject. Surfaces cover every multi-view
    combination in the plan; single-view CV correctness values feed the
    training-recognition weighting scheme.
    """
    plan.check_against(corpus)
    if corpus.mode != "features":
        raise IllegalValue(
            "cross-validation runs on feature corpora; "
            "extract features from the image corpus first"
        )
    train = plan.split.train_subjects
    if len(train) < 2:
        raise TooFewSubjects(
            f"leave-one-out needs >= 2 training subjects, got {len(train)}"
        )
    tmp_holder = None
    if cache_dir is None:
        tmp_holder = tempfile.TemporaryDirectory(prefix="lipfuse-loocv-")
        cache_dir = Path(tmp_holder.name)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    try:
        views = plan.views
        tasks = []
        for subject in sorted(train):
            rest = tuple(s for s in train if s != subject)
            for view in views:
                tasks.append(
                    (
                        str(corpus.root), subject, rest, int(view),
                        config.recognizer, plan.nbest,
                        str(cache_dir / f"fold_{subject}_{int(view)}.jsonl"),
                    )
                )
        for out_file, log in _parallel(_fold_task, tasks, jobs):
            corpus._access_log.extend(tuple(entry) for entry in log)

        folds: dict[str, dict[ViewAngle, tuple[NBestList, ...]]] = {}
        for subject in sorted(train):
            folds[subject] = {}
            for view in views:
                lists = read_nbest_file(cache_dir / f"fold_{subject}_{int(view)}.jsonl")
                folds[subject][view] = tuple(lists)

        references = {
            u.utterance_id: u_words
            for u in corpus.utterances
            for u_words in (corpus.words_of(u.utterance_id),)
        }
        # fold lists grouped per utterance, in deterministic corpus order
        by_utt: list[tuple[str, dict]] = []
        for subject in sorted(train):
            per_view = folds[subject]
            by_id: dict[str, dict] = {}
            for view in views:
                for nb in per_view[view]:
                    by_id.setdefault(nb.utterance_id, {})[view] = nb
            for u in corpus.utterances_for((subject,)):
                by_utt.append((u.utterance_id, by_id[u.utterance_id]))

        single: dict[ViewAngle, float] = {}
        for view in views:
            hits = 0
            for utt_id, by_view in by_utt:
                hits += by_view[view].best.words == references[utt_id]
            single[view] = 100.0 * hits / len(by_utt)

        surfaces: dict[str, tuple] = {}
        for combo in plan.combinations:
            if len(combo) < 2:
                continue
            label = combo_label(combo)
            surfaces[label] = _surface_for_combo(
                tuple(combo),
                by_utt,
                references,
                enumerate_simplex(len(combo), config.fusion.step),
                config.fusion.backoff_delta,
                config.fusion.hypothesis_universe,
            )
        return LoocvResult(folds=folds, surfaces=surfaces,
                           single_view_correctness=single)
    finally:
        if tmp_holder is not None:
            tmp_holder.cleanup()


def select_weights(loocv: LoocvResult, plan: ExperimentPlan,
                   config: Config) -> dict:
    """Grid and training-recognition weights for every multi-view combination."""
    chosen: dict[tuple[str, str], FusionWeights] = {}
    for combo in plan.combinations:
        if len(combo) < 2:
            continue
        label = combo_label(combo)
        if "grid" in plan.schemes:
            surface = dict(loocv.surfaces[label])
            weights, _ = grid_search_weights(
                combo, lambda w: surface[w.tenths], config.fusion.step
            )
            chosen[(label, "grid")] = weights
        if "rec" in plan.schemes:
            chosen[(label, "rec")] = training_recognition_weights(
                {v: loocv.single_view_correctness[v] for v in combo}
            )
    return chosen


# -- the full experiment --------------------------------------------------------------


def _score_pairs(pairs, utterance_ids, subjects):
    report = score_batch(pairs, utterance_ids)
    per_subject = []
    for s in sorted(set(subjects)):
        sub = [p for p, subj in zip(pairs, subjects) if subj == s]
        per_subject.append(score_batch(sub).sentence_correctness)
    totals = report.totals
    return {
        "sentence_correctness": report.sentence_correctness,
        "word_accuracy": report.word_accuracy,
        "word_correctness": report.word_correctness,
        "subject_mean_sentence_correctness": float(np.mean(per_subject)),
        "counts": {
            "n": totals.n,
            "hits": totals.hits,
            "substitutions": totals.substitutions,
            "deletions": totals.deletions,
            "insertions": totals.insertions,
        },
    }


def run_experiment(corpus: Corpus, plan: ExperimentPlan, config: Config,
                   out_dir, jobs: int = 1) -> ResultsTable:
    """Drive the whole matrix: folds, weight selection, test decodes, scoring.

    Writes `results.json` (with a completeness marker) plus all cache
    artifacts under `out_dir`; a rerun over the same inputs reuses caches
    and reproduces the identical table.
    """
    if corpus.mode != "features":
        raise IllegalValue(
            "run_experiment needs a feature corpus; extract features from the "
            "image corpus first"
        )
    plan.check_against(corpus)
    train = plan.split.train_subjects
    test = plan.split.test_subjects
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache_dir = out_dir / "cache"
    fp = corpus_fingerprint(corpus)
    _prepare_cache(cache_dir, fp, _plan_digest(plan, config))

    labels = tuple(combo_label(c) for c in plan.combinations)
    table = ResultsTable(
        combinations=labels, schemes=plan.schemes, fingerprint=fp, complete=False
    )
    results_path = out_dir / "results.json"

    def persist():
        _atomic(
            results_path,
            lambda p: p.write_text(
                json.dumps(table.to_dict(), indent=1) + "\n", encoding="utf-8"
            ),
        )

    loocv = run_loocv(corpus, plan, config, cache_dir, jobs)
    table.cv_single_view = dict(loocv.single_view_correctness)
    chosen = select_weights(loocv, plan, config)
    persist()

    # the isolation wall: nothing so far may have read a test subject
    touched = corpus.accessed_subjects & set(test)
    if touched:
        raise RuntimeError(
            f"test subjects read before weight selection: {sorted(touched)}"
        )

    views = plan.views
    model_files = {
        v: cache_dir / f"model_{int(v)}.ghmm" for v in views
    }
    for out_file, log in _parallel(
        _final_model_task,
        [
            (str(corpus.root), train, int(v), config.recognizer, str(model_files[v]))
            for v in views
        ],
        jobs,
    ):
        corpus._access_log.extend(tuple(e) for e in log)

    need_fused = any(s in plan.schemes for s in ("grid", "rec"))
    test_files = {v: cache_dir / f"test_{int(v)}.jsonl" for v in views}
    if need_fused or "feat" in plan.schemes:
        for out_file, log in _parallel(
            _test_decode_task,
            [
                (
                    str(corpus.root), str(model_files[v]), test, int(v),
                    plan.nbest, str(test_files[v]),
                )
                for v in views
            ],
            jobs,
        ):
            corpus._access_log.extend(tuple(e) for e in log)

    feat_files = {}
    if "feat" in plan.schemes:
        feat_tasks = []
        for combo in plan.combinations:
            label = combo_label(combo)
            if len(combo) == 1:
                feat_files[label] = test_files[combo[0]]
                continue
            feat_files[label] = cache_dir / f"feat_{label.replace('+', '-')}.jsonl"
            feat_tasks.append(
                (
                    str(corpus.root), train, test, tuple(int(v) for v in combo),
                    config.recognizer, plan.nbest, str(feat_files[label]),
                )
            )
        for out_file, log in _parallel(_feat_task, feat_tasks, jobs):
            corpus._access_log.extend(tuple(e) for e in log)

    # assemble rows
    test_utts = corpus.utterances_for(test)
    references = {u.utterance_id: corpus.words_of(u.utterance_id) for u in test_utts}
    subjects_of = {u.utterance_id: u.subject for u in test_utts}
    test_lists: dict[ViewAngle, dict[str, NBestList]] = {}
    if need_fused:
        for v in views:
            test_lists[v] = {
                nb.utterance_id: nb for nb in read_nbest_file(test_files[v])
            }

    order = [u.utterance_id for u in test_utts]
    for combo in plan.combinations:
        label = combo_label(combo)
        if need_fused and len(combo) >= 2:
            for scheme in ("grid", "rec"):
                if scheme not in plan.schemes:
                    continue
                weights = chosen[(label, scheme)]
                pairs = []
                for utt_id in order:
                    fused = fuse(
                        {v: test_lists[v][utt_id] for v in combo},
                        weights,
                        backoff_delta=config.fusion.backoff_delta,
                        universe=config.fusion.hypothesis_universe,
                    )
                    pairs.append((references[utt_id], fused.best.words))
                scored = _score_pairs(pairs, order, [subjects_of[u] for u in order])
                table.rows[(label, scheme)] = ResultRow(
                    combination=label, scheme=scheme, weights=weights, **scored
                )
        if "feat" in plan.schemes:
            by_id = {nb.utterance_id: nb for nb in read_nbest_file(feat_files[label])}
            pairs = [(references[u], by_id[u].best.words) for u in order]
            scored = _score_pairs(pairs, order, [subjects_of[u] for u in order])
            table.rows[(label, "feat")] = ResultRow(
                combination=label, scheme="feat", weights=None, **scored
            )
        persist()

    table.complete = True
    persist()
    return table


def load_results(path) -> ResultsTable:
    path = Path(path)
    if not path.is_file():
        raise EmptyTable(f"no results file at {path}")
    return ResultsTable.from_dict(json.loads(path.read_text(encoding="utf-8")))
