"""Command-line orchestration of the whole pipeline.

Exit codes: 0 on success, 2 when inputs or configuration fail validation,
3 when a runtime failure (I/O, degenerate data, diverged training) stops a
stage partway.
"""

from __future__ import annotations

import functools
import json
import math
import sys
from pathlib import Path
from types import SimpleNamespace

import click

from .config import Config, load_config
from .core import DatasetSplit, ViewAngle, combo_label, parse_views
from .corpus import Corpus, load_corpus
from .errors import ComputationError, IllegalValue, ValidationError
from .experiment import (
    ExperimentPlan,
    _plan_digest,
    _prepare_cache,
    load_results,
    run_experiment,
    run_loocv,
    select_weights,
)
from .fusion import (
    fuse as fuse_lists,
    read_weights_file,
    write_fused_file,
    write_weights_file,
)
from .metrics import render_score_csv, score_batch
from .nbest import read_nbest_file, write_nbest_file
from .pcanet import extract, learn_filters, read_filter_file, write_filter_file
from .report import write_report
from .synth import gen_synthetic
from .tandem import (
    decode_nbest,
    read_recognizer,
    train_recognizer,
    write_recognizer,
)
from .temporal import (
    posteriors,
    read_temporal_model,
    tandem_features,
    train_temporal,
    write_temporal_model,
)
from .corpus import feature_path, write_manifest
from .core import FeatureSequence, write_feature_file


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except (ComputationError, OSError) as exc:
            click.echo(f"failure: {exc}", err=True)
            sys.exit(3)

    return wrapper


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--config", "config_path", type=click.Path(dir_okay=False),
              default=None, help="YAML configuration file.")
@click.option("--seed", type=int, default=None, help="Override the configured seed.")
@click.option("--jobs", type=int, default=None,
              help="Worker processes for training and decoding tasks.")
@click.option("--out-dir", type=click.Path(file_okay=False), default=".",
              help="Directory that outputs land in.")
@click.pass_context
@_guarded
def main(ctx, config_path, seed, jobs, out_dir):
    """Multi-view visual speech recognition pipeline."""
    cfg = load_config(config_path) if config_path else Config()
    if seed is not None:
        if seed < 0:
            raise IllegalValue("--seed must be >= 0")
        cfg.seed = seed
    if jobs is not None:
        if jobs < 1:
            raise IllegalValue("--jobs must be >= 1")
        cfg.jobs = jobs
    ctx.obj = SimpleNamespace(config=cfg, out_dir=Path(out_dir))


def _split_for(corpus: Corpus, cfg: Config) -> DatasetSplit:
    if cfg.split.train_subjects or cfg.split.test_subjects:
        return DatasetSplit(tuple(cfg.split.train_subjects),
                            tuple(cfg.split.test_subjects))
    return DatasetSplit.default_for(corpus.subjects)


def _pick_subjects(corpus: Corpus, cfg: Config, spec: str) -> tuple[str, ...]:
    if spec == "all":
        return corpus.subjects
    if spec in ("train", "test"):
        split = _split_for(corpus, cfg)
        return split.train_subjects if spec == "train" else split.test_subjects
    names = tuple(s.strip() for s in spec.split(",") if s.strip())
    unknown = set(names) - set(corpus.subjects)
    if unknown:
        raise IllegalValue(f"unknown subjects: {sorted(unknown)}")
    return names


def _parse_view_list(corpus: Corpus, spec: str | None) -> tuple[ViewAngle, ...]:
    if spec is None:
        return corpus.views
    views = parse_views(int(tok) for tok in spec.split(","))
    missing = set(views) - set(corpus.views)
    if missing:
        raise IllegalValue(
            f"views not in corpus: {sorted(int(v) for v in missing)}"
        )
    return views


def _tandem_stream(tmodel, feats, tcfg) -> FeatureSequence:
    post = posteriors(tmodel, feats)
    return tandem_features(post, tcfg.delta_window, tcfg.posterior_floor,
                           feats.frame_rate)


def _training_data(corpus: Corpus, cfg: Config, view: ViewAngle,
                   subjects, temporal_model_path):
    tmodel = read_temporal_model(temporal_model_path) if temporal_model_path else None
    data = []
    for u in corpus.utterances_for(subjects):
        feats = corpus.features(u.utterance_id, view)
        if tmodel is not None:
            feats = _tandem_stream(tmodel, feats, cfg.temporal)
        data.append((feats, corpus.words_of(u.utterance_id)))
    return data


@main.command("gen-synth")
@click.option("--root", type=click.Path(file_okay=False), default=None,
              help="Corpus root to create (default: OUT_DIR/corpus).")
@click.pass_obj
@_guarded
def gen_synth(obj, root):
    """Generate the deterministic synthetic corpus."""
    root = Path(root) if root else obj.out_dir / "corpus"
    corpus = gen_synthetic(root, obj.config)
    click.echo(
        f"wrote {corpus.mode} corpus: {len(corpus.subjects)} subjects, "
        f"{len(corpus.utterances)} utterances, views "
        f"{combo_label(corpus.views)} at {corpus.root}"
    )


@main.command("train-pcanet")
@click.option("--corpus", "corpus_root", type=click.Path(file_okay=False),
              required=True, help="Image corpus root.")
@click.option("--views", default=None, help="Comma-separated view angles (default all).")
@click.option("--subjects", default="train", help="train, test, all, or a name list.")
@click.option("--max-frames", type=int, default=1500, show_default=True,
              help="Cap on training frames (sampled evenly).")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Filter file to write (default: OUT_DIR/filters.pcnf).")
@click.pass_obj
@_guarded
def train_pcanet(obj, corpus_root, views, subjects, max_frames, out_path):
    """Learn the two convolution stages from training frames."""
    cfg = obj.config
    corpus = load_corpus(corpus_root)
    if corpus.mode != "images":
        raise IllegalValue("train-pcanet needs an image corpus")
    view_list = _parse_view_list(corpus, views)
    chosen = _pick_subjects(corpus, cfg, subjects)
    pairs = [
        (u.utterance_id, v)
        for u in corpus.utterances_for(chosen)
        for v in view_list
    ]
    if not pairs:
        raise IllegalValue("no utterances match the subject/view selection")
    est_per = max(
        1, sum(u.frame_counts[v] for u in corpus.utterances_for(chosen)
               for v in view_list) // len(pairs)
    )
    stride = max(1, math.ceil(len(pairs) * est_per / max(max_frames, 1)))
    frames = []
    for utt_id, v in pairs[::stride]:
        frames.extend(corpus.frames(utt_id, v))
    filters = learn_filters(
        frames, cfg.pcanet, seed=cfg.seed,
        trained_on=f"{Path(corpus_root).name}:{len(frames)} frames",
    )
    out_path = Path(out_path) if out_path else obj.out_dir / "filters.pcnf"
    write_filter_file(out_path, filters)
    click.echo(
        f"learned {filters.num_stage1}+{filters.num_stage2} filters from "
        f"{len(frames)} frames -> {out_path}"
    )


@main.command("extract-features")
@click.option("--corpus", "corpus_root", type=click.Path(file_okay=False),
              required=True, help="Image corpus root.")
@click.option("--filters", "filter_path", type=click.Path(dir_okay=False),
              required=True)
@click.option("--out-root", type=click.Path(file_okay=False), default=None,
              help="Feature corpus root to create (default: OUT_DIR/features).")
@click.pass_obj
@_guarded
def extract_features(obj, corpus_root, filter_path, out_root):
    """Run the filter stages over every frame and store histogram streams."""
    cfg = obj.config
    corpus = load_corpus(corpus_root)
    if corpus.mode != "images":
        raise IllegalValue("extract-features needs an image corpus")
    filters = read_filter_file(filter_path)
    out_root = Path(out_root) if out_root else obj.out_dir / "features"
    count = 0
    for u in corpus.utterances:
        for v in u.views:
            frames = corpus.frames(u.utterance_id, v)
            feats = extract(frames, filters, cfg.pcanet, corpus.frame_rate)
            path = feature_path(out_root, u.subject, v, u.phrase_id, u.repetition)
            path.parent.mkdir(parents=True, exist_ok=True)
            write_feature_file(path, feats)
            count += 1
    derived = Corpus(
        root=out_root,
        mode="features",
        frame_rate=corpus.frame_rate,
        resolution=corpus.resolution,
        views=corpus.views,
        subjects=corpus.subjects,
        phrases=corpus.phrases,
        utterances=corpus.utterances,
        labels=corpus.labels,
    )
    write_manifest(derived)
    labels_file = Path(corpus_root) / "labels.txt"
    if labels_file.is_file():
        (out_root / "labels.txt").write_bytes(labels_file.read_bytes())
    click.echo(f"extracted {count} feature streams -> {out_root}")


@main.command("train-temporal")
@click.option("--corpus", "corpus_root", type=click.Path(file_okay=False),
              required=True, help="Feature corpus root with frame labels.")
@click.option("--view", type=int, required=True)
@click.option("--subjects", default="train", show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Model file (default: OUT_DIR/temporal_<view>.tmdl).")
@click.pass_obj
@_guarded
def train_temporal_cmd(obj, corpus_root, view, subjects, out_path):
    """Train the recurrent frame classifier for one view."""
    cfg = obj.config
    corpus = load_corpus(corpus_root)
    if corpus.mode != "features":
        raise IllegalValue("train-temporal needs a feature corpus")
    v = ViewAngle.of(view)
    chosen = _pick_subjects(corpus, cfg, subjects)
    data = [
        (corpus.features(u.utterance_id, v), corpus.labels_of(u.utterance_id))
        for u in corpus.utterances_for(chosen)
    ]
    model = train_temporal(data, cfg.temporal, seed=cfg.seed)
    out_path = Path(out_path) if out_path else obj.out_dir / f"temporal_{int(v)}.tmdl"
    write_temporal_model(out_path, model)
    click.echo(
        f"trained on {len(data)} sequences, final loss "
        f"{model.losses[-1]:.4f} -> {out_path}"
        if model.losses
        else f"initialized untrained model -> {out_path}"
    )


@main.command("train-tandem")
@click.option("--corpus", "corpus_root", type=click.Path(file_okay=False),
              required=True, help="Feature corpus root.")
@click.option("--view", type=int, required=True)
@click.option("--subjects", default="train", show_default=True)
@click.option("--temporal-model", "temporal_model_path",
              type=click.Path(dir_okay=False), default=None,
              help="Turn stored features into tandem posterior streams first.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Recognizer file (default: OUT_DIR/recognizer_<view>.ghmm).")
@click.pass_obj
@_guarded
def train_tandem_cmd(obj, corpus_root, view, subjects, temporal_model_path, out_path):
    """Train the whole-word recognizer for one view."""
    cfg = obj.config
    corpus = load_corpus(corpus_root)
    if corpus.mode != "features":
        raise IllegalValue("train-tandem needs a feature corpus")
    v = ViewAngle.of(view)
    chosen = _pick_subjects(corpus, cfg, subjects)
    data = _training_data(corpus, cfg, v, chosen, temporal_model_path)
    model = train_recognizer(data, corpus.phrases, cfg.recognizer,
                             trained_on=f"view {int(v)}: {len(data)} utterances")
    out_path = Path(out_path) if out_path else obj.out_dir / f"recognizer_{int(v)}.ghmm"
    write_recognizer(out_path, model)
    final_ll = model.training_log[-1][2] if model.training_log else float("nan")
    click.echo(
        f"trained {len(model.words)}-word recognizer on {len(data)} utterances "
        f"(final loglik {final_ll:.1f}) -> {out_path}"
    )


@main.command("decode")
@click.option("--corpus", "corpus_root", type=click.Path(file_okay=False),
              required=True)
@click.option("--model", "model_path", type=click.Path(dir_okay=False), required=True)
@click.option("--view", type=int, required=True)
@click.option("--subjects", default="test", show_default=True)
@click.option("--temporal-model", "temporal_model_path",
              type=click.Path(dir_okay=False), default=None)
@click.option("--nbest", "nbest_n", type=int, default=None,
              help="Hypotheses per utterance (default from config).")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Output JSONL (default: OUT_DIR/nbest_<view>.jsonl).")
@click.pass_obj
@_guarded
def decode(obj, corpus_root, model_path, view, subjects, temporal_model_path,
           nbest_n, out_path):
    """Produce per-utterance n-best lists for one view."""
    cfg = obj.config
    corpus = load_corpus(corpus_root)
    if corpus.mode != "features":
        raise IllegalValue("decode needs a feature corpus")
    v = ViewAngle.of(view)
    model = read_recognizer(model_path)
    tmodel = read_temporal_model(temporal_model_path) if temporal_model_path else None
    n = nbest_n if nbest_n is not None else cfg.fusion.nbest
    lists = []
    for u in corpus.utterances_for(_pick_subjects(corpus, cfg, subjects)):
        feats = corpus.features(u.utterance_id, v)
        if tmodel is not None:
            feats = _tandem_stream(tmodel, feats, cfg.temporal)
        lists.append(decode_nbest(model, feats, u.utterance_id, v, n))
    out_path = Path(out_path) if out_path else obj.out_dir / f"nbest_{int(v)}.jsonl"
    write_nbest_file(out_path, lists)
    click.echo(f"decoded {len(lists)} utterances -> {out_path}")


@main.command("optimize-weights")
@click.option("--corpus", "corpus_root", type=click.Path(file_okay=False),
              required=True)
@click.option("--views", default=None,
              help="Comma-separated combination (default: all corpus views).")
@click.pass_obj
@_guarded
def optimize_weights(obj, corpus_root, views):
    """Pick fusion weights on training-split cross-validation."""
    cfg = obj.config
    corpus = load_corpus(corpus_root)
    combo = _parse_view_list(corpus, views)
    if len(combo) < 2:
        raise IllegalValue("weight optimization needs at least two views")
    plan = ExperimentPlan(
        combinations=(combo,),
        split=_split_for(corpus, cfg),
        schemes=("grid", "rec"),
        nbest=cfg.fusion.nbest,
        seed=cfg.seed,
    )
    from .corpus import corpus_fingerprint

    cache = obj.out_dir / "cache"
    _prepare_cache(cache, corpus_fingerprint(corpus), _plan_digest(plan, cfg))
    loocv = run_loocv(corpus, plan, cfg, cache, jobs=cfg.jobs)
    chosen = select_weights(loocv, plan, cfg)
    label = combo_label(combo)
    tag = label.replace("+", "-")
    for scheme in ("grid", "rec"):
        weights = chosen[(label, scheme)]
        path = obj.out_dir / f"weights_{scheme}_{tag}.json"
        write_weights_file(path, weights, scheme)
        click.echo(
            f"{scheme} weights for {label}: "
            + " ".join(f"{t / 10:.1f}" for t in weights.tenths)
            + f" -> {path}"
        )
    surface_path = obj.out_dir / f"surface_{tag}.json"
    surface_path.write_text(
        json.dumps(
            [{"tenths": list(t), "cv_correctness": v}
             for t, v in loocv.surfaces[label]],
            indent=1,
        )
        + "\n",
        encoding="utf-8",
    )
    click.echo(f"cv surface ({len(loocv.surfaces[label])} points) -> {surface_path}")


@main.command("fuse")
@click.option("--weights", "weights_path", type=click.Path(dir_okay=False),
              required=True)
@click.option("--nbest", "nbest_paths", type=click.Path(dir_okay=False),
              multiple=True, required=True, help="One JSONL file per view.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Fused JSONL (default: OUT_DIR/fused.jsonl).")
@click.pass_obj
@_guarded
def fuse_cmd(obj, weights_path, nbest_paths, out_path):
    """Combine per-view n-best files under a stored weight vector."""
    cfg = obj.config
    weights, _scheme = read_weights_file(weights_path)
    by_view: dict[ViewAngle, dict[str, object]] = {}
    for path in nbest_paths:
        for nb in read_nbest_file(path):
            by_view.setdefault(nb.view, {})[nb.utterance_id] = nb
    if tuple(sorted(by_view)) != weights.views:
        raise IllegalValue(
            f"weights cover {combo_label(weights.views)}, n-best files cover "
            f"{combo_label(sorted(by_view))}"
        )
    utt_sets = {v: set(d) for v, d in by_view.items()}
    common = set.intersection(*utt_sets.values())
    if any(utt_sets[v] != common for v in by_view):
        raise IllegalValue("n-best files do not cover the same utterances")
    results = [
        fuse_lists(
            {v: by_view[v][utt_id] for v in weights.views},
            weights,
            backoff_delta=cfg.fusion.backoff_delta,
            universe=cfg.fusion.hypothesis_universe,
        )
        for utt_id in sorted(common)
    ]
    out_path = Path(out_path) if out_path else obj.out_dir / "fused.jsonl"
    write_fused_file(out_path, results)
    click.echo(f"fused {len(results)} utterances -> {out_path}")


@main.command("score")
@click.option("--corpus", "corpus_root", type=click.Path(file_okay=False),
              required=True, help="Corpus supplying reference transcripts.")
@click.option("--hyp", "hyp_path", type=click.Path(dir_okay=False), required=True,
              help="Fused or n-best JSONL of hypotheses.")
@click.option("--label", default="-", help="Combination label for the CSV row.")
@click.option("--scheme", default="-", help="Scheme label for the CSV row.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Score CSV (default: OUT_DIR/score.csv).")
@click.pass_obj
@_guarded
def score(obj, corpus_root, hyp_path, label, scheme, out_path):
    """Score hypothesis files against the corpus transcripts."""
    corpus = load_corpus(corpus_root)
    first = ""
    with open(hyp_path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                first = line
                break
    if not first:
        raise IllegalValue(f"{hyp_path} holds no hypotheses")
    if "\"views\"" in first:
        from .fusion import read_fused_file

        best = {r.utterance_id: r.best.words for r in read_fused_file(hyp_path)}
    else:
        best = {nb.utterance_id: nb.best.words for nb in read_nbest_file(hyp_path)}
    ids = sorted(best)
    pairs = [(corpus.words_of(utt_id), best[utt_id]) for utt_id in ids]
    report = score_batch(pairs, ids)
    click.echo(f"sentence correctness: {report.sentence_correctness:.1f}")
    click.echo(f"word accuracy:        {report.word_accuracy:.1f}")
    click.echo(f"word correctness:     {report.word_correctness:.1f}")
    out_path = Path(out_path) if out_path else obj.out_dir / "score.csv"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(render_score_csv([(label, scheme, report)]), encoding="utf-8")
    click.echo(f"wrote {out_path}")


@main.command("run-experiment")
@click.option("--corpus", "corpus_root", type=click.Path(file_okay=False),
              required=True, help="Feature corpus root.")
@click.option("--views", default=None,
              help="Limit the combination matrix to these views.")
@click.pass_obj
@_guarded
def run_experiment_cmd(obj, corpus_root, views):
    """Run the full combination matrix and write results.json."""
    cfg = obj.config
    corpus = load_corpus(corpus_root)
    plan = ExperimentPlan.default_for(corpus, cfg)
    if views is not None:
        pool = _parse_view_list(corpus, views)
        from .core import enumerate_view_combinations

        plan = ExperimentPlan(
            combinations=tuple(enumerate_view_combinations(pool)),
            split=plan.split,
            schemes=plan.schemes,
            nbest=plan.nbest,
            seed=plan.seed,
        )
    table = run_experiment(corpus, plan, cfg, obj.out_dir, jobs=cfg.jobs)
    click.echo(f"completed {len(table.rows)} rows -> {obj.out_dir / 'results.json'}")
    singles = [
        (table.row(combo_label((v,)), "feat"), v)
        for v in plan.views
        if table.row(combo_label((v,)), "feat") is not None
    ]
    if singles:
        best_row, best_view = max(
            singles, key=lambda rv: rv[0].sentence_correctness
        )
        click.echo(
            f"best single view: {int(best_view)} at "
            f"{best_row.sentence_correctness:.1f}% sentence correctness"
        )
    full = table.row(combo_label(plan.views), "grid")
    if full is not None:
        click.echo(
            f"all-view grid fusion: {full.sentence_correctness:.1f}% "
            f"sentence correctness"
        )


@main.command("report")
@click.option("--results", "results_path", type=click.Path(dir_okay=False),
              default=None, help="results.json (default: OUT_DIR/results.json).")
@click.option("--format", "fmt", type=click.Choice(["csv", "markdown"]),
              default="csv", show_default=True)
@click.option("--figures/--no-figures", default=True, show_default=True)
@click.pass_obj
@_guarded
def report_cmd(obj, results_path, fmt, figures):
    """Render the results table, weights table, and charts."""
    results_path = Path(results_path) if results_path else obj.out_dir / "results.json"
    table = load_results(results_path)
    written = write_report(table, obj.out_dir, fmt, figures)
    for path in written:
        click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
