"""Multi-view visual speech recognition with posterior-feature recognizers.

The package covers the full pipeline: synthetic corpus generation, cascaded
PCA filter features from mouth images, a recurrent frame classifier whose
posteriors become tandem observation streams, whole-word left-to-right
recognizers with n-best decoding, weighted score fusion across camera views,
weight selection, scoring, and the cross-view experiment harness.
"""

from .config import Config, load_config
from .core import (
    ALL_VIEWS,
    SILENCE_CLASS,
    SILENCE_WORD,
    DatasetSplit,
    FeatureSequence,
    Phrase,
    PhraseSet,
    Utterance,
    ViewAngle,
    combo_label,
    enumerate_view_combinations,
    parse_views,
    read_feature_file,
    utterance_id_for,
    write_feature_file,
)
from .corpus import (
    Corpus,
    corpus_fingerprint,
    load_corpus,
    scan_corpus,
    write_manifest,
)
from .errors import (
    ComputationError,
    DegenerateData,
    DiskFull,
    EmptyLists,
    EmptyTable,
    IllegalValue,
    InvalidConfig,
    LengthMismatch,
    LexiconGap,
    MissingFile,
    NonFiniteLoss,
    PathInfeasible,
    SchemaViolation,
    ShapeMismatch,
    TooFewSubjects,
    UtteranceMismatch,
    ValidationError,
)
from .experiment import (
    ExperimentPlan,
    LoocvResult,
    ResultRow,
    ResultsTable,
    load_results,
    run_experiment,
    run_loocv,
    select_weights,
)
from .fusion import (
    FusedEntry,
    FusedResult,
    FusionWeights,
    enumerate_simplex,
    feature_fuse,
    fuse,
    grid_search_weights,
    read_fused_file,
    read_weights_file,
    score_table,
    training_recognition_weights,
    write_fused_file,
    write_weights_file,
)
from .metrics import (
    AlignmentCounts,
    ScoreReport,
    align,
    render_score_csv,
    score_batch,
    sentence_correctness,
    strip_silence,
    word_accuracy,
    word_correctness,
)
from .nbest import NBestEntry, NBestList, read_nbest_file, write_nbest_file
from .pcanet import (
    PcaFilters,
    extract,
    learn_filters,
    read_filter_file,
    write_filter_file,
)
from .report import render_results, render_weights, write_report
from .synth import DEFAULT_PHRASES, default_phrase_set, gen_synthetic
from .tandem import (
    GmmState,
    RecognizerModel,
    WordHmm,
    decode_nbest,
    gmm_loglik,
    read_recognizer,
    train_recognizer,
    viterbi_chain,
    viterbi_forced,
    write_recognizer,
)
from .temporal import (
    TemporalModel,
    posteriors,
    read_label_file,
    read_temporal_model,
    tandem_features,
    train_temporal,
    write_label_file,
    write_temporal_model,
)

__version__ = "0.1.0"

__all__ = [
    "ALL_VIEWS",
    "AlignmentCounts",
    "ComputationError",
    "Config",
    "Corpus",
    "DEFAULT_PHRASES",
    "DatasetSplit",
    "DegenerateData",
    "DiskFull",
    "EmptyLists",
    "EmptyTable",
    "ExperimentPlan",
    "FeatureSequence",
    "FusedEntry",
    "FusedResult",
    "FusionWeights",
    "GmmState",
    "IllegalValue",
    "InvalidConfig",
    "LengthMismatch",
    "LexiconGap",
    "LoocvResult",
    "MissingFile",
    "NBestEntry",
    "NBestList",
    "NonFiniteLoss",
    "PathInfeasible",
    "PcaFilters",
    "Phrase",
    "PhraseSet",
    "RecognizerModel",
    "ResultRow",
    "ResultsTable",
    "SILENCE_CLASS",
    "SILENCE_WORD",
    "SchemaViolation",
    "ScoreReport",
    "ShapeMismatch",
    "TemporalModel",
    "TooFewSubjects",
    "Utterance",
    "UtteranceMismatch",
    "ValidationError",
    "ViewAngle",
    "WordHmm",
    "align",
    "combo_label",
    "corpus_fingerprint",
    "decode_nbest",
    "default_phrase_set",
    "enumerate_simplex",
    "enumerate_view_combinations",
    "extract",
    "feature_fuse",
    "fuse",
    "gen_synthetic",
    "gmm_loglik",
    "grid_search_weights",
    "learn_filters",
    "load_config",
    "load_corpus",
    "load_results",
    "parse_views",
    "posteriors",
    "read_feature_file",
    "read_filter_file",
    "read_fused_file",
    "read_label_file",
    "read_nbest_file",
    "read_recognizer",
    "read_temporal_model",
    "read_weights_file",
    "render_results",
    "render_score_csv",
    "render_weights",
    "run_experiment",
    "run_loocv",
    "scan_corpus",
    "score_batch",
    "score_table",
    "select_weights",
    "strip_silence",
    "sentence_correctness",
    "tandem_features",
    "train_recognizer",
    "train_temporal",
    "training_recognition_weights",
    "utterance_id_for",
    "viterbi_chain",
    "viterbi_forced",
    "word_accuracy",
    "word_correctness",
    "write_feature_file",
    "write_filter_file",
    "write_fused_file",
    "write_label_file",
    "write_manifest",
    "write_nbest_file",
    "write_recognizer",
    "write_report",
    "write_temporal_model",
    "write_weights_file",
]
