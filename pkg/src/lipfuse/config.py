"""Experiment configuration: a documented key/value tree with defaults.

A config file needs to name only what it overrides; everything else is filled
from the defaults below. `Config.to_yaml` emits a canonical byte-stable echo
of the effective configuration, and reloading that echo reproduces it exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .core import ALL_VIEWS, ViewAngle, parse_views
from .errors import IllegalValue, MissingFile, SchemaViolation

_SCHEMES = ("grid", "rec", "feat")
_UNIVERSES = ("union", "intersection")
_SIL_MODES = ("forced", "optional", "none")
_SYNTH_MODES = ("features", "images")

#: Per-view defaults for the synthetic corpus: moderate view-dependent noise
#: and complementary phrase confusions (each view collapses a different pair,
#: so no single view can separate everything but suitable pairs of views can).
# Each phrase pair is collapsed by exactly two views, so any single view is
# blind to two pairs while every pair stays resolvable from three other views.
_DEFAULT_VIEW_PROFILES = {
    0: {"noise": 0.55, "confusions": ((2, 3), (8, 9))},
    30: {"noise": 0.50, "confusions": ((0, 1), (4, 5))},
    45: {"noise": 0.75, "confusions": ((4, 5), (6, 7))},
    60: {"noise": 0.70, "confusions": ((8, 9), (0, 1))},
    90: {"noise": 0.90, "confusions": ((6, 7), (2, 3))},
}


@dataclass
class DatasetConfig:
    root: str = ""
    views: tuple[ViewAngle, ...] = ALL_VIEWS
    resolution: tuple[int, int] = (64, 64)
    frame_rate: float = 30.0


@dataclass
class SplitConfig:
    # empty tuples mean "use the default ratio split over discovered subjects"
    train_subjects: tuple[str, ...] = ()
    test_subjects: tuple[str, ...] = ()


@dataclass
class PcanetConfig:
    patch_size: int = 7
    stage1_filters: int = 8
    stage2_filters: int = 8
    block_grid: tuple[int, int] = (4, 4)
    sample_cap: int = 1_000_000
    variance_normalize: bool = False

    @property
    def feature_dim(self) -> int:
        blocks = self.block_grid[0] * self.block_grid[1]
        return self.stage1_filters * blocks * (2 ** self.stage2_filters)


@dataclass
class TemporalConfig:
    projection_dim: int = 128  # 0 disables the input projection
    hidden_units: int = 64
    classes: int = 28
    delta_window: int = 2
    posterior_floor: float = 1e-8
    learning_rate: float = 3e-3
    epochs: int = 30
    clip_norm: float = 5.0


@dataclass
class RecognizerConfig:
    states_per_word: int = 4
    silence_states: int = 3
    max_mixtures: int = 15
    em_iterations: int = 8
    em_tolerance: float = 1e-4  # 0 disables the early stop
    variance_floor_factor: float = 0.01
    self_loop_init: float = 0.6
    train_boundary_silence: str = "forced"


@dataclass
class FusionConfig:
    nbest: int = 5
    backoff_delta: float = 10.0
    step: float = 0.1
    hypothesis_universe: str = "union"
    schemes: tuple[str, ...] = _SCHEMES


@dataclass
class ViewProfile:
    noise: float = 0.5
    confusions: tuple[tuple[int, int], ...] = ()


@dataclass
class SyntheticConfig:
    subjects: int = 12
    repetitions: int = 3
    mode: str = "features"
    feature_dim: int = 8
    num_classes: int = 28
    resolution: tuple[int, int] = (64, 64)
    class_separation: float = 2.5
    subject_variation: float = 0.25
    frames_per_word: tuple[int, int] = (8, 14)
    silence_frames: tuple[int, int] = (3, 8)
    views: dict[ViewAngle, ViewProfile] = field(default_factory=dict)

    def profile(self, view: ViewAngle) -> ViewProfile:
        if view in self.views:
            return self.views[view]
        raw = _DEFAULT_VIEW_PROFILES[int(view)]
        return ViewProfile(noise=raw["noise"], confusions=tuple(raw["confusions"]))


@dataclass
class Config:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    pcanet: PcanetConfig = field(default_factory=PcanetConfig)
    temporal: TemporalConfig = field(default_factory=TemporalConfig)
    recognizer: RecognizerConfig = field(default_factory=RecognizerConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    seed: int = 42
    jobs: int = 1

    # -- canonical serialization ------------------------------------------

    def to_dict(self) -> dict:
        synth_views = {
            str(int(v)): {
                "noise": p.noise,
                "confusions": [list(c) for c in p.confusions],
            }
            for v, p in sorted(self.synthetic.views.items())
        }
        return {
            "dataset": {
                "root": self.dataset.root,
                "views": [int(v) for v in self.dataset.views],
                "resolution": list(self.dataset.resolution),
                "frame_rate": self.dataset.frame_rate,
            },
            "split": {
                "train_subjects": list(self.split.train_subjects),
                "test_subjects": list(self.split.test_subjects),
            },
            "pcanet": {
                "patch_size": self.pcanet.patch_size,
                "stage1_filters": self.pcanet.stage1_filters,
                "stage2_filters": self.pcanet.stage2_filters,
                "block_grid": list(self.pcanet.block_grid),
                "sample_cap": self.pcanet.sample_cap,
                "variance_normalize": self.pcanet.variance_normalize,
            },
            "temporal": {
                "projection_dim": self.temporal.projection_dim,
                "hidden_units": self.temporal.hidden_units,
                "classes": self.temporal.classes,
                "delta_window": self.temporal.delta_window,
                "posterior_floor": self.temporal.posterior_floor,
                "learning_rate": self.temporal.learning_rate,
                "epochs": self.temporal.epochs,
                "clip_norm": self.temporal.clip_norm,
            },
            "recognizer": {
                "states_per_word": self.recognizer.states_per_word,
                "silence_states": self.recognizer.silence_states,
                "max_mixtures": self.recognizer.max_mixtures,
                "em_iterations": self.recognizer.em_iterations,
                "em_tolerance": self.recognizer.em_tolerance,
                "variance_floor_factor": self.recognizer.variance_floor_factor,
                "self_loop_init": self.recognizer.self_loop_init,
                "train_boundary_silence": self.recognizer.train_boundary_silence,
            },
            "fusion": {
                "nbest": self.fusion.nbest,
                "backoff_delta": self.fusion.backoff_delta,
                "step": self.fusion.step,
                "hypothesis_universe": self.fusion.hypothesis_universe,
                "schemes": list(self.fusion.schemes),
            },
            "synthetic": {
                "subjects": self.synthetic.subjects,
                "repetitions": self.synthetic.repetitions,
                "mode": self.synthetic.mode,
                "feature_dim": self.synthetic.feature_dim,
                "num_classes": self.synthetic.num_classes,
                "resolution": list(self.synthetic.resolution),
                "class_separation": self.synthetic.class_separation,
                "subject_variation": self.synthetic.subject_variation,
                "frames_per_word": list(self.synthetic.frames_per_word),
                "silence_frames": list(self.synthetic.silence_frames),
                "views": synth_views,
            },
            "seed": self.seed,
            "jobs": self.jobs,
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=False)


# -- loading -------------------------------------------------------------------


def _check_keys(node: dict, allowed, path: str) -> None:
    for key in node:
        if key not in allowed:
            raise SchemaViolation(f"unknown config key: {path}{key}")


def _get(node: dict, key: str, types, path: str, default):
    if key not in node or node[key] is None:
        return default
    value = node[key]
    if types is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if isinstance(types, tuple):
        ok = isinstance(value, types)
    else:
        ok = isinstance(value, types) and not (
            types is int and isinstance(value, bool)
        )
    if not ok:
        raise SchemaViolation(
            f"config key {path}{key} has wrong type "
            f"{type(value).__name__} (value {value!r})"
        )
    return value


def _int_pair(node, key, path, default, minimum=0, ordered=True):
    raw = _get(node, key, list, path, None)
    if raw is None:
        return default
    if len(raw) != 2 or not all(
        isinstance(x, int) and not isinstance(x, bool) for x in raw
    ):
        raise SchemaViolation(f"config key {path}{key} must be a pair of integers")
    a, b = raw
    if a < minimum or b < minimum:
        raise IllegalValue(f"{path}{key} entries must be >= {minimum}, got {raw}")
    if ordered and b < a:
        raise IllegalValue(f"{path}{key} must satisfy lo <= hi, got {raw}")
    return (a, b)


def _pos(value, name):
    if value <= 0:
        raise IllegalValue(f"{name} must be positive, got {value}")
    return value


def _choice(value, options, name):
    if value not in options:
        raise IllegalValue(f"{name} must be one of {options}, got {value!r}")
    return value


def config_from_dict(raw: dict | None) -> Config:
    raw = raw or {}
    if not isinstance(raw, dict):
        raise SchemaViolation("config document root must be a mapping")
    _check_keys(
        raw,
        {"dataset", "split", "pcanet", "temporal", "recognizer", "fusion",
         "synthetic", "seed", "jobs"},
        "",
    )
    d = Config()

    node = _get(raw, "dataset", dict, "", {}) or {}
    _check_keys(node, {"root", "views", "resolution", "frame_rate"}, "dataset.")
    d.dataset.root = _get(node, "root", str, "dataset.", d.dataset.root)
    views_raw = _get(node, "views", list, "dataset.", None)
    if views_raw is not None:
        d.dataset.views = parse_views(views_raw)
    d.dataset.resolution = _int_pair(
        node, "resolution", "dataset.", d.dataset.resolution, minimum=1, ordered=False
    )
    d.dataset.frame_rate = _pos(
        _get(node, "frame_rate", float, "dataset.", d.dataset.frame_rate),
        "dataset.frame_rate",
    )

    node = _get(raw, "split", dict, "", {}) or {}
    _check_keys(node, {"train_subjects", "test_subjects"}, "split.")
    for attr in ("train_subjects", "test_subjects"):
        lst = _get(node, attr, list, "split.", None)
        if lst is not None:
            if not all(isinstance(s, str) for s in lst):
                raise SchemaViolation(f"config key split.{attr} must list strings")
            setattr(d.split, attr, tuple(lst))
    if set(d.split.train_subjects) & set(d.split.test_subjects):
        raise IllegalValue("split.train_subjects and split.test_subjects overlap")

    node = _get(raw, "pcanet", dict, "", {}) or {}
    _check_keys(
        node,
        {"patch_size", "stage1_filters", "stage2_filters", "block_grid",
         "sample_cap", "variance_normalize"},
        "pcanet.",
    )
    p = d.pcanet
    p.patch_size = _pos(_get(node, "patch_size", int, "pcanet.", p.patch_size), "pcanet.patch_size")
    if p.patch_size % 2 == 0:
        raise IllegalValue(f"pcanet.patch_size must be odd, got {p.patch_size}")
    p.stage1_filters = _pos(
        _get(node, "stage1_filters", int, "pcanet.", p.stage1_filters),
        "pcanet.stage1_filters",
    )
    p.stage2_filters = _pos(
        _get(node, "stage2_filters", int, "pcanet.", p.stage2_filters),
        "pcanet.stage2_filters",
    )
    if p.stage1_filters > p.patch_size ** 2 or p.stage2_filters > p.patch_size ** 2:
        raise IllegalValue(
            f"filter counts cannot exceed patch_size^2 = {p.patch_size ** 2}"
        )
    p.block_grid = _int_pair(
        node, "block_grid", "pcanet.", p.block_grid, minimum=1, ordered=False
    )
    p.sample_cap = _pos(_get(node, "sample_cap", int, "pcanet.", p.sample_cap), "pcanet.sample_cap")
    p.variance_normalize = _get(
        node, "variance_normalize", bool, "pcanet.", p.variance_normalize
    )

    node = _get(raw, "temporal", dict, "", {}) or {}
    _check_keys(
        node,
        {"projection_dim", "hidden_units", "classes", "delta_window",
         "posterior_floor", "learning_rate", "epochs", "clip_norm"},
        "temporal.",
    )
    t = d.temporal
    t.projection_dim = _get(node, "projection_dim", int, "temporal.", t.projection_dim)
    if t.projection_dim < 0:
        raise IllegalValue("temporal.projection_dim must be >= 0 (0 disables)")
    t.hidden_units = _pos(_get(node, "hidden_units", int, "temporal.", t.hidden_units), "temporal.hidden_units")
    t.classes = _get(node, "classes", int, "temporal.", t.classes)
    if t.classes < 2:
        raise IllegalValue(f"temporal.classes must be >= 2, got {t.classes}")
    t.delta_window = _pos(_get(node, "delta_window", int, "temporal.", t.delta_window), "temporal.delta_window")
    t.posterior_floor = _pos(
        _get(node, "posterior_floor", float, "temporal.", t.posterior_floor),
        "temporal.posterior_floor",
    )
    t.learning_rate = _pos(
        _get(node, "learning_rate", float, "temporal.", t.learning_rate),
        "temporal.learning_rate",
    )
    t.epochs = _get(node, "epochs", int, "temporal.", t.epochs)
    if t.epochs < 0:
        raise IllegalValue("temporal.epochs must be >= 0")
    t.clip_norm = _pos(_get(node, "clip_norm", float, "temporal.", t.clip_norm), "temporal.clip_norm")

    node = _get(raw, "recognizer", dict, "", {}) or {}
    _check_keys(
        node,
        {"states_per_word", "silence_states", "max_mixtures", "em_iterations",
         "em_tolerance", "variance_floor_factor", "self_loop_init",
         "train_boundary_silence"},
        "recognizer.",
    )
    r = d.recognizer
    r.states_per_word = _pos(
        _get(node, "states_per_word", int, "recognizer.", r.states_per_word),
        "recognizer.states_per_word",
    )
    r.silence_states = _pos(
        _get(node, "silence_states", int, "recognizer.", r.silence_states),
        "recognizer.silence_states",
    )
    r.max_mixtures = _pos(
        _get(node, "max_mixtures", int, "recognizer.", r.max_mixtures),
        "recognizer.max_mixtures",
    )
    if r.max_mixtures > 15:
        warnings.warn(
            f"recognizer.max_mixtures = {r.max_mixtures} exceeds the customary "
            "cap of 15; proceeding anyway",
            stacklevel=2,
        )
    r.em_iterations = _pos(
        _get(node, "em_iterations", int, "recognizer.", r.em_iterations),
        "recognizer.em_iterations",
    )
    r.em_tolerance = _get(node, "em_tolerance", float, "recognizer.", r.em_tolerance)
    if r.em_tolerance < 0:
        raise IllegalValue("recognizer.em_tolerance must be >= 0")
    r.variance_floor_factor = _get(
        node, "variance_floor_factor", float, "recognizer.", r.variance_floor_factor
    )
    if not (0 <= r.variance_floor_factor < 1):
        raise IllegalValue("recognizer.variance_floor_factor must be in [0, 1)")
    r.self_loop_init = _get(node, "self_loop_init", float, "recognizer.", r.self_loop_init)
    if not (0 < r.self_loop_init < 1):
        raise IllegalValue("recognizer.self_loop_init must be in (0, 1)")
    r.train_boundary_silence = _choice(
        _get(node, "train_boundary_silence", str, "recognizer.", r.train_boundary_silence),
        _SIL_MODES,
        "recognizer.train_boundary_silence",
    )

    node = _get(raw, "fusion", dict, "", {}) or {}
    _check_keys(
        node,
        {"nbest", "backoff_delta", "step", "hypothesis_universe", "schemes"},
        "fusion.",
    )
    f = d.fusion
    f.nbest = _pos(_get(node, "nbest", int, "fusion.", f.nbest), "fusion.nbest")
    f.backoff_delta = _get(node, "backoff_delta", float, "fusion.", f.backoff_delta)
    if f.backoff_delta < 0:
        raise IllegalValue("fusion.backoff_delta must be >= 0")
    f.step = _get(node, "step", float, "fusion.", f.step)
    step_tenths = round(f.step * 10)
    if (
        step_tenths < 1
        or abs(f.step * 10 - step_tenths) > 1e-9
        or 10 % step_tenths != 0
    ):
        raise IllegalValue(
            f"fusion.step must divide 1.0 into whole tenths "
            f"(one of 0.1, 0.2, 0.5, 1.0), got {f.step}"
        )
    f.hypothesis_universe = _choice(
        _get(node, "hypothesis_universe", str, "fusion.", f.hypothesis_universe),
        _UNIVERSES,
        "fusion.hypothesis_universe",
    )
    schemes = _get(node, "schemes", list, "fusion.", None)
    if schemes is not None:
        for s in schemes:
            _choice(s, _SCHEMES, "fusion.schemes entry")
        if len(set(schemes)) != len(schemes):
            raise IllegalValue("fusion.schemes contains duplicates")
        f.schemes = tuple(schemes)

    node = _get(raw, "synthetic", dict, "", {}) or {}
    _check_keys(
        node,
        {"subjects", "repetitions", "mode", "feature_dim", "num_classes",
         "resolution", "class_separation", "subject_variation",
         "frames_per_word", "silence_frames", "views"},
        "synthetic.",
    )
    s = d.synthetic
    s.subjects = _pos(_get(node, "subjects", int, "synthetic.", s.subjects), "synthetic.subjects")
    s.repetitions = _pos(
        _get(node, "repetitions", int, "synthetic.", s.repetitions), "synthetic.repetitions"
    )
    s.mode = _choice(_get(node, "mode", str, "synthetic.", s.mode), _SYNTH_MODES, "synthetic.mode")
    s.feature_dim = _pos(
        _get(node, "feature_dim", int, "synthetic.", s.feature_dim), "synthetic.feature_dim"
    )
    s.num_classes = _pos(
        _get(node, "num_classes", int, "synthetic.", s.num_classes), "synthetic.num_classes"
    )
    s.resolution = _int_pair(
        node, "resolution", "synthetic.", s.resolution, minimum=8, ordered=False
    )
    s.class_separation = _pos(
        _get(node, "class_separation", float, "synthetic.", s.class_separation),
        "synthetic.class_separation",
    )
    s.subject_variation = _get(
        node, "subject_variation", float, "synthetic.", s.subject_variation
    )
    if s.subject_variation < 0:
        raise IllegalValue("synthetic.subject_variation must be >= 0")
    s.frames_per_word = _int_pair(node, "frames_per_word", "synthetic.", s.frames_per_word, minimum=1)
    s.silence_frames = _int_pair(node, "silence_frames", "synthetic.", s.silence_frames, minimum=1)
    views_node = _get(node, "views", dict, "synthetic.", None)
    if views_node is not None:
        profiles: dict[ViewAngle, ViewProfile] = {}
        for key, prof in views_node.items():
            view = ViewAngle.of(key)
            if not isinstance(prof, dict):
                raise SchemaViolation(f"config key synthetic.views.{key} must be a mapping")
            _check_keys(prof, {"noise", "confusions"}, f"synthetic.views.{key}.")
            noise = _get(prof, "noise", float, f"synthetic.views.{key}.", 0.5)
            if noise < 0:
                raise IllegalValue(f"synthetic.views.{key}.noise must be >= 0")
            conf_raw = _get(prof, "confusions", list, f"synthetic.views.{key}.", [])
            confusions = []
            for pair in conf_raw:
                if (
                    not isinstance(pair, list)
                    or len(pair) != 2
                    or not all(isinstance(x, int) and x >= 0 for x in pair)
                    or pair[0] == pair[1]
                ):
                    raise IllegalValue(
                        f"synthetic.views.{key}.confusions entries must be "
                        f"pairs of distinct phrase ids, got {pair!r}"
                    )
                confusions.append((min(pair), max(pair)))
            profiles[view] = ViewProfile(noise=noise, confusions=tuple(confusions))
        s.views = profiles

    d.seed = _get(raw, "seed", int, "", d.seed)
    if d.seed < 0:
        raise IllegalValue("seed must be >= 0")
    d.jobs = _pos(_get(raw, "jobs", int, "", d.jobs), "jobs")
    return d


def load_config(path) -> Config:
    """Read a YAML config file, validate it, and fill in all defaults."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise SchemaViolation(f"config file is not valid YAML: {exc}") from exc
    return config_from_dict(raw)


def loads_config(text: str) -> Config:
    """Parse a YAML config from a string (used for echo round-trips)."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SchemaViolation(f"config text is not valid YAML: {exc}") from exc
    return config_from_dict(raw)
