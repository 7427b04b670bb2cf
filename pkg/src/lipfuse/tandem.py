"""Whole-word GMM-HMM recognizer over a closed phrase grammar.

Word models are strict left-to-right chains (self-loop or advance, no skips)
with diagonal-covariance Gaussian mixture states; a shorter silence model may
appear optionally at the utterance boundaries. Training alternates Viterbi
forced alignment with re-estimation, growing mixtures by binary splitting.
Decoding scores every phrase of the grammar exactly and keeps the n best.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RecognizerConfig
from .core import FeatureSequence, Phrase, PhraseSet, SILENCE_WORD, ViewAngle
from .errors import (
    DegenerateData,
    DimensionMismatch,
    IllegalValue,
    LengthMismatch,
    LexiconGap,
    MissingFile,
    PathInfeasible,
    ShapeMismatch,
    TooShort,
)
from .nbest import NBestEntry, NBestList

_LOG_2PI = float(np.log(2.0 * np.pi))
_DEFUNCT_WEIGHT = 1e-6  # components below this are dropped at stage boundaries


def _logsumexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.exp(a - m_safe).sum(axis=axis)) + np.squeeze(m_safe, axis=axis)
    return out


@dataclass
class GmmState:
    """Diagonal-covariance Gaussian mixture emission for one HMM state."""

    weights: np.ndarray  # (M,)
    means: np.ndarray    # (M, D)
    variances: np.ndarray  # (M, D)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        m = self.weights.shape[0]
        if self.means.ndim != 2 or self.means.shape[0] != m:
            raise ShapeMismatch(
                f"means shape {self.means.shape} does not match {m} weights"
            )
        if self.variances.shape != self.means.shape:
            raise ShapeMismatch(
                f"variances shape {self.variances.shape} != means shape {self.means.shape}"
            )
        if m < 1:
            raise IllegalValue("a state needs at least one mixture component")
        # zero weights mark defunct components; they are pruned when mixtures grow
        if np.any(self.weights < 0) or not np.any(self.weights > 0):
            raise IllegalValue(f"mixture weights must be >= 0 with some mass: {self.weights}")
        if abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise IllegalValue(
                f"mixture weights must sum to 1, got {self.weights.sum()!r}"
            )
        if np.any(self.variances <= 0):
            raise IllegalValue("variances must be strictly positive")

    @property
    def num_mixtures(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def gmm_loglik(state: GmmState, obs) -> np.ndarray | float:
    """Log density of one observation (D,) or a batch (T, D) under the GMM."""
    x = np.asarray(obs, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != state.dim:
        raise DimensionMismatch(
            f"observation dim {x.shape[-1] if x.ndim else '?'} != state dim {state.dim}"
        )
    diff = x[:, None, :] - state.means[None, :, :]  # (T, M, D)
    quad = (diff * diff / state.variances[None, :, :]).sum(axis=2)
    log_det = np.log(state.variances).sum(axis=1)  # (M,)
    with np.errstate(divide="ignore"):
        log_comp = (
            np.log(state.weights)[None, :]
            - 0.5 * (state.dim * _LOG_2PI + log_det[None, :] + quad)
        )
    out = _logsumexp(log_comp, axis=1)
    return float(out[0]) if single else out


@dataclass
class WordHmm:
    """Left-to-right chain of GMM states with per-state self/advance odds."""

    word: str
    states: list[GmmState]
    log_self: np.ndarray  # (S,)
    log_next: np.ndarray  # (S,)

    def __post_init__(self):
        s = len(self.states)
        self.log_self = np.asarray(self.log_self, dtype=np.float64)
        self.log_next = np.asarray(self.log_next, dtype=np.float64)
        if s < 1:
            raise IllegalValue(f"word {self.word!r} has no states")
        if self.log_self.shape != (s,) or self.log_next.shape != (s,):
            raise ShapeMismatch(
                f"transition vectors for {self.word!r} must have shape ({s},)"
            )
        with np.errstate(over="ignore"):
            total = np.exp(self.log_self) + np.exp(self.log_next)
        if np.any(np.abs(total - 1.0) > 1e-9):
            raise IllegalValue(
                f"outgoing probabilities for {self.word!r} do not sum to 1: {total}"
            )

    @property
    def num_states(self) -> int:
        return len(self.states)


@dataclass
class RecognizerModel:
    """Word models plus silence model plus the phrase grammar they serve."""

    words: dict[str, WordHmm]
    silence: WordHmm
    phrases: PhraseSet
    dim: int
    training_log: list = field(default_factory=list)
    trained_on: str = ""

    def token(self, word: str) -> WordHmm:
        if word == SILENCE_WORD:
            return self.silence
        if word not in self.words:
            raise LexiconGap(f"word {word!r} is not in the lexicon")
        return self.words[word]

    def all_tokens(self) -> list[str]:
        return sorted(self.words) + [SILENCE_WORD]


# -- packed emission evaluation ---------------------------------------------------


def _pack_states(states: list[GmmState], dim: int) -> dict:
    """Stack a list of states into padded arrays for batched evaluation."""
    n = len(states)
    m_max = max(s.num_mixtures for s in states)
    logw = np.full((n, m_max), -np.inf)
    means = np.zeros((n, m_max, dim))
    inv_var = np.zeros((n, m_max, dim))  # zero rows keep padded quads finite
    log_det = np.zeros((n, m_max))
    for i, s in enumerate(states):
        m = s.num_mixtures
        with np.errstate(divide="ignore"):
            logw[i, :m] = np.log(s.weights)
        means[i, :m] = s.means
        inv_var[i, :m] = 1.0 / s.variances
        log_det[i, :m] = np.log(s.variances).sum(axis=1)
    const = logw - 0.5 * (dim * _LOG_2PI + log_det + (means * means * inv_var).sum(axis=2))
    return {
        "const": const.reshape(n * m_max),          # (n*M,)
        "lin": (means * inv_var).reshape(n * m_max, dim),
        "sq": inv_var.reshape(n * m_max, dim),
        "shape": (n, m_max),
    }


def _emission_logliks(x: np.ndarray, packed: dict) -> np.ndarray:
    """(T, n_states) log densities for a feature matrix.

    Uses the expanded quadratic form so the heavy work is two matrix
    products instead of a rank-4 broadcast.
    """
    n, m_max = packed["shape"]
    log_comp = x @ packed["lin"].T - 0.5 * (x * x) @ packed["sq"].T
    log_comp += packed["const"][None]
    return _logsumexp(log_comp.reshape(x.shape[0], n, m_max), axis=2)


# -- Viterbi ----------------------------------------------------------------------


def viterbi_chain(emissions: np.ndarray, log_self: np.ndarray,
                  log_next: np.ndarray) -> tuple[float, np.ndarray]:
    """Best path through a plain left-to-right chain.

    Entry is state 0; the path must end in the last state, whose advance
    probability is charged as the exit. Transition ties prefer the earlier
    predecessor (the advance). Returns (log-likelihood, per-frame states).
    """
    emissions = np.asarray(emissions, dtype=np.float64)
    t_len, s_len = emissions.shape
    if s_len < 1:
        raise IllegalValue("chain has no states")
    if t_len < s_len:
        raise PathInfeasible(
            f"{t_len} frames cannot visit {s_len} states without skips"
        )
    delta = np.full(s_len, -np.inf)
    delta[0] = emissions[0, 0]
    back = np.zeros((t_len, s_len), dtype=bool)  # True: came from s-1
    for t in range(1, t_len):
        stay = delta + log_self
        adv = np.empty(s_len)
        adv[0] = -np.inf
        adv[1:] = delta[:-1] + log_next[:-1]
        take_adv = adv >= stay
        delta = np.where(take_adv, adv, stay) + emissions[t]
        back[t] = take_adv
    loglik = float(delta[s_len - 1] + log_next[s_len - 1])
    if not np.isfinite(loglik):
        raise PathInfeasible("no feasible path through the chain")
    path = np.empty(t_len, dtype=np.int64)
    s = s_len - 1
    for t in range(t_len - 1, 0, -1):
        path[t] = s
        if back[t, s]:
            s -= 1
    path[0] = s
    return loglik, path


def _silence_variants(words: tuple[str, ...], mode: str) -> list[tuple[str, ...]]:
    words = tuple(words)
    if mode == "none":
        return [words]
    if mode == "forced":
        return [(SILENCE_WORD,) + words + (SILENCE_WORD,)]
    if mode == "optional":
        return [
            words,
            (SILENCE_WORD,) + words,
            words + (SILENCE_WORD,),
            (SILENCE_WORD,) + words + (SILENCE_WORD,),
        ]
    raise IllegalValue(f"unknown silence mode {mode!r}")


def _build_chain(model: RecognizerModel, tokens: tuple[str, ...]):
    """Concatenate token HMMs into one chain.

    Returns (refs, log_self, log_next) where refs[i] = (token, local_state).
    """
    refs: list[tuple[str, int]] = []
    log_self_parts = []
    log_next_parts = []
    for tok in tokens:
        hmm = model.token(tok)
        refs.extend((tok, s) for s in range(hmm.num_states))
        log_self_parts.append(hmm.log_self)
        log_next_parts.append(hmm.log_next)
    return refs, np.concatenate(log_self_parts), np.concatenate(log_next_parts)


def viterbi_forced(model: RecognizerModel, features: FeatureSequence,
                   words, silence: str = "optional"):
    """Align features against a fixed word sequence.

    Boundary silence is handled per `silence` ("optional" tries all four
    boundary variants and keeps the best; "forced" requires both; "none"
    allows none). Returns (log-likelihood, path) with path a tuple of
    (token, state_index) per frame. Raises PathInfeasible when no variant
    fits the frame count.
    """
    words = tuple(words)
    if not words:
        raise TooShort("cannot align an empty word sequence")
    if features.dim != model.dim:
        raise DimensionMismatch(
            f"model dim {model.dim} != feature dim {features.dim}"
        )
    x = features.data
    best = None
    for variant in _silence_variants(words, silence):
        refs, log_self, log_next = _build_chain(model, variant)
        if x.shape[0] < len(refs):
            continue
        packed = _pack_states([model.token(t).states[s] for t, s in refs], model.dim)
        emis = _emission_logliks(x, packed)
        try:
            ll, path = viterbi_chain(emis, log_self, log_next)
        except PathInfeasible:
            continue
        if best is None or ll > best[0]:
            best = (ll, tuple(refs[p] for p in path))
    if best is None:
        raise PathInfeasible(
            f"{x.shape[0]} frames cannot realize {words} under silence={silence}"
        )
    return best


def decode_nbest(model: RecognizerModel, features: FeatureSequence,
                 utterance_id: str, view: ViewAngle, n: int = 5) -> NBestList:
    """Exact closed-grammar n-best: score every phrase, keep the n best.

    Phrases whose minimal state chain does not fit the frame count are
    skipped. Ties sort by ascending phrase id.
    """
    if n < 1:
        raise IllegalValue(f"n must be >= 1, got {n}")
    if features.dim != model.dim:
        raise DimensionMismatch(
            f"model dim {model.dim} != feature dim {features.dim}"
        )
    x = features.data
    tokens = model.all_tokens()
    offsets: dict[str, int] = {}
    all_states: list[GmmState] = []
    for tok in tokens:
        offsets[tok] = len(all_states)
        all_states.extend(model.token(tok).states)
    emis_all = _emission_logliks(x, _pack_states(all_states, model.dim))

    scored: list[tuple[float, int, tuple[str, ...]]] = []
    for phrase in model.phrases:
        for w in phrase.words:
            if w != SILENCE_WORD and w not in model.words:
                raise LexiconGap(f"phrase {phrase.phrase_id} uses unknown word {w!r}")
        best_ll = None
        for variant in _silence_variants(phrase.words, "optional"):
            refs, log_self, log_next = _build_chain(model, variant)
            if x.shape[0] < len(refs):
                continue
            cols = [offsets[tok] + s for tok, s in refs]
            try:
                ll, _ = viterbi_chain(emis_all[:, cols], log_self, log_next)
            except PathInfeasible:
                continue
            if best_ll is None or ll > best_ll:
                best_ll = ll
        if best_ll is not None:
            scored.append((best_ll, phrase.phrase_id, phrase.words))
    scored.sort(key=lambda item: (-item[0], item[1]))
    entries = tuple(
        NBestEntry(pid, words, ll) for ll, pid, words in scored[:n]
    )
    return NBestList(utterance_id, view, entries)


# -- training ---------------------------------------------------------------------


def _mixture_schedule(max_mixtures: int) -> list[int]:
    schedule = [1]
    while schedule[-1] < max_mixtures:
        schedule.append(min(schedule[-1] * 2, max_mixtures))
    return schedule


def _split_state(state: GmmState, target: int) -> GmmState:
    """Grow a GMM to `target` components by splitting the heaviest ones.

    Each split halves the weight and perturbs the mean by +/- 0.2 standard
    deviations. Components that have withered away are dropped first.
    """
    keep = state.weights >= _DEFUNCT_WEIGHT
    if not np.all(keep) and keep.sum() >= 1:
        w = state.weights[keep]
        state = GmmState(w / w.sum(), state.means[keep], state.variances[keep])
    weights = list(state.weights)
    means = list(state.means)
    variances = list(state.variances)
    while len(weights) < target:
        i = int(np.argmax(weights))
        w, mu, var = weights[i], means[i], variances[i]
        offset = 0.2 * np.sqrt(var)
        weights[i] = w / 2.0
        means[i] = mu + offset
        weights.append(w / 2.0)
        means.append(mu - offset)
        variances.append(var.copy())
    w = np.array(weights)
    return GmmState(w / w.sum(), np.array(means), np.array(variances))


class _Stats:
    """Per-token accumulators for one re-estimation pass."""

    def __init__(self, hmm: WordHmm, dim: int):
        s = hmm.num_states
        ms = [st.num_mixtures for st in hmm.states]
        self.gamma = [np.zeros(m) for m in ms]
        self.gx = [np.zeros((m, dim)) for m in ms]
        self.gx2 = [np.zeros((m, dim)) for m in ms]
        self.n_self = np.zeros(s)
        self.n_adv = np.zeros(s)


def _accumulate(stats: dict, model: RecognizerModel, x: np.ndarray,
                refs, path: np.ndarray) -> None:
    global_states = np.asarray(path)
    # transition counts, including the final exit
    for t in range(1, len(path)):
        tok, s = refs[path[t - 1]]
        if path[t] == path[t - 1]:
            stats[tok].n_self[s] += 1.0
        else:
            stats[tok].n_adv[s] += 1.0
    tok, s = refs[path[-1]]
    stats[tok].n_adv[s] += 1.0
    # emission stats with soft component responsibilities
    for pos in np.unique(global_states):
        tok, s = refs[pos]
        state = model.token(tok).states[s]
        frames = x[global_states == pos]
        diff = frames[:, None, :] - state.means[None]
        quad = (diff * diff / state.variances[None]).sum(axis=2)
        with np.errstate(divide="ignore"):
            log_comp = (
                np.log(state.weights)[None]
                - 0.5 * (state.dim * _LOG_2PI + np.log(state.variances).sum(axis=1)[None] + quad)
            )
        log_resp = log_comp - _logsumexp(log_comp, axis=1)[:, None]
        resp = np.exp(log_resp)  # (Tg, M)
        st = stats[tok]
        st.gamma[s] += resp.sum(axis=0)
        st.gx[s] += resp.T @ frames
        st.gx2[s] += resp.T @ (frames * frames)


def _apply_stats(model: RecognizerModel, stats: dict, var_floor: np.ndarray) -> None:
    for tok in model.all_tokens():
        hmm = model.token(tok)
        st = stats[tok]
        for s in range(hmm.num_states):
            total = float(st.gamma[s].sum())
            if total <= 0:
                continue  # state captured no frames; keep prior parameters
            old = hmm.states[s]
            gamma = st.gamma[s]
            # exact ML weights; exact zeros mark defunct components and keep
            # the update a true maximization step
            weights = gamma / total
            means = old.means.copy()
            variances = old.variances.copy()
            for m in range(old.num_mixtures):
                if gamma[m] <= 0:
                    continue  # component got nothing; keep prior parameters
                mu = st.gx[s][m] / gamma[m]
                var = st.gx2[s][m] / gamma[m] - mu * mu
                means[m] = mu
                variances[m] = np.maximum(var, var_floor)
            hmm.states[s] = GmmState(weights, means, variances)
        trans_total = st.n_self + st.n_adv
        with np.errstate(divide="ignore", invalid="ignore"):
            p_self = np.where(trans_total > 0, st.n_self / np.maximum(trans_total, 1.0), np.nan)
        log_self = hmm.log_self.copy()
        log_next = hmm.log_next.copy()
        seen = trans_total > 0
        with np.errstate(divide="ignore"):
            log_self[seen] = np.log(p_self[seen])
            log_next[seen] = np.log(1.0 - p_self[seen])
        hmm.log_self = log_self
        hmm.log_next = log_next


def _uniform_alignment(n_frames: int, n_states: int) -> np.ndarray:
    if n_frames < n_states:
        raise PathInfeasible(
            f"{n_frames} frames cannot visit {n_states} states"
        )
    return np.minimum((np.arange(n_frames) * n_states) // n_frames, n_states - 1)


def train_recognizer(data, phrases: PhraseSet, config: RecognizerConfig,
                     trained_on: str = "") -> RecognizerModel:
    """Train word and silence models from transcribed feature sequences.

    `data` is a list of (FeatureSequence, words) pairs; every word must be in
    the phrase-set vocabulary. Flat start assigns global statistics to every
    state and takes one uniform-segmentation statistics pass; afterwards each
    mixture stage alternates Viterbi forced alignment with re-estimation.
    The per-iteration total alignment log-likelihood is recorded in
    `training_log` as (mixtures, iteration, loglik) and is non-decreasing
    within each stage.
    """
    data = [(feats, tuple(words)) for feats, words in data]
    if not data:
        raise TooShort("no training utterances")
    dims = {feats.dim for feats, _ in data}
    if len(dims) != 1:
        raise DimensionMismatch(f"mixed feature dimensions: {sorted(dims)}")
    dim = dims.pop()
    lexicon = set(phrases.vocabulary)
    for _, words in data:
        missing = set(words) - lexicon - {SILENCE_WORD}
        if missing:
            raise LexiconGap(f"transcript words not in lexicon: {sorted(missing)}")

    all_frames = np.vstack([feats.data for feats, _ in data])
    global_mean = all_frames.mean(axis=0)
    global_var = all_frames.var(axis=0)
    if global_var.max() <= 0:
        raise DegenerateData("training features are constant in every dimension")
    var_floor = np.maximum(
        config.variance_floor_factor * global_var,
        1e-10 * global_var.max(),
    )
    base_var = np.maximum(global_var, var_floor)

    def fresh_hmm(word: str, n_states: int) -> WordHmm:
        states = [
            GmmState(np.ones(1), global_mean[None].copy(), base_var[None].copy())
            for _ in range(n_states)
        ]
        log_self = np.full(n_states, np.log(config.self_loop_init))
        log_next = np.full(n_states, np.log(1.0 - config.self_loop_init))
        return WordHmm(word, states, log_self, log_next)

    model = RecognizerModel(
        words={w: fresh_hmm(w, config.states_per_word) for w in sorted(lexicon)},
        silence=fresh_hmm(SILENCE_WORD, config.silence_states),
        phrases=phrases,
        dim=dim,
        trained_on=trained_on,
    )
    sil_mode = config.train_boundary_silence

    # flat start: one uniform-segmentation statistics pass
    stats = {tok: _Stats(model.token(tok), dim) for tok in model.all_tokens()}
    for feats, words in data:
        variant = _silence_variants(words, "forced" if sil_mode != "none" else "none")[0]
        refs, _, _ = _build_chain(model, variant)
        path = _uniform_alignment(feats.num_frames, len(refs))
        _accumulate(stats, model, feats.data, refs, path)
    _apply_stats(model, stats, var_floor)

    for stage in _mixture_schedule(config.max_mixtures):
        for tok in model.all_tokens():
            hmm = model.token(tok)
            for s in range(hmm.num_states):
                if hmm.states[s].num_mixtures < stage:
                    hmm.states[s] = _split_state(hmm.states[s], stage)
        prev_ll = None
        for it in range(config.em_iterations):
            stats = {tok: _Stats(model.token(tok), dim) for tok in model.all_tokens()}
            total_ll = 0.0
            for feats, words in data:
                best = None
                for variant in _silence_variants(words, sil_mode):
                    refs, log_self, log_next = _build_chain(model, variant)
                    if feats.num_frames < len(refs):
                        continue
                    packed = _pack_states(
                        [model.token(t).states[s] for t, s in refs], dim
                    )
                    emis = _emission_logliks(feats.data, packed)
                    try:
                        ll, path = viterbi_chain(emis, log_self, log_next)
                    except PathInfeasible:
                        continue
                    if best is None or ll > best[0]:
                        best = (ll, refs, path)
                if best is None:
                    raise PathInfeasible(
                        f"cannot align {words} within {feats.num_frames} frames"
                    )
                ll, refs, path = best
                total_ll += ll
                _accumulate(stats, model, feats.data, refs, path)
            model.training_log.append((stage, it, total_ll))
            _apply_stats(model, stats, var_floor)
            if (
                prev_ll is not None
                and config.em_tolerance > 0
                and total_ll - prev_ll <= config.em_tolerance * max(1.0, abs(total_ll))
            ):
                break
            prev_ll = total_ll
    return model


# -- recognizer file format ---------------------------------------------------------
#
# Little-endian: magic "GHMM", version u32, dim u32, n_phrases u32,
# n_words u32. Then the phrase grammar (per phrase: id u32, word count u32,
# word-table indices u32...), the word table (per word: u32 byte length +
# utf-8 name), each word's HMM in table order, and finally the silence model.
# An HMM block is: state count u32, then per state mixture count u32 followed
# by float64 weights (M), means (M*D) and variances (M*D), then float64
# log_self (S) and log_next (S).

_GHMM_MAGIC = b"GHMM"
_GHMM_VERSION = 1


def _pack_hmm(hmm: WordHmm) -> bytes:
    parts = [struct.pack("<I", hmm.num_states)]
    for st in hmm.states:
        parts.append(struct.pack("<I", st.num_mixtures))
        parts.append(st.weights.astype("<f8").tobytes())
        parts.append(st.means.astype("<f8").tobytes(order="C"))
        parts.append(st.variances.astype("<f8").tobytes(order="C"))
    parts.append(hmm.log_self.astype("<f8").tobytes())
    parts.append(hmm.log_next.astype("<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, blob: bytes, offset: int):
        self.blob = blob
        self.offset = offset

    def u32(self) -> int:
        (v,) = struct.unpack_from("<I", self.blob, self.offset)
        self.offset += 4
        return v

    def f64(self, count: int) -> np.ndarray:
        out = np.frombuffer(self.blob, dtype="<f8", offset=self.offset, count=count)
        self.offset += 8 * count
        return out.copy()

    def raw(self, count: int) -> bytes:
        out = self.blob[self.offset:self.offset + count]
        self.offset += count
        return out


def _unpack_hmm(reader: _Reader, word: str, dim: int) -> WordHmm:
    n_states = reader.u32()
    states = []
    for _ in range(n_states):
        m = reader.u32()
        weights = reader.f64(m)
        means = reader.f64(m * dim).reshape(m, dim)
        variances = reader.f64(m * dim).reshape(m, dim)
        states.append(GmmState(weights, means, variances))
    log_self = reader.f64(n_states)
    log_next = reader.f64(n_states)
    return WordHmm(word, states, log_self, log_next)


def write_recognizer(path, model: RecognizerModel) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    words = sorted(model.words)
    word_index = {w: i for i, w in enumerate(words)}
    parts = [
        _GHMM_MAGIC,
        struct.pack("<IIII", _GHMM_VERSION, model.dim, len(model.phrases), len(words)),
    ]
    for phrase in sorted(model.phrases, key=lambda p: p.phrase_id):
        parts.append(struct.pack("<II", phrase.phrase_id, len(phrase.words)))
        for w in phrase.words:
            if w not in word_index:
                raise LexiconGap(f"phrase {phrase.phrase_id} uses unknown word {w!r}")
            parts.append(struct.pack("<I", word_index[w]))
    for w in words:
        raw = w.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
    for w in words:
        parts.append(_pack_hmm(model.words[w]))
    parts.append(_pack_hmm(model.silence))
    path.write_bytes(b"".join(parts))


def read_recognizer(path) -> RecognizerModel:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"recognizer file not found: {path}")
    blob = path.read_bytes()
    if len(blob) < 20 or blob[:4] != _GHMM_MAGIC:
        raise ShapeMismatch(f"not a recognizer file: {path}")
    version, dim, n_phrases, n_words = struct.unpack_from("<IIII", blob, 4)
    if version != _GHMM_VERSION:
        raise IllegalValue(f"unsupported recognizer file version {version}")
    reader = _Reader(blob, 20)
    try:
        phrase_specs = []
        for _ in range(n_phrases):
            pid = reader.u32()
            count = reader.u32()
            phrase_specs.append((pid, [reader.u32() for _ in range(count)]))
        words = []
        for _ in range(n_words):
            length = reader.u32()
            words.append(reader.raw(length).decode("utf-8"))
        hmms = {w: _unpack_hmm(reader, w, dim) for w in words}
        silence = _unpack_hmm(reader, SILENCE_WORD, dim)
    except (struct.error, IndexError, ValueError) as exc:
        raise LengthMismatch(f"truncated or corrupt recognizer file {path}") from exc
    phrases = PhraseSet(
        tuple(
            Phrase(pid, tuple(words[i] for i in idxs)) for pid, idxs in phrase_specs
        )
    )
    return RecognizerModel(words=hmms, silence=silence, phrases=phrases, dim=dim)
