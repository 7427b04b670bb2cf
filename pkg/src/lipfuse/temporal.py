"""Recurrent frame classifier and tandem feature post-processing.

A single LSTM layer (input, forget, output gates and a cell state) over an
optional linear input projection produces per-frame class posteriors through
a softmax output layer. Training is plain backpropagation through time over
whole sequences with global gradient-norm clipping and Adam updates, one
sequence per update, deterministic for a fixed seed.

Tandem features are the floored log posteriors with delta and acceleration
components appended (the usual regression-formula deltas with replicated
edges), tripling the class count into the feature dimension.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TemporalConfig
from .core import FeatureSequence, SILENCE_CLASS
from .errors import (
    DimensionMismatch,
    IllegalValue,
    LengthMismatch,
    MissingFile,
    NonFiniteLoss,
    SchemaViolation,
    ShapeMismatch,
    TooShort,
)

# parameter tensors in serialization order; proj_* only exist with a projection
_PARAM_ORDER = ("proj_W", "proj_b", "Wx", "Wh", "b", "Wy", "by")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _log_softmax(u: np.ndarray) -> np.ndarray:
    shifted = u - u.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass
class TemporalModel:
    input_dim: int
    projection_dim: int  # 0 means the LSTM consumes the raw features
    hidden_units: int
    classes: int
    params: dict[str, np.ndarray]
    losses: list[float] = field(default_factory=list)

    @property
    def lstm_input_dim(self) -> int:
        return self.projection_dim if self.projection_dim > 0 else self.input_dim

    def param_items(self):
        return [(k, self.params[k]) for k in _PARAM_ORDER if k in self.params]


def init_model(input_dim: int, config: TemporalConfig, seed: int = 0) -> TemporalModel:
    """Seeded random initialization; forget-gate biases start at one."""
    if input_dim < 1:
        raise IllegalValue(f"input dimension must be >= 1, got {input_dim}")
    rng = np.random.default_rng(seed)
    p, h, c = config.projection_dim, config.hidden_units, config.classes
    d_in = p if p > 0 else input_dim

    def glorot(rows, cols):
        return rng.standard_normal((rows, cols)) / np.sqrt(cols)

    params: dict[str, np.ndarray] = {}
    if p > 0:
        params["proj_W"] = glorot(p, input_dim)
        params["proj_b"] = np.zeros(p)
    params["Wx"] = glorot(4 * h, d_in)
    params["Wh"] = glorot(4 * h, h)
    b = np.zeros(4 * h)
    b[h:2 * h] = 1.0  # forget gate bias
    params["b"] = b
    params["Wy"] = glorot(c, h)
    params["by"] = np.zeros(c)
    return TemporalModel(input_dim, p, config.hidden_units, config.classes, params)


def _forward(model: TemporalModel, x: np.ndarray) -> dict:
    """Run the network over one (T, D) sequence, keeping intermediates."""
    t_len = x.shape[0]
    h_n = model.hidden_units
    params = model.params
    if model.projection_dim > 0:
        proj = x @ params["proj_W"].T + params["proj_b"]
    else:
        proj = x
    hs = np.zeros((t_len + 1, h_n))
    cs = np.zeros((t_len + 1, h_n))
    gates = np.zeros((t_len, 4 * h_n))
    tanh_c = np.zeros((t_len, h_n))
    for t in range(t_len):
        z = params["Wx"] @ proj[t] + params["Wh"] @ hs[t] + params["b"]
        i = _sigmoid(z[:h_n])
        f = _sigmoid(z[h_n:2 * h_n])
        g = np.tanh(z[2 * h_n:3 * h_n])
        o = _sigmoid(z[3 * h_n:])
        cs[t + 1] = f * cs[t] + i * g
        tanh_c[t] = np.tanh(cs[t + 1])
        hs[t + 1] = o * tanh_c[t]
        gates[t] = np.concatenate([i, f, g, o])
    logits = hs[1:] @ params["Wy"].T + params["by"]
    logp = _log_softmax(logits)
    return {
        "x": x, "proj": proj, "hs": hs, "cs": cs, "gates": gates,
        "tanh_c": tanh_c, "logits": logits, "logp": logp,
    }


def posteriors(model: TemporalModel, features) -> np.ndarray:
    """Per-frame class posteriors, one row per frame, rows summing to one.

    The recurrence is causal: row t depends only on frames 0..t.
    """
    x = features.data if isinstance(features, FeatureSequence) else np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ShapeMismatch(f"expected a (T, D) feature matrix, got {x.shape}")
    if x.shape[1] != model.input_dim:
        raise DimensionMismatch(
            f"model expects {model.input_dim}-dim features, got {x.shape[1]}"
        )
    return np.exp(_forward(model, x)["logp"])


def loss_and_grads(model: TemporalModel, x: np.ndarray,
                   labels: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean per-frame cross-entropy and its exact gradients (full BPTT)."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    t_len = x.shape[0]
    if labels.shape != (t_len,):
        raise LengthMismatch(
            f"{t_len} frames but {labels.shape} labels"
        )
    if labels.min() < 0 or labels.max() >= model.classes:
        raise IllegalValue(
            f"labels must lie in [0, {model.classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    cache = _forward(model, x)
    logp = cache["logp"]
    loss = -float(logp[np.arange(t_len), labels].mean())

    h_n = model.hidden_units
    params = model.params
    grads = {k: np.zeros_like(v) for k, v in params.items()}

    d_logits = np.exp(logp)
    d_logits[np.arange(t_len), labels] -= 1.0
    d_logits /= t_len

    hs, cs, gates, tanh_c = cache["hs"], cache["cs"], cache["gates"], cache["tanh_c"]
    proj = cache["proj"]
    grads["Wy"] = d_logits.T @ hs[1:]
    grads["by"] = d_logits.sum(axis=0)

    d_proj = np.zeros_like(proj)
    dh_next = np.zeros(h_n)
    dc_next = np.zeros(h_n)
    for t in range(t_len - 1, -1, -1):
        i = gates[t, :h_n]
        f = gates[t, h_n:2 * h_n]
        g = gates[t, 2 * h_n:3 * h_n]
        o = gates[t, 3 * h_n:]
        dh = params["Wy"].T @ d_logits[t] + dh_next
        do = dh * tanh_c[t]
        dc = dh * o * (1.0 - tanh_c[t] ** 2) + dc_next
        di = dc * g
        df = dc * cs[t]
        dg = dc * i
        dc_next = dc * f
        dz = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g ** 2),
            do * o * (1.0 - o),
        ])
        grads["Wx"] += np.outer(dz, proj[t])
        grads["Wh"] += np.outer(dz, hs[t])
        grads["b"] += dz
        d_proj[t] = params["Wx"].T @ dz
        dh_next = params["Wh"].T @ dz
    if model.projection_dim > 0:
        grads["proj_W"] = d_proj.T @ x
        grads["proj_b"] = d_proj.sum(axis=0)
    return loss, grads


def _clip_global_norm(grads: dict, clip: float) -> None:
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    norm = np.sqrt(total)
    if norm > clip:
        scale = clip / norm
        for g in grads.values():
            g *= scale


def train_temporal(data, config: TemporalConfig, seed: int = 0) -> TemporalModel:
    """Train the frame classifier on (features, labels) sequence pairs.

    One Adam update per sequence, sequences visited in a seeded shuffled
    order each epoch. The recorded per-epoch loss is the frame-weighted mean
    of the per-sequence losses as they were seen during the epoch. Raises
    NonFiniteLoss (naming the epoch) if training diverges. With zero epochs
    the seeded initial model is returned unchanged.
    """
    prepared = []
    for features, labels in data:
        x = features.data if isinstance(features, FeatureSequence) else np.asarray(features, dtype=np.float64)
        y = np.asarray(labels, dtype=np.int64)
        if x.ndim != 2:
            raise ShapeMismatch(f"features must be (T, D), got {x.shape}")
        if y.shape != (x.shape[0],):
            raise LengthMismatch(
                f"sequence has {x.shape[0]} frames but {y.shape} labels"
            )
        prepared.append((x, y))
    if not prepared:
        raise TooShort("no training sequences")
    dims = {x.shape[1] for x, _ in prepared}
    if len(dims) != 1:
        raise DimensionMismatch(f"mixed feature dimensions: {sorted(dims)}")
    input_dim = dims.pop()

    model = init_model(input_dim, config, seed)
    for _, y in prepared:
        if y.min() < 0 or y.max() >= config.classes:
            raise IllegalValue(
                f"labels must lie in [0, {config.classes}), got range "
                f"[{y.min()}, {y.max()}]"
            )

    rng = np.random.default_rng(seed + 1)
    adam_m = {k: np.zeros_like(v) for k, v in model.params.items()}
    adam_v = {k: np.zeros_like(v) for k, v in model.params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(prepared))
        weighted_loss = 0.0
        frames = 0
        for idx in order:
            x, y = prepared[idx]
            loss, grads = loss_and_grads(model, x, y)
            if not np.isfinite(loss):
                raise NonFiniteLoss(
                    f"training loss became non-finite in epoch {epoch + 1}"
                )
            weighted_loss += loss * x.shape[0]
            frames += x.shape[0]
            _clip_global_norm(grads, config.clip_norm)
            step += 1
            corr1 = 1.0 - beta1 ** step
            corr2 = 1.0 - beta2 ** step
            for key, g in grads.items():
                adam_m[key] = beta1 * adam_m[key] + (1 - beta1) * g
                adam_v[key] = beta2 * adam_v[key] + (1 - beta2) * g * g
                m_hat = adam_m[key] / corr1
                v_hat = adam_v[key] / corr2
                model.params[key] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        model.losses.append(weighted_loss / frames)
    return model


# -- tandem features -------------------------------------------------------------


def _regression_deltas(values: np.ndarray, window: int) -> np.ndarray:
    """Regression-formula time derivatives with replicated edge frames."""
    t_len = values.shape[0]
    denom = 2.0 * sum(th * th for th in range(1, window + 1))
    out = np.zeros_like(values)
    idx = np.arange(t_len)
    for th in range(1, window + 1):
        ahead = values[np.minimum(idx + th, t_len - 1)]
        behind = values[np.maximum(idx - th, 0)]
        out += th * (ahead - behind)
    return out / denom


def tandem_features(post: np.ndarray, delta_window: int = 2,
                    floor: float = 1e-8, frame_rate: float = 30.0) -> FeatureSequence:
    """Floored log posteriors with delta and acceleration columns appended.

    Output dimension is three times the class count.
    """
    post = np.asarray(post, dtype=np.float64)
    if post.ndim != 2 or post.shape[0] < 1:
        raise ShapeMismatch(f"posteriors must be (T, C), got {post.shape}")
    if delta_window < 1:
        raise IllegalValue(f"delta window must be >= 1, got {delta_window}")
    if not (floor > 0):
        raise IllegalValue(f"posterior floor must be positive, got {floor}")
    if post.min() < 0:
        raise IllegalValue("posteriors must be non-negative")
    static = np.log(np.maximum(post, floor))
    delta = _regression_deltas(static, delta_window)
    accel = _regression_deltas(delta, delta_window)
    return FeatureSequence(np.hstack([static, delta, accel]), frame_rate)


# -- model file format -------------------------------------------------------------
#
# Little-endian: magic "TMDL", version u32, input_dim u32, projection_dim u32,
# hidden_units u32, classes u32, then float64 tensors row-major in the order
# proj_W, proj_b (only when projection_dim > 0), Wx, Wh, b, Wy, by.

_TMDL_MAGIC = b"TMDL"
_TMDL_VERSION = 1


def write_temporal_model(path, model: TemporalModel) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _TMDL_MAGIC + struct.pack(
        "<IIIII",
        _TMDL_VERSION,
        model.input_dim,
        model.projection_dim,
        model.hidden_units,
        model.classes,
    )
    body = b"".join(
        tensor.astype("<f8").tobytes(order="C") for _, tensor in model.param_items()
    )
    path.write_bytes(header + body)


def read_temporal_model(path) -> TemporalModel:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"temporal model file not found: {path}")
    blob = path.read_bytes()
    if len(blob) < 24 or blob[:4] != _TMDL_MAGIC:
        raise ShapeMismatch(f"not a temporal model file: {path}")
    version, input_dim, proj, hidden, classes = struct.unpack("<IIIII", blob[4:24])
    if version != _TMDL_VERSION:
        raise IllegalValue(f"unsupported temporal model version {version}")
    d_in = proj if proj > 0 else input_dim
    shapes = []
    if proj > 0:
        shapes += [("proj_W", (proj, input_dim)), ("proj_b", (proj,))]
    shapes += [
        ("Wx", (4 * hidden, d_in)),
        ("Wh", (4 * hidden, hidden)),
        ("b", (4 * hidden,)),
        ("Wy", (classes, hidden)),
        ("by", (classes,)),
    ]
    expected = 24 + 8 * sum(int(np.prod(s)) for _, s in shapes)
    if len(blob) != expected:
        raise LengthMismatch(
            f"temporal model file {path} has {len(blob)} bytes, expected {expected}"
        )
    params = {}
    offset = 24
    for name, shape in shapes:
        count = int(np.prod(shape))
        params[name] = (
            np.frombuffer(blob, dtype="<f8", offset=offset, count=count)
            .reshape(shape)
            .copy()
        )
        offset += 8 * count
    return TemporalModel(input_dim, proj, hidden, classes, params)


# -- frame label files --------------------------------------------------------------
#
# Text format, one utterance per line: "<utterance_id> <class> <class> ...".
# The header line records the class inventory size and which id is silence.


def write_label_file(path, labels: dict, num_classes: int,
                     silence_class: int = SILENCE_CLASS) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# silence_class={silence_class} num_classes={num_classes}"]
    for utt_id in sorted(labels):
        seq = np.asarray(labels[utt_id], dtype=np.int64)
        if seq.size and (seq.min() < 0 or seq.max() >= num_classes):
            raise IllegalValue(
                f"labels for {utt_id} outside [0, {num_classes})"
            )
        lines.append(utt_id + " " + " ".join(str(int(c)) for c in seq))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_label_file(path) -> tuple[dict, int, int]:
    """Returns (labels by utterance id, num_classes, silence_class)."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"label file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise SchemaViolation(f"label file {path} is missing its header line")
    header = dict(
        part.split("=", 1) for part in lines[0].lstrip("#").split() if "=" in part
    )
    try:
        num_classes = int(header["num_classes"])
        silence_class = int(header["silence_class"])
    except (KeyError, ValueError) as exc:
        raise SchemaViolation(f"malformed label file header: {lines[0]!r}") from exc
    labels: dict[str, np.ndarray] = {}
    for line_no, line in enumerate(lines[1:], 2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        utt_id, values = parts[0], parts[1:]
        try:
            seq = np.array([int(v) for v in values], dtype=np.int64)
        except ValueError as exc:
            raise SchemaViolation(f"{path}:{line_no}: non-integer label") from exc
        if seq.size and (seq.min() < 0 or seq.max() >= num_classes):
            raise IllegalValue(
                f"{path}:{line_no}: label outside [0, {num_classes})"
            )
        labels[utt_id] = seq
    return labels, num_classes, silence_class
