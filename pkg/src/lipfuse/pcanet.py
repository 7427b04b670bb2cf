"""Two-stage PCA-network features for mouth-region frames.

Stage filters are the leading eigenvectors of the covariance of patch-mean-
removed k x k patches; two convolution stages, binarization of the stage-2
responses into hash codes, and block histograms yield one feature row per
frame (stage1_filters * blocks * 2**stage2_filters values, 32768 at the
defaults of 8 filters per stage and a 4 x 4 grid).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .config import PcanetConfig
from .core import FeatureSequence
from .errors import (
    DegenerateData,
    GridTooFine,
    IllegalValue,
    ImageTooSmall,
    InsufficientFrames,
    LengthMismatch,
    MissingFile,
    ShapeMismatch,
)

_VARIANCE_EPS = 1e-10


@dataclass
class PcaFilters:
    """Learned convolution filters for both stages plus their eigenvalues."""

    patch_size: int
    stage1: np.ndarray  # (L1, k, k) float64
    stage2: np.ndarray  # (L2, k, k) float64
    eigvals1: np.ndarray = field(default_factory=lambda: np.zeros(0))
    eigvals2: np.ndarray = field(default_factory=lambda: np.zeros(0))
    trained_on: str = ""

    def __post_init__(self):
        k = self.patch_size
        for name, bank in (("stage1", self.stage1), ("stage2", self.stage2)):
            if bank.ndim != 3 or bank.shape[1:] != (k, k):
                raise ShapeMismatch(
                    f"{name} filters must be (L, {k}, {k}), got {bank.shape}"
                )

    @property
    def num_stage1(self) -> int:
        return self.stage1.shape[0]

    @property
    def num_stage2(self) -> int:
        return self.stage2.shape[0]

    def feature_dim(self, block_grid) -> int:
        return self.num_stage1 * block_grid[0] * block_grid[1] * (2 ** self.num_stage2)


def _as_image(frame) -> np.ndarray:
    img = np.asarray(frame, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeMismatch(f"frames must be 2-D grayscale, got shape {img.shape}")
    return img


def _check_size(img: np.ndarray, k: int) -> None:
    if img.shape[0] < k or img.shape[1] < k:
        raise ImageTooSmall(
            f"image {img.shape} is smaller than the {k} x {k} patch size"
        )


def convolve_stage(image, filters: np.ndarray) -> np.ndarray:
    """Filter responses on patch-mean-removed neighborhoods, same-size output.

    For the window centered at each pixel, the mean over the in-bounds pixels
    is removed from the in-bounds pixels (out-of-bounds positions contribute
    zero), then each filter is applied as a dot product. Deviations are
    computed as (n*value - patch_sum) / n so that integer-valued images shifted
    by an integer constant produce bit-identical responses.
    """
    img = _as_image(image)
    filters = np.asarray(filters, dtype=np.float64)
    if filters.ndim != 3 or filters.shape[1] != filters.shape[2]:
        raise ShapeMismatch(f"filter bank must be (L, k, k), got {filters.shape}")
    k = filters.shape[1]
    _check_size(img, k)
    pad = k // 2
    padded = np.pad(img, pad)
    valid = np.pad(np.ones(img.shape), pad)
    win = sliding_window_view(padded, (k, k))  # (H, W, k, k)
    vwin = sliding_window_view(valid, (k, k))
    counts = vwin.sum(axis=(-2, -1))  # in-bounds pixels per window
    sums = win.sum(axis=(-2, -1))
    dev = (counts[..., None, None] * win - sums[..., None, None]) * vwin
    dev /= counts[..., None, None]
    return np.einsum("hwab,fab->fhw", dev, filters)


def binarize_and_hash(maps: np.ndarray) -> np.ndarray:
    """Threshold response maps at zero and pack them into integer hash codes.

    maps is (L, H, W); the first map supplies the most significant bit, so
    codes lie in [0, 2**L - 1].
    """
    maps = np.asarray(maps)
    if maps.ndim != 3:
        raise ShapeMismatch(f"expected (L, H, W) maps, got shape {maps.shape}")
    n_bits = maps.shape[0]
    if n_bits > 62:
        raise IllegalValue(f"cannot hash more than 62 maps, got {n_bits}")
    codes = np.zeros(maps.shape[1:], dtype=np.int64)
    for b in range(n_bits):
        codes |= (maps[b] > 0).astype(np.int64) << (n_bits - 1 - b)
    return codes


def block_histograms(codes: np.ndarray, block_grid, bins: int) -> np.ndarray:
    """Per-block occurrence counts of hash codes, concatenated block-major.

    The map splits into block_grid non-overlapping blocks (any remainder is
    absorbed by the last row/column of blocks); blocks are visited row by row.
    """
    codes = np.asarray(codes)
    if codes.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D code map, got shape {codes.shape}")
    rows, cols = block_grid
    h, w = codes.shape
    if h < rows or w < cols:
        raise GridTooFine(
            f"{rows} x {cols} block grid does not fit a {h} x {w} map"
        )
    if codes.min() < 0 or codes.max() >= bins:
        raise IllegalValue(
            f"hash codes must lie in [0, {bins}), got range "
            f"[{codes.min()}, {codes.max()}]"
        )
    rb = [i * (h // rows) for i in range(rows)] + [h]
    cb = [j * (w // cols) for j in range(cols)] + [w]
    out = np.empty(rows * cols * bins, dtype=np.float64)
    pos = 0
    for i in range(rows):
        for j in range(cols):
            block = codes[rb[i]:rb[i + 1], cb[j]:cb[j + 1]]
            out[pos:pos + bins] = np.bincount(block.ravel(), minlength=bins)
            pos += bins
    return out


def _patch_covariance(image_iter, sizes, k: int, cap: int,
                      rng: np.random.Generator,
                      variance_normalize: bool) -> tuple[np.ndarray, int]:
    """Second-moment matrix of mean-removed patches, streamed image by image.

    When the total patch count exceeds `cap`, a seeded uniform subsample of
    global patch indices is drawn up front so the result is independent of
    how the images are chunked.
    """
    counts = [(h - k + 1) * (w - k + 1) for h, w in sizes]
    total = sum(counts)
    chosen = None
    if total > cap:
        chosen = np.sort(rng.choice(total, size=cap, replace=False))
    cov = np.zeros((k * k, k * k))
    n = 0
    offset = 0
    for img, cnt in zip(image_iter, counts):
        win = sliding_window_view(img, (k, k)).reshape(-1, k * k)
        if chosen is None:
            patches = np.array(win, dtype=np.float64)
        else:
            lo = np.searchsorted(chosen, offset)
            hi = np.searchsorted(chosen, offset + cnt)
            if lo == hi:
                offset += cnt
                continue
            patches = np.array(win[chosen[lo:hi] - offset], dtype=np.float64)
        offset += cnt
        patches -= patches.mean(axis=1, keepdims=True)
        if variance_normalize:
            patches /= np.maximum(patches.std(axis=1, keepdims=True), _VARIANCE_EPS)
        cov += patches.T @ patches
        n += patches.shape[0]
    return cov, n


def _pca_filters(cov: np.ndarray, n: int, n_filters: int,
                 k: int) -> tuple[np.ndarray, np.ndarray]:
    """Top eigenvectors of the patch covariance, as (L, k, k) filters."""
    if n < n_filters:
        raise InsufficientFrames(
            f"only {n} patches available for {n_filters} filters"
        )
    cov = cov / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    tol = max(eigvals[0], 0.0) * 1e-12
    if eigvals[0] <= 0 or np.any(eigvals[:n_filters] <= tol):
        raise DegenerateData(
            f"patch covariance supports fewer than {n_filters} directions "
            f"(leading eigenvalues {eigvals[:n_filters]})"
        )
    filters = np.empty((n_filters, k, k))
    for i in range(n_filters):
        vec = eigvecs[:, i]
        anchor = np.argmax(np.abs(vec))
        if vec[anchor] < 0:  # deterministic sign convention
            vec = -vec
        filters[i] = vec.reshape(k, k)
    return filters, eigvals[:n_filters].copy()


def learn_filters(frames, config: PcanetConfig, seed: int = 0,
                  trained_on: str = "") -> PcaFilters:
    """Learn both filter stages from training frames.

    Stage 1 runs PCA on sampled patches of the raw frames; stage 2 repeats it
    on patches of the stage-1 response maps. Deterministic for a fixed seed.
    """
    frames = [_as_image(f) for f in frames]
    if not frames:
        raise InsufficientFrames("no training frames given")
    k = config.patch_size
    for img in frames:
        _check_size(img, k)
    rng = np.random.default_rng(seed)

    sizes1 = [img.shape for img in frames]
    cov1, n1 = _patch_covariance(
        iter(frames), sizes1, k, config.sample_cap, rng, config.variance_normalize
    )
    stage1, eig1 = _pca_filters(cov1, n1, config.stage1_filters, k)

    def stage2_maps():
        for img in frames:
            yield from convolve_stage(img, stage1)

    sizes2 = [img.shape for img in frames for _ in range(config.stage1_filters)]
    cov2, n2 = _patch_covariance(
        stage2_maps(), sizes2, k, config.sample_cap, rng, config.variance_normalize
    )
    stage2, eig2 = _pca_filters(cov2, n2, config.stage2_filters, k)
    return PcaFilters(
        patch_size=k,
        stage1=stage1,
        stage2=stage2,
        eigvals1=eig1,
        eigvals2=eig2,
        trained_on=trained_on,
    )


def extract(frames, filters: PcaFilters, config: PcanetConfig,
            frame_rate: float = 30.0) -> FeatureSequence:
    """Per-frame histogram features for a frame sequence.

    Output is (T, stage1_filters * blocks * 2**stage2_filters); rows are
    histogram counts and therefore non-negative.
    """
    if filters.num_stage1 != config.stage1_filters or filters.num_stage2 != config.stage2_filters:
        raise IllegalValue(
            f"filters carry {filters.num_stage1}/{filters.num_stage2} stages, "
            f"config expects {config.stage1_filters}/{config.stage2_filters}"
        )
    if filters.patch_size != config.patch_size:
        raise IllegalValue(
            f"filters use patch size {filters.patch_size}, config says "
            f"{config.patch_size}"
        )
    frames = list(frames)
    if not frames:
        raise InsufficientFrames("no frames to extract features from")
    bins = 2 ** filters.num_stage2
    rows = []
    for img in frames:
        maps1 = convolve_stage(img, filters.stage1)
        parts = []
        for l1 in range(filters.num_stage1):
            maps2 = convolve_stage(maps1[l1], filters.stage2)
            codes = binarize_and_hash(maps2)
            parts.append(block_histograms(codes, config.block_grid, bins))
        rows.append(np.concatenate(parts))
    return FeatureSequence(np.vstack(rows), frame_rate)


# -- filter file format ----------------------------------------------------------
#
# Little-endian: magic "PCNF", version u32, patch_size u32, L1 u32, L2 u32,
# then float64 filter taps stage-major (stage-1 filters then stage-2 filters,
# each filter row-major).

_PCNF_MAGIC = b"PCNF"
_PCNF_VERSION = 1


def write_filter_file(path, filters: PcaFilters) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _PCNF_MAGIC + struct.pack(
        "<IIII",
        _PCNF_VERSION,
        filters.patch_size,
        filters.num_stage1,
        filters.num_stage2,
    )
    body = (
        filters.stage1.astype("<f8").tobytes(order="C")
        + filters.stage2.astype("<f8").tobytes(order="C")
    )
    path.write_bytes(header + body)


def read_filter_file(path) -> PcaFilters:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"filter file not found: {path}")
    blob = path.read_bytes()
    if len(blob) < 20 or blob[:4] != _PCNF_MAGIC:
        raise ShapeMismatch(f"not a filter file: {path}")
    version, k, l1, l2 = struct.unpack("<IIII", blob[4:20])
    if version != _PCNF_VERSION:
        raise IllegalValue(f"unsupported filter file version {version}")
    expected = 20 + 8 * (l1 + l2) * k * k
    if len(blob) != expected:
        raise LengthMismatch(
            f"filter file {path} has {len(blob)} bytes, expected {expected}"
        )
    taps = np.frombuffer(blob, dtype="<f8", offset=20)
    stage1 = taps[: l1 * k * k].reshape(l1, k, k).copy()
    stage2 = taps[l1 * k * k:].reshape(l2, k, k).copy()
    return PcaFilters(patch_size=k, stage1=stage1, stage2=stage2)
