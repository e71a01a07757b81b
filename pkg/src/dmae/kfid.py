"""Keyframe identification: digit detection, RoI filtering, per-frame digit
merging by colour-histogram correlation, and clustering of the merged crops
across the tracklet to keep only the player-of-interest frames.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from dmae import imaging
from dmae.errors import ParameterError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Detection:
    bbox: tuple  # (x, y, w, h), normalised
    digit: int
    confidence: float = 1.0

    def __post_init__(self):
        x, y, w, h = self.bbox
        if w <= 0 or h <= 0:
            raise ParameterError("detection width and height must be positive")
        if x < -1e-9 or y < -1e-9 or x + w > 1 + 1e-9 or y + h > 1 + 1e-9:
            raise ParameterError(f"bbox {self.bbox} leaves the unit square")
        if not 0 <= self.digit <= 9:
            raise ParameterError(f"digit class out of range: {self.digit}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ParameterError("confidence must lie in [0, 1]")

    @property
    def center(self) -> tuple:
        x, y, w, h = self.bbox
        return (x + w / 2.0, y + h / 2.0)


class DigitDetector(Protocol):
    def detect(self, frame: np.ndarray) -> list: ...


class OracleDetector:
    """Returns the generator's ground-truth digit boxes for frames it has seen."""

    def __init__(self, frames: Sequence[np.ndarray], truths: Sequence):
        from dmae.synthdata import frame_key

        self._truth = {}
        for frame, truth in zip(frames, truths):
            self._truth[frame_key(frame)] = [Detection(tuple(d.bbox), d.digit, 1.0) for d in truth.digits]

    @classmethod
    def from_tracklets(cls, tracklets) -> "OracleDetector":
        det = cls([], [])
        for t in tracklets:
            det._truth.update(cls(t.frames, t.truths)._truth)
        return det

    def detect(self, frame: np.ndarray) -> list:
        from dmae.synthdata import frame_key

        return list(self._truth.get(frame_key(frame), []))


@dataclass
class KfidConfig:
    roi: tuple = (0.25, 0.1, 0.75, 0.9)  # (x0, y0, x1, y1)
    lhc_threshold: float = 0.85
    lhc_max_gap: float = 0.08
    ghc_threshold: float = 0.3
    ghc_mode: str = "deep"  # deep | hsv
    hist_bins: int = 8
    crop_size: int = 32
    max_digits: int = 2

    def __post_init__(self):
        x0, y0, x1, y1 = self.roi
        if not (0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1):
            raise ParameterError(f"RoI {self.roi} is not inside the unit square")
        if not -1 <= self.lhc_threshold <= 1:
            raise ParameterError("lhc_threshold must lie in [-1, 1]")
        if not 0 <= self.ghc_threshold <= 2 or self.lhc_max_gap < 0:
            raise ParameterError("invalid GHC threshold or LHC gap")
        if self.ghc_mode not in ("deep", "hsv"):
            raise ParameterError(f"unknown GHC mode {self.ghc_mode!r}")
        self.roi = tuple(self.roi)


@dataclass
class HolisticCrop:
    bbox: tuple  # normalised (x, y, w, h)
    text: str
    detections: list


@dataclass
class KeyframeSet:
    indices: list
    noisy: list
    texts: dict = field(default_factory=dict)  # frame -> merged digit string
    clusters: dict = field(default_factory=dict)  # frame -> cluster id
    chosen_cluster: Optional[int] = None
    status: str = "ok"  # ok | empty

    @property
    def empty(self) -> bool:
        return not self.indices

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "keyframes": list(self.indices),
            "noisy": list(self.noisy),
            "digit_strings": {str(k): v for k, v in sorted(self.texts.items())},
            "clusters": {str(k): int(v) for k, v in sorted(self.clusters.items())},
            "chosen_cluster": self.chosen_cluster,
        }


def roi_filter(dets: Sequence[Detection], roi: tuple) -> list:
    x0, y0, x1, y1 = roi
    return [d for d in dets if x0 <= d.center[0] <= x1 and y0 <= d.center[1] <= y1]


def _pixel_box(bbox: tuple, shape: tuple) -> tuple:
    h, w = shape[:2]
    x, y, bw, bh = bbox
    x0 = int(np.floor(x * w + 1e-9))
    y0 = int(np.floor(y * h + 1e-9))
    x1 = max(int(np.ceil((x + bw) * w - 1e-9)), x0 + 1)
    y1 = max(int(np.ceil((y + bh) * h - 1e-9)), y0 + 1)
    return x0, y0, min(x1, w), min(y1, h)


def crop(frame: np.ndarray, bbox: tuple) -> np.ndarray:
    x0, y0, x1, y1 = _pixel_box(bbox, frame.shape)
    return frame[y0:y1, x0:x1]


def hsv_histogram(frame: np.ndarray, bbox: tuple, bins: int = 8) -> imaging.Histogram:
    return imaging.color_histogram(imaging.rgb_to_hsv(frame), _pixel_box(bbox, frame.shape), bins)


def union_bbox(boxes: Sequence[tuple]) -> tuple:
    x0 = min(b[0] for b in boxes)
    y0 = min(b[1] for b in boxes)
    x1 = max(b[0] + b[2] for b in boxes)
    y1 = max(b[1] + b[3] for b in boxes)
    return (x0, y0, x1 - x0, y1 - y0)


def lhc_merge(frame: np.ndarray, dets: Sequence[Detection], cfg: Optional[KfidConfig] = None) -> Optional[HolisticCrop]:
    """Merge left-to-right neighbouring digits into one jersey number.

    Two neighbours join when their HSV histograms correlate above
    ``cfg.lhc_threshold`` and the horizontal gap between their boxes is below
    ``cfg.lhc_max_gap``.  Groups hold at most ``cfg.max_digits`` digits; the
    group with the highest summed confidence wins (ties go to the leftmost).
    """
    cfg = cfg or KfidConfig()
    if not dets:
        return None
    ordered = sorted(dets, key=lambda d: d.center[0])
    hists = [hsv_histogram(frame, d.bbox, cfg.hist_bins) for d in ordered]
    groups = [[0]]
    for i in range(1, len(ordered)):
        group = groups[-1]
        prev = ordered[group[-1]]
        gap = ordered[i].bbox[0] - (prev.bbox[0] + prev.bbox[2])
        joinable = (len(group) < cfg.max_digits and gap < cfg.lhc_max_gap
                    and imaging.histogram_correlation(hists[group[-1]], hists[i]) > cfg.lhc_threshold)
        if joinable:
            group.append(i)
        else:
            groups.append([i])
    best = max(groups, key=lambda g: (sum(ordered[i].confidence for i in g), -g[0]))
    chosen = [ordered[i] for i in best]
    return HolisticCrop(union_bbox([d.bbox for d in chosen]), "".join(str(d.digit) for d in chosen), chosen)


def cosine_distances(features: np.ndarray) -> np.ndarray:
    """Pairwise cosine distance; zero vectors are at distance 0 from each other and 1 from anything else."""
    f = np.asarray(features, dtype=float)
    norms = np.linalg.norm(f, axis=1)
    zero = norms == 0
    unit = f / np.where(zero, 1.0, norms)[:, None]
    d = 1.0 - unit @ unit.T
    d[zero[:, None] ^ zero[None, :]] = 1.0
    d[zero[:, None] & zero[None, :]] = 0.0
    np.fill_diagonal(d, 0.0)
    return np.clip((d + d.T) / 2.0, 0.0, 2.0)


def ghc_cluster(crops: Sequence[np.ndarray], embedder: Callable, threshold: float,
                frame_indices: Optional[Sequence[int]] = None) -> tuple[np.ndarray, int]:
    """Average-linkage clustering of crop embeddings under cosine distance.

    Returns per-crop cluster ids (numbered by first appearance) and the id of
    the chosen cluster: the largest, ties broken by the smallest frame index.
    """
    n = len(crops)
    if n == 0:
        raise ParameterError("need at least one crop")
    if frame_indices is None:
        frame_indices = list(range(n))
    if n == 1:
        return np.zeros(1, dtype=int), 0
    feats = np.asarray(embedder(crops), dtype=float)
    dist = cosine_distances(feats)
    tree = linkage(squareform(dist, checks=False), method="average")
    raw = fcluster(tree, t=threshold, criterion="distance")
    relabel = {}
    labels = np.array([relabel.setdefault(r, len(relabel)) for r in raw], dtype=int)
    sizes = np.bincount(labels)
    first = {c: min(fi for fi, l in zip(frame_indices, labels) if l == c) for c in range(len(sizes))}
    chosen = min(range(len(sizes)), key=lambda c: (-sizes[c], first[c]))
    return labels, int(chosen)


def resize_crops(crops: Sequence[np.ndarray], size: int) -> np.ndarray:
    return np.stack([imaging.resize(np.asarray(c, dtype=float), size) for c in crops])


class EncoderEmbedder:
    """Mean-pooled encoder tokens of crops resized to the encoder's input size."""

    def __init__(self, encoder):
        self.encoder = encoder

    def __call__(self, crops: Sequence[np.ndarray]) -> np.ndarray:
        from dmae.model.mae import embed_crops

        return embed_crops(self.encoder, resize_crops(crops, self.encoder.cfg.image_size))


class HsvEmbedder:
    """Colour-layout embedding: concatenated HSV histogram frequencies."""

    def __init__(self, bins: int = 8):
        self.bins = bins

    def __call__(self, crops: Sequence[np.ndarray]) -> np.ndarray:
        return np.stack([imaging.color_histogram(imaging.rgb_to_hsv(c), None, self.bins).frequencies.ravel()
                         for c in crops])


def kfid_run(frames: Sequence[np.ndarray], detector, cfg: Optional[KfidConfig] = None,
             embedder: Optional[Callable] = None) -> KeyframeSet:
    """Split a tracklet into keyframes and noisy frames.

    Frames without a merged number crop are noisy; the rest are clustered and
    only the chosen cluster is kept.  Keyframes and noisy frames always
    partition ``range(len(frames))``.
    """
    cfg = cfg or KfidConfig()
    if embedder is None:
        embedder = HsvEmbedder(cfg.hist_bins) if cfg.ghc_mode == "hsv" else _default_embedder()
    texts = {}
    crop_frames = []
    crops = []
    for i, frame in enumerate(frames):
        dets = roi_filter(detector.detect(frame), cfg.roi)
        merged = lhc_merge(frame, dets, cfg)
        if merged is None:
            continue
        texts[i] = merged.text
        crop_frames.append(i)
        crops.append(crop(frame, merged.bbox))
    n = len(frames)
    if not crops:
        return KeyframeSet([], list(range(n)), texts, {}, None, "empty")
    labels, chosen = ghc_cluster(crops, embedder, cfg.ghc_threshold, crop_frames)
    clusters = {fi: int(l) for fi, l in zip(crop_frames, labels)}
    keep = sorted(fi for fi, l in zip(crop_frames, labels) if l == chosen)
    keep_set = set(keep)
    noisy = [i for i in range(n) if i not in keep_set]
    return KeyframeSet(keep, noisy, texts, clusters, chosen, "ok")


_DEFAULT_ENCODER = None


def _default_embedder() -> EncoderEmbedder:
    """Seed-fixed, untrained encoder; pass an embedder built on a pre-trained
    encoder to use learned features."""
    global _DEFAULT_ENCODER
    if _DEFAULT_ENCODER is None:
        from dmae.model.mae import Encoder, EncoderConfig

        _DEFAULT_ENCODER = Encoder(EncoderConfig(), np.random.default_rng(0))
    return EncoderEmbedder(_DEFAULT_ENCODER)


def consecutive_runs(indices: Sequence[int]) -> list:
    runs = []
    for idx in sorted(indices):
        if runs and idx - runs[-1][-1] == 1:
            runs[-1].append(idx)
        else:
            runs.append([idx])
    return runs


def fuse_keyframes(frames: Sequence[np.ndarray], indices: Sequence[int], n: int, rng: np.random.Generator,
                   mode: str = "mean") -> Optional[np.ndarray]:
    """Merge ``n`` keyframes with consecutive tracklet indices into one image.

    Returns ``None`` (and logs) when no run of ``n`` consecutive keyframes
    exists, so callers can skip the augmentation.
    """
    if n < 1:
        raise ParameterError("n must be >= 1")
    runs = [r for r in consecutive_runs(indices) if len(r) >= n]
    if not runs:
        logger.debug("fusion skipped: no run of %d consecutive keyframes", n)
        return None
    run = runs[int(rng.integers(len(runs)))]
    start = int(rng.integers(len(run) - n + 1))
    stack = np.stack([np.asarray(frames[i], dtype=float) for i in run[start:start + n]])
    if mode == "mean":
        if np.all(stack == stack[0]):
            return stack[0].copy()
        # the exact mean lies in the envelope; clip away rounding overshoot
        return np.clip(stack.mean(axis=0), stack.min(axis=0), stack.max(axis=0))
    if mode == "max":
        return stack.max(axis=0)
    if mode == "median":
        return np.median(stack, axis=0)
    raise ParameterError(f"unknown fusion mode {mode!r}")
