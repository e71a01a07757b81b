"""Temporal transformer over per-frame features with two digit heads."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from dmae.errors import ParameterError, ShapeError
from dmae.model.layers import Block, LayerNorm, Linear, sincos_1d
from dmae.model.mae import Encoder, EncoderConfig, pool_tokens
from dmae.tensor import ContractError, Module, Tensor, ops

NUM_CLASSES = 11
NULL = 10


@dataclass
class TemporalConfig:
    dim: int = 64
    heads: int = 8
    layers: int = 4
    mlp_ratio: float = 2.0
    positional: bool = True
    pooling: str = "mean"

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError("temporal dim must be divisible by heads")
        if self.pooling != "mean":
            raise ValueError("only mean pooling is supported")


@dataclass(frozen=True)
class JerseyLabel:
    """Two digit classes; ``None`` is the null class."""

    digit1: Optional[int]
    digit2: Optional[int] = None

    def __post_init__(self):
        for d in (self.digit1, self.digit2):
            if d is not None and not 0 <= d <= 9:
                raise ParameterError(f"digit out of range: {d!r}")
        if self.digit1 is None and self.digit2 is not None:
            raise ParameterError("a null first digit requires a null second digit")

    @classmethod
    def from_number(cls, number: Union[int, str, None]) -> "JerseyLabel":
        if number is None or number == "unknown":
            return cls(None, None)
        text = str(number)
        if not text.isdigit() or not 1 <= len(text) <= 2:
            raise ParameterError(f"jersey numbers have one or two digits, got {number!r}")
        return cls(int(text[0]), int(text[1]) if len(text) == 2 else None)

    @property
    def classes(self) -> tuple[int, int]:
        return (NULL if self.digit1 is None else self.digit1, NULL if self.digit2 is None else self.digit2)

    @property
    def text(self) -> str:
        if self.digit1 is None:
            return "unknown"
        return f"{self.digit1}" if self.digit2 is None else f"{self.digit1}{self.digit2}"


@dataclass
class JerseyPrediction:
    logits1: np.ndarray
    logits2: np.ndarray


def decode_jersey(pred: JerseyPrediction) -> str:
    d1 = int(np.argmax(pred.logits1))
    d2 = int(np.argmax(pred.logits2))
    if d1 == NULL:
        return "unknown"
    return f"{d1}" if d2 == NULL else f"{d1}{d2}"


class TemporalDecoder(Module):
    def __init__(self, in_dim: int, cfg: TemporalConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.in_norm = LayerNorm(in_dim)
        self.in_proj = Linear(in_dim, cfg.dim, rng)
        self.blocks = [Block(cfg.dim, cfg.heads, cfg.mlp_ratio, rng) for _ in range(cfg.layers)]
        self.norm = LayerNorm(cfg.dim)
        self.head1 = Linear(cfg.dim, NUM_CLASSES, rng)
        self.head2 = Linear(cfg.dim, NUM_CLASSES, rng)

    def __call__(self, frames: Tensor) -> tuple[Tensor, Tensor]:
        """``(B, T, in_dim)`` pooled frame features -> two ``(B, 11)`` logit tensors."""
        if frames.ndim == 2:
            frames = frames.reshape(1, *frames.shape)
        if frames.shape[1] < 1:
            raise ContractError("temporal decoder needs at least one frame")
        x = self.in_proj(self.in_norm(frames))
        if self.cfg.positional:
            x = x + sincos_1d(self.cfg.dim, np.arange(frames.shape[1])).astype(x.dtype)
        for block in self.blocks:
            x = block(x)
        pooled = ops.mean(self.norm(x), axis=1)
        return self.head1(pooled), self.head2(pooled)


class JerseyClassifier(Module):
    """Encoder (shared with pre-training) followed by the temporal decoder."""

    def __init__(self, enc_cfg: EncoderConfig, temp_cfg: TemporalConfig, seed: int = 0,
                 encoder: Optional[Encoder] = None):
        rng = np.random.default_rng(seed)
        self.encoder = encoder if encoder is not None else Encoder(enc_cfg, rng)
        self.temporal = TemporalDecoder(enc_cfg.embed_dim, temp_cfg, np.random.default_rng(seed + 1))

    def frame_features(self, frames: np.ndarray) -> Tensor:
        """``(B, T, H, W, C)`` frames -> ``(B, T, D)`` token-pooled features."""
        frames = np.asarray(frames)
        if frames.ndim != 5:
            raise ShapeError(f"expected (B, T, H, W, C) frames, got {frames.shape}")
        b, t = frames.shape[:2]
        feats = pool_tokens(self.encoder.encode_images(frames.reshape(b * t, *frames.shape[2:])))
        return feats.reshape(b, t, feats.shape[-1])

    def __call__(self, frames: np.ndarray) -> tuple[Tensor, Tensor]:
        return self.temporal(self.frame_features(frames))


def temporal_forward(frame_features, model: TemporalDecoder) -> JerseyPrediction:
    """Single-sequence prediction from ``(T, D)`` pooled frame features."""
    from dmae.tensor import no_grad

    feats = frame_features if isinstance(frame_features, Tensor) else Tensor(
        np.asarray(frame_features, dtype=model.in_proj.weight.dtype))
    if feats.shape[0] < 1:
        raise ContractError("empty frame sequence")
    with no_grad():
        l1, l2 = model(feats.reshape(1, *feats.shape))
    return JerseyPrediction(l1.data[0].copy(), l2.data[0].copy())


def predict_single_frame(feature, copies: int, model: TemporalDecoder) -> JerseyPrediction:
    """Feed one frame feature ``copies`` times as a sequence."""
    if copies < 1:
        raise ParameterError("copies must be >= 1")
    feature = np.asarray(feature.data if isinstance(feature, Tensor) else feature)
    return temporal_forward(np.repeat(feature.reshape(1, -1), copies, axis=0), model)


def predict_tracklet(classifier: JerseyClassifier, frames: np.ndarray) -> JerseyPrediction:
    """Prediction for one tracklet given ``(T, H, W, C)`` frames."""
    from dmae.tensor import no_grad

    with no_grad():
        feats = classifier.frame_features(np.asarray(frames)[None])
    return temporal_forward(feats.reshape(feats.shape[1], feats.shape[2]), classifier.temporal)
