"""Reconstruction, feature-matching and digit-classification losses."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from dmae.errors import ParameterError, ShapeError
from dmae.model.temporal import JerseyLabel, JerseyPrediction
from dmae.tensor import Module, Tensor, no_grad, ops, parameter

METRICS = ("l1", "l2", "cosine")


@dataclass
class LossConfig:
    siamese_metric: str = "l1"
    mse_scope: str = "all"
    extractor_seed: int = 1234
    extractor_path: Optional[str] = None
    init_log_weight: float = 0.0

    def __post_init__(self):
        if self.siamese_metric not in METRICS:
            raise ValueError(f"unknown Siamese metric {self.siamese_metric!r}")
        if self.mse_scope not in ("all", "masked"):
            raise ValueError("mse_scope must be 'all' or 'masked'")


class ConvFeatureExtractor:
    """Frozen three-layer strided conv net with tanh activations.

    Weights are random but fixed by ``seed``; they never receive gradients, so
    the extractor holds plain tensors rather than parameters.
    """

    def __init__(self, seed: int = 1234, channels: Sequence[int] = (3, 8, 16, 16), stride: int = 2):
        rng = np.random.default_rng(seed)
        self.stride = stride
        self.weights = []
        self.biases = []
        for cin, cout in zip(channels[:-1], channels[1:]):
            std = 1.5 / math.sqrt(9 * cin)
            self.weights.append(Tensor(rng.normal(0.0, std, size=(3, 3, cin, cout)).astype(np.float32)))
            self.biases.append(Tensor(np.zeros(cout, dtype=np.float32)))

    @classmethod
    def from_npz(cls, path) -> "ConvFeatureExtractor":
        """Load weights saved as ``w0, b0, w1, b1, ...`` (HWIO kernels)."""
        data = np.load(Path(path))
        self = cls.__new__(cls)
        self.stride = int(data["stride"]) if "stride" in data else 2
        n = sum(1 for key in data.files if key.startswith("w"))
        self.weights = [Tensor(data[f"w{i}"].astype(np.float32)) for i in range(n)]
        self.biases = [Tensor(data[f"b{i}"].astype(np.float32)) for i in range(n)]
        return self

    def astype(self, dtype) -> "ConvFeatureExtractor":
        for t in self.weights + self.biases:
            t.data = t.data.astype(dtype)
        return self

    def __call__(self, images: Tensor) -> Tensor:
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=self.weights[0].dtype))
        if x.ndim == 3:
            x = x.reshape(1, *x.shape)
        x = x - 0.5
        for w, b in zip(self.weights, self.biases):
            x = ops.tanh(ops.conv2d(x, w, b, stride=self.stride, padding=1))
        return x.reshape(x.shape[0], -1)


def identity_extractor(images: Tensor) -> Tensor:
    return images.reshape(images.shape[0], -1) if images.ndim == 4 else images.reshape(1, -1)


def _as_batch(x) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    return x.reshape(1, *x.shape) if x.ndim == 3 else x


def feature_distance(f_pred: Tensor, f_true: Tensor, metric: str) -> Tensor:
    if metric == "l1":
        return ops.mean(ops.abs(f_pred - f_true))
    if metric == "l2":
        return ops.mean((f_pred - f_true) ** 2)
    if metric == "cosine":
        # 1 - cos(a, b) written as |a/|a| - b/|b||^2 / 2, which is exactly 0 for a == b
        n_pred = ops.sqrt(ops.sum(f_pred * f_pred, axis=-1, keepdims=True))
        n_true = np.sqrt(np.sum(f_true.data * f_true.data, axis=-1, keepdims=True))
        zero = (n_pred.data == 0) | (n_true == 0)
        safe_pred = n_pred + zero.astype(n_pred.dtype)
        safe_true = np.where(zero, 1.0, n_true).astype(n_pred.dtype)
        diff = f_pred / safe_pred - f_true.data / safe_true
        dist = 0.5 * ops.sum(diff * diff, axis=-1, keepdims=True)
        # zero-norm features count as maximally dissimilar (loss 1)
        keep = (~zero).astype(n_pred.dtype)
        return ops.mean(dist * keep + (1.0 - keep))
    raise ParameterError(f"unknown metric {metric!r}")


def siamese_loss(pred, target, metric: str = "l1", extractor=None) -> Tensor:
    """Distance between extractor features of the reconstruction and the target."""
    pred, target = _as_batch(pred), _as_batch(target)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {target.shape}")
    h = extractor if extractor is not None else identity_extractor
    with no_grad():
        f_true = h(target.detach())
    return feature_distance(h(pred), f_true, metric)


def mse(pred, target, weight_map: Optional[np.ndarray] = None) -> Tensor:
    pred, target = _as_batch(pred), _as_batch(target)
    diff = pred - target.detach()
    if weight_map is None:
        return ops.mean(diff * diff)
    w = np.broadcast_to(np.asarray(weight_map, dtype=pred.dtype), pred.shape)
    return ops.sum(diff * diff * w) * (1.0 / max(float(w.sum()), 1.0))


class LossWeights(Module):
    """Learnable log-weights; the loss multiplies each term by ``exp(theta)``."""

    def __init__(self, init: float = 0.0):
        self.theta_mse = parameter(np.full(1, init))
        self.theta_siamese = parameter(np.full(1, init))

    def sigmas(self) -> tuple[float, float]:
        return float(np.exp(self.theta_mse.data[0])), float(np.exp(self.theta_siamese.data[0]))


def mae_loss(pred, target, weights: LossWeights, cfg: LossConfig, extractor=None,
             mse_weight_map: Optional[np.ndarray] = None) -> tuple[Tensor, dict]:
    """``exp(t1) * MSE + exp(t2) * Siamese``; returns the loss and its parts."""
    pred, target = _as_batch(pred), _as_batch(target)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {target.shape}")
    rec = mse(pred, target, mse_weight_map if cfg.mse_scope == "masked" else None)
    sia = siamese_loss(pred, target, cfg.siamese_metric, extractor)
    s1 = ops.exp(weights.theta_mse).reshape(())
    s2 = ops.exp(weights.theta_siamese).reshape(())
    total = s1 * rec + s2 * sia
    return total, {"mse": float(rec.data), "siamese": float(sia.data)}


def class_loss(logits1: Tensor, logits2: Tensor, targets: np.ndarray) -> Tensor:
    """Sum of the two 11-way cross-entropies, averaged over the batch.

    ``targets`` is ``(B, 2)`` integer classes with 10 as the null class.
    """
    targets = np.asarray(targets, dtype=int).reshape(-1, 2)
    ce = ops.cross_entropy(logits1, targets[:, 0]) + ops.cross_entropy(logits2, targets[:, 1])
    return ops.mean(ce)


def prediction_loss(pred: JerseyPrediction, label: JerseyLabel) -> float:
    c1, c2 = label.classes
    with no_grad():
        loss = class_loss(Tensor(np.asarray(pred.logits1, dtype=np.float64)[None]),
                          Tensor(np.asarray(pred.logits2, dtype=np.float64)[None]), np.array([[c1, c2]]))
    return float(loss.data)
