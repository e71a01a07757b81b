"""Transformer building blocks on top of :mod:`dmae.tensor`."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from dmae.tensor import Module, Tensor, ops, parameter


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        limit = math.sqrt(6.0 / (in_dim + out_dim))
        self.weight = parameter(rng.uniform(-limit, limit, size=(in_dim, out_dim)))
        self.bias = parameter(np.zeros(out_dim)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = parameter(np.ones(dim))
        self.bias = parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gain, self.bias, self.eps)


class Attention(Module):
    """Multi-head self-attention over ``(B, n, D)``.

    When ``keep_weights`` is set the last attention probabilities are stored in
    ``last_weights`` as ``(B, heads, n, n)``.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.keep_weights = False
        self.last_weights: Optional[np.ndarray] = None

    def _split(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        return ops.transpose(x.reshape(b, n, self.heads, d // self.heads), (0, 2, 1, 3))

    def __call__(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        scores = ops.matmul(q, ops.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(d // self.heads))
        attn = ops.softmax_lastdim(scores)
        if self.keep_weights:
            self.last_weights = attn.data.copy()
        out = ops.matmul(attn, v)
        out = ops.transpose(out, (0, 2, 1, 3)).reshape(b, n, d)
        return self.proj(out)


class MLP(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))


class Block(Module):
    """Pre-norm transformer block."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float, rng: np.random.Generator):
        self.norm1 = LayerNorm(dim)
        self.attn = Attention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = MLP(dim, int(dim * mlp_ratio), rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


def sincos_1d(dim: int, positions: np.ndarray) -> np.ndarray:
    if dim % 2:
        raise ValueError("sin-cos embedding needs an even dimension")
    omega = 1.0 / 10000 ** (np.arange(dim // 2) / (dim / 2.0))
    angles = np.asarray(positions, dtype=float).reshape(-1)[:, None] * omega[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def sincos_2d(dim: int, rows: int, cols: int) -> np.ndarray:
    """Fixed 2-D positional table of shape ``(rows * cols, dim)``, row-major."""
    if dim % 4:
        raise ValueError("2-D sin-cos embedding needs dim divisible by 4")
    gy, gx = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    return np.concatenate([sincos_1d(dim // 2, gy), sincos_1d(dim // 2, gx)], axis=1)
