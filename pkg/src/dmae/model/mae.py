"""Toy-scale masked autoencoder: patch embedding, encoder and pixel decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dmae.errors import ShapeError
from dmae.model.layers import Block, LayerNorm, Linear, sincos_2d
from dmae.tensor import Module, Tensor, ops, parameter


@dataclass
class EncoderConfig:
    image_size: int = 32
    patch_size: int = 8
    channels: int = 3
    embed_dim: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: float = 2.0
    decoder_dim: int = 64
    decoder_depth: int = 2
    decoder_heads: int = 4
    mask_token: bool = True

    def __post_init__(self):
        if self.embed_dim % self.heads or self.decoder_dim % self.decoder_heads:
            raise ValueError("embedding dims must be divisible by the head counts")
        if self.image_size % self.patch_size:
            raise ValueError("image size must be divisible by the patch size")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels


def _positions(positions, batch: int, count: int) -> np.ndarray:
    if positions is None:
        return np.broadcast_to(np.arange(count), (batch, count))
    positions = np.asarray(positions, dtype=int)
    return positions if positions.ndim == 2 else np.broadcast_to(positions, (batch, positions.shape[-1]))


class Encoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.patch_embed = Linear(cfg.patch_dim, cfg.embed_dim, rng)
        self.pos_table = sincos_2d(cfg.embed_dim, cfg.grid, cfg.grid)
        self.blocks = [Block(cfg.embed_dim, cfg.heads, cfg.mlp_ratio, rng) for _ in range(cfg.depth)]

    def embed(self, patches, positions=None) -> Tensor:
        """Project ``(B, n, P*P*C)`` patches and add the fixed position rows.

        ``positions`` gives each patch's index in the full grid (``(B, n)`` or
        ``(n,)``); the default is ``0..n-1``.
        """
        x = patches if isinstance(patches, Tensor) else Tensor(np.asarray(patches, dtype=self.dtype))
        if x.ndim == 2:
            x = x.reshape(1, *x.shape)
        if x.shape[-1] != self.cfg.patch_dim:
            raise ShapeError(f"patch has {x.shape[-1]} values, expected {self.cfg.patch_dim}")
        pos = _positions(positions, x.shape[0], x.shape[1])
        return self.patch_embed(x) + self.pos_table[pos].astype(self.dtype)

    def __call__(self, tokens: Tensor) -> Tensor:
        if tokens.shape[-2] < 1:
            raise ShapeError("encoder needs at least one token")
        for block in self.blocks:
            tokens = block(tokens)
        return tokens

    def encode(self, patches, positions=None) -> Tensor:
        return self(self.embed(patches, positions))

    def encode_images(self, images: np.ndarray) -> Tensor:
        """Unmasked ``(B, H, W, C)`` images -> ``(B, K, D)`` spatial features."""
        from dmae.imaging import patchify_batch

        return self.encode(patchify_batch(np.asarray(images), self.cfg.patch_size))

    @property
    def dtype(self):
        return self.patch_embed.weight.dtype

    def set_keep_attention(self, flag: bool) -> None:
        for block in self.blocks:
            block.attn.keep_weights = flag


class Decoder(Module):
    """Rebuilds all ``K`` patches from encoder features plus the corrupted patches."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.feature_norm = LayerNorm(cfg.embed_dim)
        self.feature_proj = Linear(cfg.embed_dim, cfg.decoder_dim, rng)
        self.mask_embed = Linear(cfg.patch_dim, cfg.decoder_dim, rng)
        self.mask_token = parameter(rng.normal(0.0, 0.02, size=cfg.decoder_dim)) if cfg.mask_token else None
        self.pos_table = sincos_2d(cfg.decoder_dim, cfg.grid, cfg.grid)
        self.blocks = [Block(cfg.decoder_dim, cfg.decoder_heads, cfg.mlp_ratio, rng)
                       for _ in range(cfg.decoder_depth)]
        self.norm = LayerNorm(cfg.decoder_dim)
        self.head = Linear(cfg.decoder_dim, cfg.patch_dim, rng)

    def __call__(self, features: Tensor, visible_pos, masked_patches, masked_pos) -> Tensor:
        """Return ``(B, K, P*P*C)`` patch predictions in grid order."""
        cfg = self.cfg
        b = features.shape[0]
        dtype = self.head.weight.dtype
        visible_pos = _positions(visible_pos, b, features.shape[1])
        parts = []
        pos_parts = []
        n_masked = 0 if masked_patches is None else np.shape(masked_patches)[1]
        if n_masked:
            mp = masked_patches if isinstance(masked_patches, Tensor) else Tensor(np.asarray(masked_patches, dtype=dtype))
            tokens = self.mask_embed(mp)
            if self.mask_token is not None:
                tokens = tokens + self.mask_token
            parts.append(tokens)
            pos_parts.append(_positions(masked_pos, b, n_masked))
        parts.append(self.feature_proj(self.feature_norm(features)))
        pos_parts.append(visible_pos)
        all_pos = np.concatenate(pos_parts, axis=1)
        expected = np.arange(cfg.num_patches)
        if all_pos.shape[1] != cfg.num_patches or not all(np.array_equal(np.sort(r), expected) for r in all_pos):
            raise ShapeError("visible and masked tokens must cover every patch position exactly once")
        x = ops.concat(parts, axis=1) if len(parts) > 1 else parts[0]
        order = np.argsort(all_pos, axis=1, kind="stable")
        if not np.array_equal(order, np.broadcast_to(expected, order.shape)):
            x = x[np.arange(b)[:, None], order]
        x = x + self.pos_table.astype(dtype)
        for block in self.blocks:
            x = block(x)
        return self.head(self.norm(x))


def patches_to_image(patches: Tensor, cfg: EncoderConfig) -> Tensor:
    """Differentiable unpatchify: ``(B, K, P*P*C)`` -> ``(B, H, W, C)``."""
    b = patches.shape[0]
    g, p, c = cfg.grid, cfg.patch_size, cfg.channels
    x = patches.reshape(b, g, g, p, p, c)
    x = ops.transpose(x, (0, 1, 3, 2, 4, 5))
    return x.reshape(b, g * p, g * p, c)


class MaskedAutoencoder(Module):
    def __init__(self, cfg: EncoderConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.encoder = Encoder(cfg, rng)
        self.decoder = Decoder(cfg, rng)

    def reconstruct(self, visible_patches, visible_pos, masked_patches, masked_pos) -> Tensor:
        features = self.encoder.encode(visible_patches, visible_pos)
        return patches_to_image(self.decoder(features, visible_pos, masked_patches, masked_pos), self.cfg)


def pool_tokens(features: Tensor) -> Tensor:
    """Mean over the token axis: ``(..., n, D)`` -> ``(..., D)``."""
    return ops.mean(features, axis=-2)


def embed_crops(encoder: Encoder, crops: np.ndarray, batch: int = 64) -> np.ndarray:
    """Mean-pooled encoder features for ``(N, H, W, C)`` crops (no grad)."""
    from dmae.tensor import no_grad

    out = []
    with no_grad():
        for start in range(0, len(crops), batch):
            out.append(pool_tokens(encoder.encode_images(crops[start:start + batch])).data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, encoder.cfg.embed_dim))


def reconstruct_image(model: MaskedAutoencoder, img: np.ndarray, plan) -> np.ndarray:
    """Run one masked image through the autoencoder (no grad)."""
    from dmae.masking import apply_masking
    from dmae.tensor import no_grad
    from dmae.imaging import patchify

    masked_img, visible, masked_pos = apply_masking(img, plan)
    masked_patches = patchify(masked_img, plan.patch_size).flat[list(masked_pos)]
    with no_grad():
        out = model.reconstruct(visible[None], np.array(plan.unmasked_indices)[None],
                                masked_patches[None] if len(masked_pos) else None,
                                np.array(masked_pos)[None] if len(masked_pos) else None)
    return out.data[0].astype(float)

