"""Random patch masking with zero-out, Gaussian-blur or motion-blur policies."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from dmae import imaging
from dmae.errors import ParameterError, ShapeError

POLICIES = ("zero_out", "gaussian_blur", "motion_blur")


@dataclass
class BlurSampling:
    """Ranges the per-step blur parameters are drawn from."""

    omega: tuple = (0.0, 90.0)
    scale: tuple = (0.5, 2.0)
    k_size: int = 5
    sigma: tuple = (0.5, 1.5)
    per_patch: bool = False


@dataclass
class MaskPlan:
    num_patches: int
    patch_size: int
    masked_indices: tuple
    policy: str = "motion_blur"
    ratio: float = 0.75
    params: dict = field(default_factory=dict)
    patch_params: Optional[list] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ParameterError(f"unknown masking policy {self.policy!r}")
        self.masked_indices = tuple(sorted(int(i) for i in self.masked_indices))
        if len(set(self.masked_indices)) != len(self.masked_indices):
            raise ParameterError("masked indices must be unique")
        if any(i < 0 or i >= self.num_patches for i in self.masked_indices):
            raise ParameterError("masked index out of range")

    @property
    def unmasked_indices(self) -> tuple:
        masked = set(self.masked_indices)
        return tuple(i for i in range(self.num_patches) if i not in masked)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["masked_indices"] = list(self.masked_indices)
        d["unmasked_indices"] = list(self.unmasked_indices)
        return d


def masked_count(num_patches: int, ratio: float) -> int:
    return int(math.floor(ratio * num_patches + 0.5))


def _rng(rng) -> tuple[np.random.Generator, Optional[int]]:
    if isinstance(rng, np.random.Generator):
        return rng, None
    return np.random.default_rng(rng), (None if rng is None else int(rng))


def sample_blur_params(policy: str, sampling: BlurSampling, rng: np.random.Generator) -> dict:
    if policy == "motion_blur":
        return {"omega": float(rng.uniform(*sampling.omega)), "scale": float(rng.uniform(*sampling.scale)),
                "k_size": int(sampling.k_size)}
    if policy == "gaussian_blur":
        return {"sigma": float(rng.uniform(*sampling.sigma)), "k_size": int(sampling.k_size)}
    return {}


def sample_mask(num_patches: int, ratio: float, rng: Union[np.random.Generator, int, None] = None,
                policy: str = "motion_blur", patch_size: int = 8,
                sampling: Optional[BlurSampling] = None, params: Optional[dict] = None) -> MaskPlan:
    """Uniformly choose ``round(ratio * K)`` distinct patches to mask.

    Blur parameters are drawn from ``sampling`` unless fixed ``params`` are
    given.  With ``sampling.per_patch`` every masked patch gets its own draw.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ParameterError(f"mask ratio must lie in [0, 1], got {ratio!r}")
    gen, seed = _rng(rng)
    n = masked_count(num_patches, ratio)
    idx = gen.choice(num_patches, size=n, replace=False) if n else np.array([], dtype=int)
    sampling = sampling or BlurSampling()
    patch_params = None
    if params is None:
        params = sample_blur_params(policy, sampling, gen)
        if sampling.per_patch and policy != "zero_out":
            patch_params = [sample_blur_params(policy, sampling, gen) for _ in range(n)]
    return MaskPlan(num_patches, patch_size, tuple(idx), policy, float(ratio), dict(params), patch_params, seed)


def kernel_for(policy: str, params: dict) -> Optional[imaging.Kernel]:
    if policy == "motion_blur":
        return imaging.motion_blur_kernel(params["omega"], params["scale"], params["k_size"],
                                          params.get("interpolation", "bilinear"))
    if policy == "gaussian_blur":
        return imaging.gaussian_kernel(params["sigma"], params["k_size"])
    return None


def apply_masking(img: np.ndarray, plan: MaskPlan) -> tuple[np.ndarray, np.ndarray, tuple]:
    """Corrupt the planned patches of ``img``.

    Returns ``(masked_image, unmasked_patches, masked_positions)`` where
    ``unmasked_patches`` is ``(K - |S|, P*P*C)`` in ascending patch order.
    Each masked patch is blurred on its own, with replicate padding at the
    patch border.
    """
    grid = imaging.patchify(img, plan.patch_size)
    if grid.count != plan.num_patches:
        raise ShapeError(f"plan covers {plan.num_patches} patches but the image has {grid.count}")
    blocks = grid.blocks.astype(float, copy=True)
    masked = np.array(plan.masked_indices, dtype=int)
    if masked.size:
        if plan.policy == "zero_out":
            blocks[masked] = 0.0
        elif plan.patch_params is not None:
            for pos, prm in zip(masked, plan.patch_params):
                blocks[pos] = imaging.convolve(blocks[pos], kernel_for(plan.policy, prm))
        else:
            blocks[masked] = imaging.convolve(blocks[masked], kernel_for(plan.policy, plan.params))
    out = imaging.unpatchify(imaging.PatchGrid(grid.patch_size, grid.rows, grid.cols, blocks))
    unmasked = np.array(plan.unmasked_indices, dtype=int)
    return out, grid.flat[unmasked].astype(float), plan.masked_indices
