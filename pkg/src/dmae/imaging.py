"""Raster primitives on ``(H, W, C)`` float arrays with values in ``[0, 1]``.

Oriented motion-blur kernels are built by warping a one-pixel horizontal line
with the affine map from :func:`rotation_matrix` and normalising the result.
Kernel coordinates are continuous: pixel ``(i, j)`` covers ``[j, j+1) x [i, i+1)``
so its centre is ``(j + 0.5, i + 0.5)`` and the centre of an odd ``k x k``
kernel sits exactly at ``(k/2, k/2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from dmae.errors import ParameterError, ShapeError

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

_SNAP = 1e-9


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineMatrix2x3:
    matrix: np.ndarray
    omega: float
    scale: float
    size: int

    def apply(self, x: float, y: float) -> tuple[float, float]:
        m = self.matrix
        return (m[0, 0] * x + m[0, 1] * y + m[0, 2], m[1, 0] * x + m[1, 1] * y + m[1, 2])


@dataclass(frozen=True)
class Kernel:
    weights: np.ndarray
    params: dict = field(default_factory=dict, compare=False)

    @property
    def size(self) -> int:
        return self.weights.shape[0]


def _check_size(k_size) -> int:
    if int(k_size) != k_size or k_size < 1 or k_size % 2 == 0:
        raise ParameterError(f"kernel size must be an odd integer >= 1, got {k_size!r}")
    return int(k_size)


def _check_blur_params(omega: float, scale: float) -> None:
    if not (math.isfinite(omega) and 0.0 <= omega <= 90.0):
        raise ParameterError(f"omega must lie in [0, 90] degrees, got {omega!r}")
    if not (math.isfinite(scale) and 0.0 < scale <= 2.0):
        raise ParameterError(f"scale factor must lie in (0, 2], got {scale!r}")


def rotation_matrix(omega: float, scale: float, k_size: int) -> AffineMatrix2x3:
    """Scaled rotation by ``omega`` degrees about the kernel centre ``(k/2, k/2)``."""
    k_size = _check_size(k_size)
    _check_blur_params(omega, scale)
    theta = math.radians(omega)
    a = scale * math.cos(theta)
    b = scale * math.sin(theta)
    c = k_size / 2.0
    # translation chosen so that the centre is a fixed point
    m = np.array([[a, -b, c * (1.0 - a) + c * b],
                  [b, a, c * (1.0 - a) - c * b]])
    return AffineMatrix2x3(m, float(omega), float(scale), k_size)


def _snap(v: np.ndarray) -> np.ndarray:
    r = np.round(v)
    return np.where(np.abs(v - r) < _SNAP, r, v)


def _sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray, interpolation: str) -> np.ndarray:
    """Sample ``img`` at continuous index coordinates; zero outside."""
    h, w = img.shape
    if interpolation == "nearest":
        xi = np.floor(xs + 0.5).astype(int)
        yi = np.floor(ys + 0.5).astype(int)
        ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        out = np.zeros(xs.shape)
        out[ok] = img[yi[ok], xi[ok]]
        return out
    if interpolation != "bilinear":
        raise ParameterError(f"unknown interpolation {interpolation!r}")
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    fx = xs - x0
    fy = ys - y0
    out = np.zeros(xs.shape)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi = x0 + dx
            yi = y0 + dy
            ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = np.zeros(xs.shape)
            vals[ok] = img[yi[ok], xi[ok]]
            out += wx * wy * vals
    return out


def motion_blur_kernel(omega: float, scale: float, k_size: int, interpolation: str = "bilinear") -> Kernel:
    """Oriented motion-blur kernel normalised to unit sum.

    A horizontal line through the centre row is warped by
    ``rotation_matrix(omega, scale, k_size)`` (inverse mapping) and sampled
    with bilinear or nearest interpolation.
    """
    rot = rotation_matrix(omega, scale, k_size)
    k = rot.size
    base = np.zeros((k, k))
    base[k // 2, :] = 1.0
    a, b = rot.matrix[0, 0], rot.matrix[1, 0]
    t = rot.matrix[:, 2]
    det = a * a + b * b
    ii, jj = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    px = jj + 0.5 - t[0]
    py = ii + 0.5 - t[1]
    # inverse of [[a, -b], [b, a]]
    sx = (a * px + b * py) / det
    sy = (-b * px + a * py) / det
    xs = _snap(sx - 0.5)
    ys = _snap(sy - 0.5)
    warped = _sample(base, xs, ys, interpolation)
    warped[np.abs(warped) < 1e-12] = 0.0
    total = warped.sum()
    if not total > 0:
        raise ParameterError("degenerate warp: kernel has no mass to normalise")
    return Kernel(warped / total, {"type": "motion_blur", "omega": float(omega), "scale": float(scale),
                                   "k_size": k, "interpolation": interpolation})


def gaussian_kernel(sigma: float, k_size: int) -> Kernel:
    """Isotropic Gaussian sampled at integer offsets from the centre, unit sum."""
    k_size = _check_size(k_size)
    if not (math.isfinite(sigma) and sigma > 0):
        raise ParameterError(f"sigma must be positive, got {sigma!r}")
    r = np.arange(k_size) - k_size // 2
    yy, xx = np.meshgrid(r, r, indexing="ij")
    with np.errstate(under="ignore"):
        w = np.exp(-(xx ** 2 + yy ** 2) / (2.0 * sigma * sigma))
    return Kernel(w / w.sum(), {"type": "gaussian", "sigma": float(sigma), "k_size": k_size})


def identity_kernel() -> Kernel:
    return Kernel(np.ones((1, 1)), {"type": "identity", "k_size": 1})


def format_kernel(kernel: Kernel, precision: int = 6) -> str:
    """Plain-text matrix dump, one row per line."""
    w = kernel.weights if isinstance(kernel, Kernel) else np.asarray(kernel)
    return "\n".join(" ".join(f"{v:.{precision}f}" for v in row) for row in w) + "\n"


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def convolve(img: np.ndarray, kernel) -> np.ndarray:
    """Per-channel 2-D correlation with replicate (clamp-to-edge) padding.

    Accepts ``(H, W)``, ``(H, W, C)`` or a stack ``(N, H, W, C)``; the output
    has the input's shape.  Normalised kernels are applied in residual form,
    ``img + sum(w * (shifted - img))``, so flat regions pass through bit-exactly.
    """
    w = kernel.weights if isinstance(kernel, Kernel) else np.asarray(kernel, dtype=float)
    img = np.asarray(img, dtype=float)
    k = w.shape[0]
    if k == 1:
        return img * w[0, 0]
    r = k // 2
    if img.ndim == 2:
        hax, wax = 0, 1
    elif img.ndim == 3:
        hax, wax = 0, 1
    elif img.ndim == 4:
        hax, wax = 1, 2
    else:
        raise ShapeError(f"cannot convolve array of shape {img.shape}")
    pads = [(0, 0)] * img.ndim
    pads[hax] = (r, r)
    pads[wax] = (r, r)
    padded = np.pad(img, pads, mode="edge")
    h, wd = img.shape[hax], img.shape[wax]
    residual = abs(w.sum() - 1.0) < 1e-9
    out = np.zeros_like(img)
    for i in range(k):
        for j in range(k):
            if w[i, j] == 0.0:
                continue
            sl = [slice(None)] * img.ndim
            sl[hax] = slice(i, i + h)
            sl[wax] = slice(j, j + wd)
            shifted = padded[tuple(sl)]
            out += w[i, j] * (shifted - img if residual else shifted)
    return img + out if residual else out


# ---------------------------------------------------------------------------
# patches
# ---------------------------------------------------------------------------

@dataclass
class PatchGrid:
    """Non-overlapping ``P x P`` tiles in row-major patch order."""

    patch_size: int
    rows: int
    cols: int
    blocks: np.ndarray  # (K, P, P, C)

    @property
    def count(self) -> int:
        return self.rows * self.cols

    @property
    def flat(self) -> np.ndarray:
        return self.blocks.reshape(self.count, -1)


def _as_hwc(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim == 2:
        return img[:, :, None]
    if img.ndim != 3:
        raise ShapeError(f"expected an (H, W, C) image, got shape {img.shape}")
    return img


def patch_count(height: int, width: int, patch_size: int) -> int:
    if height % patch_size or width % patch_size:
        raise ShapeError(f"{height}x{width} is not divisible by patch size {patch_size}")
    return (height * width) // (patch_size * patch_size)


def patchify(img: np.ndarray, patch_size: int) -> PatchGrid:
    img = _as_hwc(img)
    h, w, c = img.shape
    patch_count(h, w, patch_size)
    p = patch_size
    rows, cols = h // p, w // p
    blocks = img.reshape(rows, p, cols, p, c).transpose(0, 2, 1, 3, 4).reshape(rows * cols, p, p, c)
    return PatchGrid(p, rows, cols, blocks.copy())


def unpatchify(grid: PatchGrid) -> np.ndarray:
    p, rows, cols = grid.patch_size, grid.rows, grid.cols
    c = grid.blocks.shape[-1]
    return grid.blocks.reshape(rows, cols, p, p, c).transpose(0, 2, 1, 3, 4).reshape(rows * p, cols * p, c)


def patchify_batch(images: np.ndarray, patch_size: int) -> np.ndarray:
    """``(B, H, W, C)`` -> ``(B, K, P*P*C)``."""
    b, h, w, c = images.shape
    patch_count(h, w, patch_size)
    p = patch_size
    x = images.reshape(b, h // p, p, w // p, p, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, (h // p) * (w // p), p * p * c)


def unpatchify_batch(patches: np.ndarray, patch_size: int, height: int, width: int) -> np.ndarray:
    b, k, d = patches.shape
    p = patch_size
    c = d // (p * p)
    rows, cols = height // p, width // p
    if rows * cols != k:
        raise ShapeError(f"{k} patches cannot tile {height}x{width} with patch size {p}")
    x = patches.reshape(b, rows, cols, p, p, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, height, width, c)


# ---------------------------------------------------------------------------
# colour
# ---------------------------------------------------------------------------

def rgb_to_hsv(img: np.ndarray) -> np.ndarray:
    """RGB -> HSV with every channel (including hue) scaled to ``[0, 1]``."""
    img = np.asarray(img, dtype=float)
    if img.shape[-1] != 3:
        raise ShapeError("rgb_to_hsv needs 3 channels")
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    maxc = img.max(axis=-1)
    minc = img.min(axis=-1)
    delta = maxc - minc
    v = maxc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    safe = np.where(delta > 0, delta, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    h, s, v = img[..., 0], img[..., 1], img[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(int) % 6
    choices_r = [v, q, p, p, t, v]
    choices_g = [t, v, v, q, p, p]
    choices_b = [p, p, t, v, v, q]
    r = np.choose(i, choices_r)
    g = np.choose(i, choices_g)
    b = np.choose(i, choices_b)
    return np.stack([r, g, b], axis=-1)


@dataclass
class Histogram:
    counts: np.ndarray  # (C, B)

    @property
    def bins(self) -> int:
        return self.counts.shape[1]

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.counts.sum()


def color_histogram(img: np.ndarray, region: Optional[Sequence[int]] = None, bins: int = 8) -> Histogram:
    """Per-channel histogram of ``img[y0:y1, x0:x1]``; ``region = (x0, y0, x1, y1)`` in pixels."""
    img = _as_hwc(img)
    if bins < 2:
        raise ParameterError("need at least 2 bins")
    h, w, _ = img.shape
    x0, y0, x1, y1 = region if region is not None else (0, 0, w, h)
    x0, y0 = max(int(x0), 0), max(int(y0), 0)
    x1, y1 = min(int(x1), w), min(int(y1), h)
    if x1 <= x0 or y1 <= y0:
        raise ParameterError(f"empty histogram region {region!r}")
    crop = img[y0:y1, x0:x1].reshape(-1, img.shape[2])
    idx = np.clip((crop * bins).astype(int), 0, bins - 1)
    counts = np.stack([np.bincount(idx[:, c], minlength=bins) for c in range(crop.shape[1])]).astype(float)
    return Histogram(counts)


def histogram_correlation(h1: Histogram, h2: Histogram) -> float:
    """Pearson correlation of concatenated channel frequencies.

    When either side has zero variance the result is 1.0 for identical
    histograms and 0.0 otherwise.
    """
    if h1.counts.shape != h2.counts.shape:
        raise ShapeError("histograms have different bin layouts")
    a = h1.frequencies.ravel()
    b = h2.frequencies.ravel()
    da = a - a.mean()
    db = b - b.mean()
    na = math.sqrt(float(da @ da))
    nb = math.sqrt(float(db @ db))
    if na == 0.0 or nb == 0.0:
        return 1.0 if np.array_equal(a, b) else 0.0
    return float(np.clip((da @ db) / (na * nb), -1.0, 1.0))


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

@dataclass
class AugmentConfig:
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    max_rotation: float = 10.0
    size: int = 32
    normalize: bool = True
    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD


def sample_augment_params(cfg: AugmentConfig, rng: np.random.Generator) -> dict:
    def factor(strength):
        return float(rng.uniform(1.0 - strength, 1.0 + strength)) if strength > 0 else 1.0

    return {
        "brightness": factor(cfg.brightness),
        "contrast": factor(cfg.contrast),
        "saturation": factor(cfg.saturation),
        "angle": float(rng.uniform(-cfg.max_rotation, cfg.max_rotation)) if cfg.max_rotation > 0 else 0.0,
    }


def normalize(img: np.ndarray, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> np.ndarray:
    return (img - np.asarray(mean)) / np.asarray(std)


def resize(img: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of an ``(H, W, C)`` image to ``size x size``."""
    from scipy import ndimage

    h, w, _ = img.shape
    if h == size and w == size:
        return img
    return ndimage.zoom(img, (size / h, size / w, 1), order=1, mode="nearest", grid_mode=True)


def augment(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator,
            params: Optional[dict] = None) -> np.ndarray:
    """Colour jitter, bounded rotation, resize, then per-channel normalisation."""
    from scipy import ndimage

    img = _as_hwc(np.asarray(img, dtype=float))
    p = params if params is not None else sample_augment_params(cfg, rng)
    out = img
    if p["brightness"] != 1.0:
        out = out * p["brightness"]
    if p["contrast"] != 1.0:
        out = (out - out.mean()) * p["contrast"] + out.mean()
    if p["saturation"] != 1.0 and out.shape[2] == 3:
        gray = out.mean(axis=2, keepdims=True)
        out = gray + (out - gray) * p["saturation"]
    out = np.clip(out, 0.0, 1.0)
    if p["angle"] != 0.0:
        out = ndimage.rotate(out, p["angle"], axes=(1, 0), reshape=False, order=1, mode="nearest")
    out = resize(out, cfg.size)
    if cfg.normalize:
        out = normalize(out, cfg.mean, cfg.std)
    return out


# ---------------------------------------------------------------------------
# PNG I/O
# ---------------------------------------------------------------------------

def read_png(path) -> np.ndarray:
    from PIL import Image as PILImage

    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    img = _as_hwc(np.asarray(img, dtype=float))
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, img: np.ndarray) -> Path:
    from PIL import Image as PILImage

    arr = to_uint8(img)
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(arr).save(path)
    return path
