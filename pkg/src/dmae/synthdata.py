"""Deterministic synthetic jersey tracklets with exact ground truth.

Frames show a jersey-coloured torso with the player's number drawn from a 5x7
bitmap font.  Noisy frames either hide the number behind an occluder or show
only a small distractor digit near the frame edge (outside the default RoI).
All colours are multiples of 1/255 so frames survive an 8-bit PNG round trip
unchanged.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from dmae import imaging
from dmae.errors import ParameterError
from dmae.model.temporal import JerseyLabel

_FONT_ROWS = {
    0: ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    1: ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    2: ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    3: ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    4: ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    5: ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    6: ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    7: ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    8: ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    9: ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
}
FONT = {d: np.array([[c == "1" for c in row] for row in rows]) for d, rows in _FONT_ROWS.items()}
GLYPH_W, GLYPH_H = 5, 7


def _rgb(*values: int) -> tuple:
    return tuple(v / 255.0 for v in values)


JERSEY_PALETTE = (
    _rgb(200, 30, 40), _rgb(20, 60, 170), _rgb(240, 240, 240), _rgb(20, 130, 60),
    _rgb(250, 200, 20), _rgb(110, 40, 150), _rgb(30, 30, 30), _rgb(240, 120, 20),
)
DIGIT_PALETTE = (_rgb(255, 255, 255), _rgb(10, 10, 10), _rgb(255, 220, 0), _rgb(0, 40, 120))
BACKGROUND_PALETTE = (_rgb(40, 120, 50), _rgb(60, 140, 60), _rgb(90, 90, 100), _rgb(150, 150, 160))


@dataclass
class SynthConfig:
    frame_size: int = 32
    digit_scale: int = 2
    digit_gap: int = 1
    blur_severity: tuple = (0.0, 1.0)
    blur_prob: float = 0.5
    blur_max_radius: int = 2
    occlusion_prob: float = 0.15
    distractor_prob: float = 0.15
    length: int = 12
    drift_x: int = 1
    drift_y: int = 2
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("blur_prob", "occlusion_prob", "distractor_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1]")
        if self.occlusion_prob + self.distractor_prob > 1.0 + 1e-12:
            raise ParameterError("occlusion_prob + distractor_prob must not exceed 1")
        if self.length < 1:
            raise ParameterError("tracklet length must be >= 1")
        self.blur_severity = tuple(self.blur_severity)


@dataclass
class DigitBox:
    bbox: tuple  # (x, y, w, h) normalised to the unit square
    digit: int
    distractor: bool = False


@dataclass
class FrameTruth:
    digits: list = field(default_factory=list)
    visible: bool = True
    kind: str = "visible"  # visible | occluded | distractor

    @property
    def is_noisy(self) -> bool:
        return not self.visible

    def to_dict(self) -> dict:
        return {"visible": self.visible, "is_noisy": self.is_noisy, "kind": self.kind,
                "digits": [asdict(d) for d in self.digits]}

    @classmethod
    def from_dict(cls, d: dict) -> "FrameTruth":
        digits = [DigitBox(tuple(x["bbox"]), int(x["digit"]), bool(x.get("distractor", False)))
                  for x in d.get("digits", [])]
        return cls(digits, bool(d["visible"]), d.get("kind", "visible" if d["visible"] else "occluded"))


@dataclass
class Appearance:
    jersey: tuple
    digit: tuple
    background: tuple
    distractor_digit: tuple
    occluder: tuple


@dataclass
class TrackletData:
    frames: np.ndarray  # (N, H, W, 3)
    label: JerseyLabel
    truths: Optional[list] = None

    def __len__(self) -> int:
        return len(self.frames)


def digits_of(label: JerseyLabel) -> list:
    return [d for d in (label.digit1, label.digit2) if d is not None]


def rasterize_digit(digit: int, scale: int = 1) -> np.ndarray:
    """Boolean ``(7*scale, 5*scale)`` glyph."""
    return np.kron(FONT[digit], np.ones((scale, scale), dtype=bool)).astype(bool)


def sample_appearance(rng: np.random.Generator) -> Appearance:
    jersey = JERSEY_PALETTE[rng.integers(len(JERSEY_PALETTE))]
    candidates = [c for c in DIGIT_PALETTE if np.abs(np.subtract(c, jersey)).sum() > 0.9]
    digit = candidates[rng.integers(len(candidates))]
    background = BACKGROUND_PALETTE[rng.integers(len(BACKGROUND_PALETTE))]
    others = [c for c in JERSEY_PALETTE if c != jersey]
    distractor = DIGIT_PALETTE[rng.integers(len(DIGIT_PALETTE))]
    occluder = others[rng.integers(len(others))]
    return Appearance(jersey, digit, background, distractor, occluder)


def _number_layout(label: JerseyLabel, cfg: SynthConfig, offset: tuple) -> list:
    """Top-left pixel corner of every player digit, left to right."""
    s = cfg.digit_scale
    digits = digits_of(label)
    width = len(digits) * GLYPH_W * s + (len(digits) - 1) * cfg.digit_gap * s
    height = GLYPH_H * s
    x0 = (cfg.frame_size - width) // 2 + offset[0]
    y0 = (cfg.frame_size - height) // 2 + offset[1]
    return [(d, x0 + i * (GLYPH_W + cfg.digit_gap) * s, y0) for i, d in enumerate(digits)]


def _paint(img: np.ndarray, mask: np.ndarray, x0: int, y0: int, color) -> None:
    h, w = mask.shape
    region = img[y0:y0 + h, x0:x0 + w]
    region[mask[: region.shape[0], : region.shape[1]]] = color


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def render_frame(label: JerseyLabel, cfg: SynthConfig, rng: np.random.Generator, kind: str = "visible",
                 appearance: Optional[Appearance] = None, offset: tuple = (0, 0),
                 blur: Optional[dict] = None) -> tuple[np.ndarray, FrameTruth]:
    """Draw one frame of a player wearing ``label``.

    ``kind`` is ``visible``, ``occluded`` or ``distractor``.  ``blur`` fixes
    the motion-blur parameters (``omega``, ``scale``, ``k_size``); otherwise
    they are drawn from ``cfg``.
    """
    if kind not in ("visible", "occluded", "distractor"):
        raise ParameterError(f"unknown frame kind {kind!r}")
    if label.digit1 is None:
        raise ParameterError("cannot render a tracklet without a jersey number")
    size = cfg.frame_size
    app = appearance if appearance is not None else sample_appearance(rng)
    img = np.empty((size, size, 3))
    img[:] = app.background
    margin = max(1, size // 10)
    img[1:size - 1, margin:size - margin] = app.jersey

    truth = FrameTruth(kind=kind, visible=kind == "visible")
    layout = _number_layout(label, cfg, offset)
    s = cfg.digit_scale
    if kind in ("visible", "occluded"):
        for d, x0, y0 in layout:
            _paint(img, rasterize_digit(d, s), x0, y0, app.digit)
    if kind == "visible":
        for d, x0, y0 in layout:
            truth.digits.append(DigitBox((x0 / size, y0 / size, GLYPH_W * s / size, GLYPH_H * s / size), int(d)))
    elif kind == "occluded":
        xs = [x0 for _, x0, _ in layout]
        left, right = min(xs) - 1, max(xs) + GLYPH_W * s + 1
        top, bottom = layout[0][2] - 1, layout[0][2] + GLYPH_H * s + 1
        img[max(top, 0):bottom, max(left, 0):right] = app.occluder
    else:
        d = int(rng.integers(10))
        x0 = int(rng.integers(0, 2)) if rng.random() < 0.5 else size - GLYPH_W - int(rng.integers(0, 2))
        y0 = int(rng.integers(1, size - GLYPH_H - 1))
        _paint(img, rasterize_digit(d, 1), x0, y0, app.distractor_digit)
        truth.digits.append(DigitBox((x0 / size, y0 / size, GLYPH_W / size, GLYPH_H / size), d, True))

    if blur is None:
        blur = sample_frame_blur(cfg, rng)
    if blur:
        img = imaging.convolve(img, imaging.motion_blur_kernel(blur["omega"], blur["scale"], blur["k_size"]))
    if cfg.noise_std > 0:
        img = img + rng.normal(0.0, cfg.noise_std, size=img.shape)
    return _quantize(img), truth


def sample_frame_blur(cfg: SynthConfig, rng: np.random.Generator) -> dict:
    lo, hi = cfg.blur_severity
    if hi <= 0 or rng.random() >= cfg.blur_prob:
        return {}
    severity = float(rng.uniform(lo, hi))
    k = 2 * int(round(severity * cfg.blur_max_radius)) + 1
    if k == 1:
        return {}
    return {"omega": float(rng.uniform(0.0, 90.0)), "scale": float(rng.uniform(0.5, 2.0)), "k_size": k}


def _frame_kinds(n: int, cfg: SynthConfig, rng: np.random.Generator,
                 visibility: Optional[Sequence[bool]]) -> list:
    kinds = []
    noisy_total = cfg.occlusion_prob + cfg.distractor_prob
    for i in range(n):
        u = rng.random()
        if visibility is not None:
            if visibility[i]:
                kinds.append("visible")
            else:
                share = cfg.occlusion_prob / noisy_total if noisy_total > 0 else 0.5
                kinds.append("occluded" if u < share else "distractor")
        elif u < cfg.occlusion_prob:
            kinds.append("occluded")
        elif u < noisy_total:
            kinds.append("distractor")
        else:
            kinds.append("visible")
    return kinds


def gen_tracklet(label: JerseyLabel, length: Optional[int], cfg: SynthConfig, rng: np.random.Generator,
                 visibility: Optional[Sequence[bool]] = None) -> TrackletData:
    """``length`` frames of one player with smooth position drift."""
    n = cfg.length if length is None else int(length)
    if n < 1:
        raise ParameterError("tracklet length must be >= 1")
    if visibility is not None and len(visibility) != n:
        raise ParameterError("visibility mask length differs from the tracklet length")
    app = sample_appearance(rng)
    kinds = _frame_kinds(n, cfg, rng, visibility)
    phase_x, phase_y = rng.uniform(0, 2 * np.pi, size=2)
    period = max(n, 4)
    frames, truths = [], []
    for i, kind in enumerate(kinds):
        t = 2 * np.pi * i / period
        offset = (int(round(cfg.drift_x * np.sin(t + phase_x))), int(round(cfg.drift_y * np.sin(t + phase_y))))
        img, truth = render_frame(label, cfg, rng, kind, app, offset)
        frames.append(img)
        truths.append(truth)
    return TrackletData(np.stack(frames), label, truths)


def gen_dataset(numbers: Sequence, count: int, cfg: SynthConfig, seed: int) -> list:
    """``count`` tracklets cycling through ``numbers``; each gets its own rng stream."""
    streams = np.random.SeedSequence(seed).spawn(count)
    out = []
    for i, ss in enumerate(streams):
        label = JerseyLabel.from_number(numbers[i % len(numbers)])
        out.append(gen_tracklet(label, None, cfg, np.random.default_rng(ss)))
    return out


def frame_key(frame: np.ndarray) -> str:
    arr = np.ascontiguousarray(imaging.to_uint8(frame))
    return hashlib.sha1(arr.tobytes() + str(arr.shape).encode()).hexdigest()


# ---------------------------------------------------------------------------
# on-disk layout: NNNNNN.png frames + meta.json
# ---------------------------------------------------------------------------

def write_tracklet(directory, tracklet: TrackletData) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(tracklet.frames):
        imaging.write_png(directory / f"{i:06d}.png", frame)
    meta = {"label": tracklet.label.text, "num_frames": len(tracklet)}
    if tracklet.truths is not None:
        meta["frames"] = [dict(index=i, **t.to_dict()) for i, t in enumerate(tracklet.truths)]
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return directory


def read_tracklet(directory) -> TrackletData:
    directory = Path(directory)
    paths = sorted(p for p in directory.glob("*.png") if p.stem.isdigit())
    if not paths:
        raise FileNotFoundError(f"no frames in {directory}")
    frames = np.stack([imaging.read_png(p) for p in paths])
    meta_path = directory / "meta.json"
    label = JerseyLabel(None, None)
    truths = None
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        label = JerseyLabel.from_number(meta.get("label"))
        if "frames" in meta:
            truths = [FrameTruth.from_dict(f) for f in meta["frames"]]
    return TrackletData(frames, label, truths)


def list_tracklets(root) -> list:
    root = Path(root)
    if (root / "meta.json").exists() or any(root.glob("[0-9]*.png")):
        return [root]
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / "meta.json").exists())
