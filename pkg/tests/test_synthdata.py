"""Synthetic tracklet generator: ground truth, determinism and disk layout."""

import numpy as np
import pytest

import oracles
from dmae import synthdata as S
from dmae.errors import ParameterError
from dmae.model.temporal import JerseyLabel

SHARP = S.SynthConfig(blur_prob=0.0, noise_std=0.0)


@pytest.mark.parametrize("number", [7, 10, 23, 88])
def test_bbox_encloses_digit_pixels(number):
    app = S.Appearance((0.8, 0.1, 0.1), (1.0, 1.0, 1.0), (0.2, 0.5, 0.2), (0.0, 0.0, 0.0), (0.0, 0.0, 1.0))
    img, truth = S.render_frame(JerseyLabel.from_number(number), SHARP, np.random.default_rng(0), "visible", app)
    size = SHARP.frame_size
    digit_px = np.all(img == 1.0, axis=-1)
    boxes = [tuple(round(v * size) for v in d.bbox) for d in truth.digits]
    assert [d.digit for d in truth.digits] == S.digits_of(JerseyLabel.from_number(number))
    covered = np.zeros_like(digit_px)
    for bx, by, bw, bh in boxes:
        covered[by:by + bh, bx:bx + bw] = True
        # each glyph's pixels sit inside its box and reach its top and bottom rows
        sx, sy, sw, sh = oracles.pixel_scan_bbox(digit_px[by:by + bh, bx:bx + bw])
        assert sx + sw <= bw and (sy, sh) == (0, bh)
        assert bw == S.GLYPH_W * SHARP.digit_scale and bh == S.GLYPH_H * SHARP.digit_scale
    # every digit-coloured pixel is enclosed by some recorded box
    assert not (digit_px & ~covered).any()
    for d in truth.digits:
        x, y, w, h = d.bbox
        assert 0 <= x and 0 <= y and x + w <= 1 and y + h <= 1


def test_deterministic():
    a = S.gen_dataset([3, 45], 4, S.SynthConfig(), seed=9)
    b = S.gen_dataset([3, 45], 4, S.SynthConfig(), seed=9)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.frames, y.frames)
        assert [t.to_dict() for t in x.truths] == [t.to_dict() for t in y.truths]
    c = S.gen_dataset([3, 45], 4, S.SynthConfig(), seed=10)
    assert not np.array_equal(a[0].frames, c[0].frames)


def test_noise_fraction():
    cfg = S.SynthConfig(occlusion_prob=0.2, distractor_prob=0.1, blur_prob=0.0, length=20)
    data = S.gen_dataset([5, 12], 100, cfg, seed=1)
    noisy = np.mean([t.is_noisy for tr in data for t in tr.truths])
    assert abs(noisy - 0.3) < 0.03


def test_occluded_frames_have_no_digits():
    cfg = S.SynthConfig(occlusion_prob=1.0, distractor_prob=0.0)
    tr = S.gen_tracklet(JerseyLabel.from_number(12), 5, cfg, np.random.default_rng(0))
    assert all(t.kind == "occluded" and not t.digits and t.is_noisy for t in tr.truths)


def test_distractor_frames():
    cfg = S.SynthConfig(occlusion_prob=0.0, distractor_prob=1.0)
    tr = S.gen_tracklet(JerseyLabel.from_number(12), 5, cfg, np.random.default_rng(0))
    for t in tr.truths:
        assert t.kind == "distractor" and len(t.digits) == 1 and t.digits[0].distractor


def test_visibility_mask():
    vis = [True, False, True, False]
    tr = S.gen_tracklet(JerseyLabel.from_number(9), 4, S.SynthConfig(), np.random.default_rng(0), vis)
    assert [t.visible for t in tr.truths] == vis
    with pytest.raises(ParameterError):
        S.gen_tracklet(JerseyLabel.from_number(9), 3, S.SynthConfig(), np.random.default_rng(0), vis)


def test_frames_quantised_and_in_range():
    tr = S.gen_dataset([77], 1, S.SynthConfig(noise_std=0.05), seed=2)[0]
    assert tr.frames.min() >= 0 and tr.frames.max() <= 1
    np.testing.assert_array_equal(np.round(tr.frames * 255) / 255, tr.frames)


def test_config_validation():
    with pytest.raises(ParameterError):
        S.SynthConfig(occlusion_prob=1.5)
    with pytest.raises(ParameterError):
        S.SynthConfig(occlusion_prob=0.6, distractor_prob=0.6)
    with pytest.raises(ParameterError):
        S.SynthConfig(length=0)
    with pytest.raises(ParameterError):
        S.render_frame(JerseyLabel(None, None), SHARP, np.random.default_rng(0))


def test_disk_roundtrip(tmp_path):
    tr = S.gen_dataset([23], 1, S.SynthConfig(length=5), seed=4)[0]
    d = S.write_tracklet(tmp_path / "t0", tr)
    assert sorted(p.name for p in d.iterdir()) == ["000000.png", "000001.png", "000002.png", "000003.png",
                                                  "000004.png", "meta.json"]
    back = S.read_tracklet(d)
    np.testing.assert_array_equal(back.frames, tr.frames)
    assert back.label == tr.label
    assert [t.to_dict() for t in back.truths] == [t.to_dict() for t in tr.truths]
    assert S.list_tracklets(tmp_path) == [d]
    assert S.list_tracklets(d) == [d]


def test_frame_key_distinguishes():
    tr = S.gen_dataset([23], 1, S.SynthConfig(), seed=4)[0]
    keys = {S.frame_key(f) for f in tr.frames}
    assert S.frame_key(tr.frames[0]) == S.frame_key(tr.frames[0].copy())
    assert len(keys) >= 2
