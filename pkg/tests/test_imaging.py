"""Kernels, convolution, patches, colour and augmentation."""


import numpy as np
import pytest

import oracles
from dmae import imaging
from dmae.errors import ParameterError, ShapeError

ODD_SIZES = (3, 5, 7, 9, 11, 13, 15)


class TestRotationMatrix:
    def test_identity_case(self):
        for k in (1, 3, 5, 9):
            np.testing.assert_allclose(imaging.rotation_matrix(0.0, 1.0, k).matrix,
                                       [[1, 0, 0], [0, 1, 0]], atol=1e-12)

    def test_centre_is_fixed(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            om, s, k = rng.uniform(0, 90), rng.uniform(1e-3, 2.0), int(rng.choice(ODD_SIZES))
            x, y = imaging.rotation_matrix(om, s, k).apply(k / 2, k / 2)
            assert abs(x - k / 2) < 1e-9 and abs(y - k / 2) < 1e-9

    def test_quarter_turn(self):
        # fixed-point translation: R (2.5, 2.5) = (2.5, 2.5)
        np.testing.assert_allclose(imaging.rotation_matrix(90.0, 1.0, 5).matrix,
                                   [[0, -1, 5], [1, 0, 0]], atol=1e-12)

    def test_matches_fixed_point_oracle(self):
        for om, s, k in ((15, 0.7, 7), (45, 1.0, 5), (80, 1.9, 11)):
            np.testing.assert_allclose(imaging.rotation_matrix(om, s, k).matrix,
                                       oracles.rotation_fixed_point(om, s, k), atol=1e-12)

    @pytest.mark.parametrize("bad", [(0, 1, 4), (0, 1, 0), (-1, 1, 5), (91, 1, 5), (10, 0, 5), (10, 2.5, 5)])
    def test_invalid(self, bad):
        with pytest.raises(ParameterError):
            imaging.rotation_matrix(*bad)


class TestMotionBlurKernel:
    def test_size_one(self):
        np.testing.assert_array_equal(imaging.motion_blur_kernel(37.0, 1.3, 1).weights, [[1.0]])

    def test_horizontal(self):
        w = imaging.motion_blur_kernel(0.0, 1.0, 5).weights
        expected = np.zeros((5, 5))
        expected[2] = 0.2
        np.testing.assert_array_equal(w, expected)

    def test_vertical_is_transpose(self):
        for k in (3, 5, 7):
            a = imaging.motion_blur_kernel(0.0, 1.0, k).weights
            b = imaging.motion_blur_kernel(90.0, 1.0, k).weights
            np.testing.assert_allclose(b, a.T, atol=1e-12)

    def test_matches_reference(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            om, s, k = rng.uniform(0, 90), rng.uniform(0.1, 2.0), int(rng.choice(ODD_SIZES))
            np.testing.assert_allclose(imaging.motion_blur_kernel(om, s, k).weights,
                                       oracles.motion_kernel_reference(om, s, k), atol=1e-8)

    def test_nearest_mode_normalised(self):
        w = imaging.motion_blur_kernel(30.0, 1.0, 7, interpolation="nearest").weights
        assert np.all(w >= 0) and abs(w.sum() - 1) < 1e-12

    def test_format_kernel(self):
        text = imaging.format_kernel(imaging.motion_blur_kernel(0.0, 1.0, 3))
        assert text.splitlines()[1].split() == ["0.333333"] * 3


class TestGaussianKernel:
    def test_closed_form(self):
        np.testing.assert_allclose(imaging.gaussian_kernel(1.0, 3).weights, oracles.gaussian_closed_form(1.0, 3),
                                   atol=1e-12)

    def test_small_sigma_peaks(self):
        assert imaging.gaussian_kernel(1e-3, 3).weights[1, 1] > 1 - 1e-9

    def test_flip_symmetry(self):
        w = imaging.gaussian_kernel(1.3, 7).weights
        np.testing.assert_array_equal(w, w[::-1])
        np.testing.assert_array_equal(w, w[:, ::-1])

    def test_invalid_sigma(self):
        with pytest.raises(ParameterError):
            imaging.gaussian_kernel(0.0, 3)


class TestConvolve:
    def test_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            h, w = rng.integers(3, 9, size=2)
            k = int(rng.choice((1, 3, 5)))
            img = rng.random((h, w, 3))
            ker = rng.random((k, k))
            ker /= ker.sum()
            np.testing.assert_allclose(imaging.convolve(img, ker), oracles.correlate_replicate(img, ker), atol=1e-10)

    def test_single_channel_5x5(self):
        rng = np.random.default_rng(3)
        img, ker = rng.random((5, 5)), rng.random((3, 3))
        np.testing.assert_allclose(imaging.convolve(img, ker), oracles.correlate_replicate(img, ker), atol=1e-12)

    def test_constant_invariant(self):
        img = np.full((8, 8, 3), 0.37)
        out = imaging.convolve(img, imaging.motion_blur_kernel(33.0, 1.4, 5))
        np.testing.assert_array_equal(out, img)

    def test_delta_identity(self):
        img = np.random.default_rng(4).random((6, 6, 3))
        np.testing.assert_array_equal(imaging.convolve(img, imaging.identity_kernel()), img)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(5)
        imgs = rng.random((4, 8, 8, 3))
        ker = imaging.gaussian_kernel(1.0, 5)
        batch = imaging.convolve(imgs, ker)
        for i in range(4):
            np.testing.assert_allclose(batch[i], imaging.convolve(imgs[i], ker), atol=1e-12)


class TestPatches:
    def test_counts(self):
        assert imaging.patch_count(224, 224, 16) == 196
        assert imaging.patch_count(32, 32, 8) == 16

    def test_roundtrip_exact(self):
        img = np.random.default_rng(6).random((32, 24, 3))
        np.testing.assert_array_equal(imaging.unpatchify(imaging.patchify(img, 8)), img)

    def test_row_major_order(self):
        img = np.zeros((16, 16, 1))
        img[0:8, 8:16] = 1.0  # top-right patch
        grid = imaging.patchify(img, 8)
        assert grid.blocks[1].min() == 1.0 and grid.blocks[2].max() == 0.0

    def test_not_divisible(self):
        with pytest.raises(ShapeError):
            imaging.patchify(np.zeros((10, 16, 3)), 8)

    def test_batch_roundtrip(self):
        imgs = np.random.default_rng(7).random((3, 16, 16, 3))
        flat = imaging.patchify_batch(imgs, 8)
        assert flat.shape == (3, 4, 8 * 8 * 3)
        np.testing.assert_array_equal(imaging.unpatchify_batch(flat, 8, 16, 16), imgs)


class TestColour:
    def test_known_pixels(self):
        hsv = imaging.rgb_to_hsv(np.array([[[1.0, 0, 0], [0.5, 0.5, 0.5]]]))
        np.testing.assert_allclose(hsv[0, 0], [0, 1, 1])
        assert hsv[0, 1, 1] == 0.0

    def test_colorsys_oracle(self):
        img = np.random.default_rng(8).random((10, 10, 3))
        np.testing.assert_allclose(imaging.rgb_to_hsv(img), oracles.hsv_colorsys(img), atol=1e-12)

    def test_roundtrip(self):
        px = np.random.default_rng(9).random((1000, 1, 3))
        np.testing.assert_allclose(imaging.hsv_to_rgb(imaging.rgb_to_hsv(px)), px, atol=1e-5)

    def test_histogram_normalised(self):
        img = np.random.default_rng(10).random((9, 9, 3))
        h = imaging.color_histogram(img, (2, 1, 7, 8), bins=8)
        assert h.counts.shape == (3, 8)
        assert abs(h.frequencies.sum() - 1.0) < 1e-12
        assert h.counts.sum() == 3 * 5 * 7

    def test_empty_region(self):
        with pytest.raises(ParameterError):
            imaging.color_histogram(np.zeros((4, 4, 3)), (2, 2, 2, 4))

    def test_correlation_hand_value(self):
        h1 = imaging.Histogram(np.array([[4.0, 3.0, 2.0, 1.0]]))
        h2 = imaging.Histogram(np.array([[1.0, 3.0, 2.0, 4.0]]))
        expected = oracles.pearson([0.4, 0.3, 0.2, 0.1], [0.1, 0.3, 0.2, 0.4])
        assert abs(imaging.histogram_correlation(h1, h2) - expected) < 1e-12
        assert abs(expected - (-0.8)) < 1e-12

    def test_correlation_self_and_symmetry(self):
        rng = np.random.default_rng(11)
        a = imaging.color_histogram(rng.random((6, 6, 3)))
        b = imaging.color_histogram(rng.random((6, 6, 3)))
        assert abs(imaging.histogram_correlation(a, a) - 1.0) < 1e-12
        assert imaging.histogram_correlation(a, b) == imaging.histogram_correlation(b, a)

    def test_zero_variance_convention(self):
        flat = imaging.Histogram(np.ones((1, 4)))
        other = imaging.Histogram(np.array([[1.0, 0, 0, 0]]))
        assert imaging.histogram_correlation(flat, flat) == 1.0
        assert imaging.histogram_correlation(flat, other) == 0.0


class TestAugment:
    def test_identity_up_to_normalisation(self):
        img = np.random.default_rng(12).random((32, 32, 3))
        cfg = imaging.AugmentConfig(0, 0, 0, 0, size=32)
        out = imaging.augment(img, cfg, np.random.default_rng(0))
        np.testing.assert_allclose(out, imaging.normalize(img), atol=1e-12)

    def test_normalise_mean_is_zero(self):
        img = np.broadcast_to(np.array(imaging.IMAGENET_MEAN), (4, 4, 3))
        np.testing.assert_allclose(imaging.normalize(img), 0.0, atol=1e-12)

    def test_rotation_bound(self):
        cfg = imaging.AugmentConfig()
        rng = np.random.default_rng(13)
        angles = [imaging.sample_augment_params(cfg, rng)["angle"] for _ in range(1000)]
        assert max(abs(a) for a in angles) <= 10.0

    def test_resize_shape(self):
        out = imaging.augment(np.random.default_rng(14).random((20, 20, 3)),
                              imaging.AugmentConfig(size=32, normalize=False), np.random.default_rng(1))
        assert out.shape == (32, 32, 3)
        assert out.min() >= 0 and out.max() <= 1


class TestPng:
    def test_roundtrip_quantised(self, tmp_path):
        img = np.random.default_rng(15).integers(0, 256, size=(8, 8, 3)) / 255.0
        imaging.write_png(tmp_path / "a.png", img)
        np.testing.assert_array_equal(imaging.read_png(tmp_path / "a.png"), img)
