import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nightlayers.imaging import (
    ImageError,
    adaptive_fusion_gray,
    laplacian,
    load_image,
    max_channel,
    quantize,
    resize_bilinear,
    save_image,
    spatial_gradient,
)

unit = st.floats(0.0, 1.0, allow_nan=False)
rgb_images = arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(3)), elements=unit)


class TestIO:
    def test_roundtrip_8bit(self, tmp_path):
        img = np.random.default_rng(0).uniform(size=(7, 9, 3)).astype(np.float32)
        save_image(img, tmp_path / "a.png")
        back = load_image(tmp_path / "a.png")
        assert back.shape == img.shape
        assert np.max(np.abs(back - img)) <= 1 / 255 + 1e-7

    def test_extremes(self, tmp_path):
        img = np.array([[[0.0, 1.0, 0.5]]], dtype=np.float32)
        save_image(img, tmp_path / "x.png")
        back = load_image(tmp_path / "x.png")
        assert back[0, 0, 0] == 0.0
        assert back[0, 0, 1] == 1.0

    def test_quantization_rules(self):
        assert np.all(quantize(np.full((2, 2, 3), 0.5)) == 128)
        assert quantize(np.array([1.0]))[0] == 255
        assert quantize(np.array([-0.1]))[0] == 0
        assert quantize(np.array([1.7]))[0] == 255

    def test_16bit_png(self, tmp_path):
        import cv2

        raw = np.array([[[0, 65535, 32768]]], dtype=np.uint16)
        cv2.imwrite(str(tmp_path / "d.png"), raw)
        img = load_image(tmp_path / "d.png")
        # stored BGR, returned RGB
        np.testing.assert_allclose(img[0, 0], [32768 / 65535, 1.0, 0.0], rtol=1e-6)

    def test_gray_png_is_single_channel(self, tmp_path):
        save_image(np.full((3, 4), 0.25), tmp_path / "g.png")
        assert load_image(tmp_path / "g.png").shape == (3, 4, 1)

    def test_corrupt_file_names_path(self, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"not an image")
        with pytest.raises(ImageError, match="bad.png"):
            load_image(bad)

    def test_unwritable(self, tmp_path):
        with pytest.raises(OSError):
            save_image(np.zeros((2, 2, 3)), tmp_path / "missing" / "x.png")


class TestMaxChannel:
    def test_pixel(self):
        assert max_channel(np.array([[[0.2, 0.5, 0.3]]]))[0, 0, 0] == pytest.approx(0.5)

    def test_zero_and_gray(self):
        assert np.all(max_channel(np.zeros((3, 3, 3))) == 0)
        g = np.random.default_rng(1).uniform(size=(4, 4, 1)).astype(np.float32)
        np.testing.assert_array_equal(max_channel(np.repeat(g, 3, axis=2)), g)

    def test_single_channel_rejected(self):
        with pytest.raises(ImageError):
            max_channel(np.zeros((2, 2, 1)))

    @settings(max_examples=40, deadline=None)
    @given(rgb_images)
    def test_dominates_each_channel(self, img):
        m = max_channel(img)
        assert np.all(m >= img)


class TestAdaptiveFusion:
    def test_mid_gray(self):
        assert adaptive_fusion_gray(np.full((1, 1, 3), 0.5))[0, 0, 0] == pytest.approx(0.5)

    def test_black(self):
        assert adaptive_fusion_gray(np.zeros((1, 1, 3)))[0, 0, 0] == 0.0

    def test_white(self):
        # w = exp(-0.25 / 0.08) = exp(-3.125); three channels times 1/3
        assert adaptive_fusion_gray(np.ones((1, 1, 3)))[0, 0, 0] == pytest.approx(math.exp(-3.125), abs=1e-6)
        assert math.exp(-3.125) == pytest.approx(0.04394, abs=1e-5)

    def test_sigma_validation(self):
        with pytest.raises(ValueError):
            adaptive_fusion_gray(np.zeros((1, 1, 3)), sigma=0.0)

    @settings(max_examples=50, deadline=None)
    @given(rgb_images)
    def test_range_and_permutation_symmetry(self, img):
        out = adaptive_fusion_gray(img)
        assert out.min() >= 0.0 and out.max() <= 1.0
        np.testing.assert_allclose(adaptive_fusion_gray(img[:, :, [2, 0, 1]]), out, atol=1e-6)


class TestDerivatives:
    def test_gradient_constant(self):
        dx, dy = spatial_gradient(np.full((4, 5, 3), 0.3))
        assert not dx.any() and not dy.any()

    def test_gradient_ramp(self):
        ramp = np.tile(np.arange(6, dtype=np.float32) * 0.1, (4, 1))[:, :, None]
        dx, dy = spatial_gradient(ramp)
        np.testing.assert_allclose(dx[:, :-1], 0.1, rtol=1e-5)
        assert not dx[:, -1].any()
        assert not dy.any()

    def test_gradient_impulse_has_four_entries(self):
        img = np.zeros((5, 5, 1))
        img[2, 2] = 1.0
        dx, dy = spatial_gradient(img)
        # entries at (2,1),(2,2) in dx and (1,2),(2,2) in dy
        nz = sorted([("x", *p) for p in zip(*np.nonzero(dx[:, :, 0]))] + [("y", *p) for p in zip(*np.nonzero(dy[:, :, 0]))])
        assert nz == [("x", 2, 1), ("x", 2, 2), ("y", 1, 2), ("y", 2, 2)]

    def test_laplacian_constant_and_ramp(self):
        assert not laplacian(np.full((4, 4, 1), 0.7)).any()
        ramp = np.tile(np.arange(6, dtype=np.float32), (5, 1))[:, :, None]
        lap = laplacian(ramp)
        assert not lap[:, 1:-1].any()

    def test_laplacian_impulse(self):
        img = np.zeros((5, 5, 1))
        img[2, 2] = 1.0
        lap = laplacian(img)[:, :, 0]
        expected = np.zeros((5, 5))
        expected[2, 2] = -4
        expected[1, 2] = expected[3, 2] = expected[2, 1] = expected[2, 3] = 1
        np.testing.assert_array_equal(lap, expected)

    @settings(max_examples=30, deadline=None)
    @given(rgb_images, rgb_images, st.floats(-2, 2), st.floats(-2, 2))
    def test_linearity(self, x, y, a, b):
        if x.shape != y.shape:
            y = np.resize(y, x.shape)
        combo = a * x + b * y
        np.testing.assert_allclose(laplacian(combo), a * laplacian(x) + b * laplacian(y), atol=1e-4)
        for g_c, g_x, g_y in zip(spatial_gradient(combo), spatial_gradient(x), spatial_gradient(y)):
            np.testing.assert_allclose(g_c, a * g_x + b * g_y, atol=1e-4)


class TestResize:
    def test_identity(self):
        img = np.random.default_rng(2).uniform(size=(5, 7, 3)).astype(np.float32)
        np.testing.assert_allclose(resize_bilinear(img, 5, 7), img, atol=1e-7)

    def test_constant(self):
        out = resize_bilinear(np.full((4, 6, 3), 0.4), 9, 3)
        np.testing.assert_allclose(out, 0.4, atol=1e-6)

    def test_upsample_two_pixels(self):
        # half-pixel centres: sources at -0.25, 0.25, 0.75, 1.25 -> clamp -> 0, .25, .75, 1
        out = resize_bilinear(np.array([[0.0], [1.0]]), 4, 1)[:, 0, 0]
        np.testing.assert_allclose(out, [0.0, 0.25, 0.75, 1.0], atol=1e-7)
        assert np.all(np.diff(out) >= 0)

    def test_zero_extent(self):
        with pytest.raises(ImageError):
            resize_bilinear(np.zeros((2, 2, 1)), 0, 3)
