import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowwarn.imgproc import (
    GrayFrame,
    OutOfBounds,
    RgbFrame,
    TooSmallForLevels,
    build_pyramid,
    gradient_window,
    sample_bilinear,
    to_grayscale,
)
from support import smooth_texture


def rgb_solid(r, g, b, w=32, h=32):
    px = np.zeros((h, w, 3), dtype=np.uint8)
    px[:, :, 0] = r
    px[:, :, 1] = g
    px[:, :, 2] = b
    return RgbFrame.from_array(px)


class TestGrayscale:
    def test_black_is_zero(self):
        g = to_grayscale(rgb_solid(0, 0, 0))
        assert np.all(g.intensities == 0.0)

    def test_white_is_255(self):
        g = to_grayscale(rgb_solid(255, 255, 255))
        assert np.allclose(g.intensities, 255.0, atol=1e-3)

    def test_pure_red_luma(self):
        # direct evaluation: 0.299 * 255
        g = to_grayscale(rgb_solid(255, 0, 0))
        assert np.allclose(g.intensities, 76.245, atol=1e-3)

    def test_bounded_for_any_input(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            px = rng.integers(0, 256, (24, 31, 3), dtype=np.uint8)
            g = to_grayscale(RgbFrame.from_array(px))
            assert g.intensities.min() >= 0.0
            assert g.intensities.max() <= 255.0

    def test_dimensions_preserved(self):
        g = to_grayscale(rgb_solid(7, 8, 9, w=41, h=23))
        assert (g.width, g.height) == (41, 23)

    def test_too_small_frame_rejected(self):
        with pytest.raises(ValueError):
            RgbFrame.from_array(np.zeros((8, 8, 3), dtype=np.uint8))


class TestPyramid:
    def test_720p_level_dimensions(self):
        g = GrayFrame.from_array(np.zeros((720, 1280), dtype=np.float32))
        pyr = build_pyramid(g, 5)
        dims = [(l.width, l.height) for l in pyr.levels]
        assert dims == [(1280, 720), (640, 360), (320, 180), (160, 90), (80, 45)]

    def test_constant_frame_stays_constant(self):
        g = GrayFrame.from_array(np.full((64, 48), 133.25, dtype=np.float32))
        pyr = build_pyramid(g, 5)
        for level in pyr.levels:
            assert np.allclose(level.intensities, 133.25, atol=1e-4)

    def test_too_small_for_levels(self):
        g = GrayFrame.from_array(np.zeros((16, 16), dtype=np.float32))
        with pytest.raises(TooSmallForLevels):
            build_pyramid(g, 6)

    @given(w=st.integers(16, 160), h=st.integers(16, 160),
           levels=st.integers(1, 4))
    @settings(max_examples=25, deadline=None)
    def test_dims_halve_with_floor(self, w, h, levels):
        g = GrayFrame.from_array(np.zeros((h, w), dtype=np.float32))
        pyr = build_pyramid(g, levels)
        for a, b in zip(pyr.levels, pyr.levels[1:]):
            assert (b.width, b.height) == (a.width // 2, a.height // 2)

    def test_level_zero_is_input(self):
        arr = smooth_texture(32, 40, 3)
        pyr = build_pyramid(GrayFrame.from_array(arr), 2)
        assert np.array_equal(pyr.levels[0].intensities, arr)


class TestBilinear:
    def test_integer_coordinates_reproduce_pixels(self):
        frame = GrayFrame.from_array(smooth_texture(20, 25, 9))
        ys, xs = np.mgrid[0:20, 0:25]
        got = sample_bilinear(frame, xs.ravel().astype(float),
                              ys.ravel().astype(float))
        assert np.array_equal(got.reshape(20, 25), frame.intensities)

    @given(x=st.floats(0, 24), y=st.floats(0, 19))
    @settings(max_examples=50, deadline=None)
    def test_samples_within_local_range(self, x, y):
        frame = GrayFrame.from_array(smooth_texture(20, 25, 11))
        v = sample_bilinear(frame, np.array([x]), np.array([y]))[0]
        assert frame.intensities.min() - 1e-4 <= v <= frame.intensities.max() + 1e-4


class TestGradientWindow:
    def test_identical_frames_zero_it(self):
        frame = GrayFrame.from_array(smooth_texture(40, 40, 5))
        for center in [(12.0, 12.0), (20.5, 17.25), (30.0, 25.0)]:
            w = gradient_window(frame, frame, center, 9)
            assert np.all(w.it == 0.0)

    def test_horizontal_ramp_gradients(self):
        ramp = np.tile(np.arange(40, dtype=np.float32), (40, 1))
        frame = GrayFrame.from_array(ramp)
        w = gradient_window(frame, frame, (20.0, 20.0), 15)
        assert np.allclose(w.ix, 1.0, atol=1e-5)
        assert np.allclose(w.iy, 0.0, atol=1e-5)

    def test_shifted_ramp_it_matches_minus_shift_times_ix(self):
        ramp = np.tile(np.arange(40, dtype=np.float32), (40, 1))
        shifted = ramp + 0.0
        shifted = np.roll(ramp, 1, axis=1)  # shift +1 px in x
        prev = GrayFrame.from_array(ramp)
        curr = GrayFrame.from_array(shifted)
        w = gradient_window(prev, curr, (20.0, 20.0), 9)
        assert np.allclose(w.it, -1.0, atol=1e-5)

    def test_out_of_bounds_rejected(self):
        frame = GrayFrame.from_array(smooth_texture(40, 40, 5))
        with pytest.raises(OutOfBounds):
            gradient_window(frame, frame, (4.0, 20.0), 15)
        with pytest.raises(OutOfBounds):
            gradient_window(frame, frame, (20.0, 36.0), 15)

    def test_dimension_mismatch_rejected(self):
        a = GrayFrame.from_array(smooth_texture(40, 40, 5))
        b = GrayFrame.from_array(smooth_texture(40, 42, 5))
        with pytest.raises(ValueError):
            gradient_window(a, b, (20.0, 20.0), 9)

    def test_even_window_rejected(self):
        frame = GrayFrame.from_array(smooth_texture(40, 40, 5))
        with pytest.raises(ValueError):
            gradient_window(frame, frame, (20.0, 20.0), 8)
