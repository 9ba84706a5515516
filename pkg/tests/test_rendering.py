import math

import numpy as np
import pytest

from photoforge.elastic import ForceList, ParticleSpec
from photoforge.rendering import (
    ImageSpec,
    IntensityImage,
    gaussian_blur,
    gaussian_kernel,
    pixel_centers,
    preprocess,
    quantize,
    render,
    render_float,
    resize_nearest,
    rotate_image,
)
from photoforge.sampling import SamplerConfig, sample_force_list

PARTICLE = ParticleSpec(radius=0.008)
SMALL = ParticleSpec(radius=0.004)
PAIR = ForceList.from_rows([[0.1, 0.0, 0.0], [0.1, math.pi, 0.0]])


def image_from(array):
    return IntensityImage(np.asarray(array, dtype=np.uint8), 0.00019)


class TestGeometry:
    def test_side_large_particle(self):
        assert ImageSpec().side(0.008) == 85

    def test_side_small_particle(self):
        assert ImageSpec().side(0.004) == 43

    def test_grid_is_centred(self):
        x, y = pixel_centers(85, 0.00019)
        assert x[42] == pytest.approx(0.0, abs=1e-18)
        assert y[42] == pytest.approx(0.0, abs=1e-18)
        np.testing.assert_allclose(x, -x[::-1], atol=1e-18)
        np.testing.assert_allclose(y, -y[::-1], atol=1e-18)


class TestRender:
    def test_centre_pixel_diametral_pair(self):
        img = render(PAIR, PARTICLE)
        assert img.width == img.height == 85
        assert img.pixels[42, 42] == 244

    def test_small_particle_side(self):
        assert render(PAIR, SMALL).width == 43

    def test_background_outside_disc(self):
        img = render(PAIR, PARTICLE)
        x, y = pixel_centers(img.width, img.pixel_size)
        X, Y = np.meshgrid(x, y)
        outside = np.hypot(X, Y) > PARTICLE.radius
        assert np.all(img.pixels[outside] == 0)

    def test_half_turn_equivariance_exact(self):
        for seed in range(5):
            fl = sample_force_list(2 + seed % 5, SamplerConfig(seed=100 + seed))
            direct = render(fl.rotated(math.pi), PARTICLE)
            turned = rotate_image(render(fl, PARTICLE), math.pi)
            assert np.array_equal(direct.pixels, turned.pixels)

    def test_determinism(self):
        fl = sample_force_list(3, SamplerConfig(seed=5))
        assert render(fl, PARTICLE) == render(fl, PARTICLE)

    def test_quantization_round_half_away(self):
        assert quantize(np.array([0.49, 0.5, 1.49, 1.5, 254.49, 254.5, 255.0])).tolist() == [
            0, 1, 1, 2, 254, 255, 255,
        ]


class TestRotateImage:
    def test_identity(self):
        img = render(PAIR, PARTICLE)
        assert rotate_image(img, 0.0) == img

    def test_half_turn_involution(self):
        img = render(PAIR, PARTICLE)
        assert rotate_image(rotate_image(img, math.pi), math.pi) == img

    def test_quarter_turn_is_lattice_permutation(self):
        fl = sample_force_list(3, SamplerConfig(seed=6))
        img = render(fl, PARTICLE)
        turned = rotate_image(img, math.pi / 2)
        assert np.array_equal(turned.pixels, np.rot90(img.pixels, 1))
        assert sorted(turned.pixels.ravel()) == sorted(img.pixels.ravel())

    def test_rejects_non_square(self):
        img = IntensityImage(np.zeros((4, 5), dtype=np.uint8), 1.0)
        with pytest.raises(ValueError):
            rotate_image(img, 0.3)

    def test_out_of_frame_is_background(self):
        img = image_from(np.full((7, 7), 200))
        rotated = rotate_image(img, 0.7)
        assert (rotated.pixels == 0).any()


class TestResize:
    def test_identity(self):
        img = render(PAIR, PARTICLE)
        assert resize_nearest(img, img.width) == img

    def test_checkerboard_blocks(self):
        board = image_from([[0, 255], [255, 0]])
        big = resize_nearest(board, 4)
        expected = np.array(
            [
                [0, 0, 255, 255],
                [0, 0, 255, 255],
                [255, 255, 0, 0],
                [255, 255, 0, 0],
            ],
            dtype=np.uint8,
        )
        assert np.array_equal(big.pixels, expected)

    def test_never_invents_values(self):
        img = render(PAIR, PARTICLE)
        up = resize_nearest(img, 128)
        assert set(np.unique(up.pixels)) <= set(np.unique(img.pixels))

    def test_pixel_size_scales(self):
        img = render(PAIR, PARTICLE)
        up = resize_nearest(img, 128)
        assert up.pixel_size == pytest.approx(img.pixel_size * 85 / 128)


class TestBlur:
    def test_constant_preserved(self):
        img = image_from(np.full((32, 32), 137))
        assert np.all(gaussian_blur(img, 1.0).pixels == 137)

    def test_impulse_centre_value_oracle(self):
        # Oracle: direct kernel computation, centre value = 255 * w0^2.
        kernel = gaussian_kernel(1.0)
        assert len(kernel) == 7
        expected = round(255 * float(kernel[3]) ** 2)
        field = np.zeros((31, 31))
        field[15, 15] = 255
        blurred = gaussian_blur(image_from(field), 1.0)
        assert blurred.pixels[15, 15] == expected == 41

    def test_mass_conservation_interior_impulse(self):
        field = np.zeros((31, 31))
        field[15, 15] = 255
        img = image_from(field)
        blurred = gaussian_blur(img, 1.0)
        assert abs(int(blurred.pixels.sum()) - 255) <= 31 * 31 * 0.5

    def test_kernel_normalized(self):
        for sigma in (0.5, 1.0, 2.0, 3.7):
            k = gaussian_kernel(sigma)
            assert len(k) == 2 * math.ceil(3 * sigma) + 1
            assert k.sum() == pytest.approx(1.0, abs=1e-12)


class TestPreprocess:
    def test_output_shape(self):
        img = render(PAIR, PARTICLE)
        out = preprocess(img, angle=1.23)
        assert out.pixels.shape == (128, 128)

    def test_zero_angle_equals_resize_blur(self):
        img = render(PAIR, PARTICLE)
        assert preprocess(img, 0.0) == gaussian_blur(resize_nearest(img, 128), 1.0)

    def test_deterministic(self):
        img = render(PAIR, PARTICLE)
        assert preprocess(img, 2.2) == preprocess(img, 2.2)

    def test_blur_scaling_trivial_factors(self):
        img = render(PAIR, PARTICLE)
        zero = IntensityImage(np.zeros_like(img.pixels), img.pixel_size)
        assert np.all(gaussian_blur(zero, 1.0).pixels == 0)
        assert gaussian_blur(img, 1.0) == gaussian_blur(img, 1.0)


class TestFloatRender:
    def test_quantized_matches_float(self):
        img = render(PAIR, PARTICLE)
        floats = render_float(PAIR, PARTICLE)
        assert np.array_equal(img.pixels, quantize(floats))

    def test_float_range(self):
        floats = render_float(PAIR, PARTICLE)
        assert floats.min() >= 0.0
        assert floats.max() <= 255.0
