import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ganforensics import preprocess
from ganforensics.errors import ConfigError
from ganforensics.preprocess import PreprocessDraw, PreprocessMode


def blur_oracle(img, k):
    """Direct 2-D correlation with the outer-product kernel over an explicitly mirrored image."""
    w1 = preprocess.gaussian_kernel_1d(k)
    w2 = np.outer(w1, w1)
    r = k // 2
    h, w = img.shape[:2]
    out = np.zeros(img.shape, np.float64)
    mirror = lambda i, n: -i if i < 0 else (2 * (n - 1) - i if i >= n else i)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    acc = acc + w2[dy + r, dx + r] * img[mirror(y + dy, h), mirror(x + dx, w)].astype(np.float64)
            out[y, x] = acc
    return np.clip(out, 0, 255)


class TestKernel:
    @pytest.mark.parametrize("k, sigma", [(3, 0.8), (5, 1.1), (7, 1.4)])
    def test_auto_sigma(self, k, sigma):
        assert preprocess.auto_sigma(k) == pytest.approx(sigma, abs=1e-12)

    @pytest.mark.parametrize("k", preprocess.KERNEL_SIZES)
    def test_sums_to_one_and_symmetric(self, k):
        w = preprocess.gaussian_kernel_1d(k)
        assert len(w) == k
        assert abs(w.sum() - 1.0) < 1e-6
        np.testing.assert_array_equal(w, w[::-1])
        assert np.all(np.diff(w[: k // 2 + 1]) > 0)

    @pytest.mark.parametrize("k", preprocess.KERNEL_SIZES)
    def test_2d_kernel_sums_to_one(self, k):
        w = preprocess.gaussian_kernel_1d(k)
        assert abs(np.outer(w, w).sum() - 1.0) < 1e-6

    def test_k3_by_hand(self):
        e = math.exp(-1 / (2 * 0.8**2))
        np.testing.assert_allclose(preprocess.gaussian_kernel_1d(3), np.array([e, 1, e]) / (1 + 2 * e), rtol=1e-14)

    def test_k1_is_delta(self):
        np.testing.assert_array_equal(preprocess.gaussian_kernel_1d(1), [1.0])

    @pytest.mark.parametrize("k", [0, 2, -3, 4.0])
    def test_rejects_bad_sizes(self, k):
        with pytest.raises(ValueError):
            preprocess.gaussian_kernel_1d(k)


class TestBlur:
    def test_k1_bit_exact_on_uint8(self, rng):
        img = rng.integers(0, 256, (16, 12, 3), dtype=np.uint8)
        out = preprocess.gaussian_blur(img, 1)
        assert out.dtype == np.float32
        np.testing.assert_array_equal(out.astype(np.uint8), img)
        np.testing.assert_array_equal(out, img.astype(np.float32))

    def test_k1_bit_exact_on_float(self, rng):
        img = rng.uniform(0, 255, (2, 9, 9, 3))
        np.testing.assert_array_equal(preprocess.gaussian_blur(img, 1), img)

    @pytest.mark.parametrize("k", [3, 5, 7])
    def test_matches_direct_oracle(self, rng, k):
        img = rng.integers(0, 256, (11, 9, 2), dtype=np.uint8)
        np.testing.assert_allclose(preprocess.gaussian_blur(img.astype(np.float64), k), blur_oracle(img, k), atol=1e-9)

    @pytest.mark.parametrize("k", preprocess.KERNEL_SIZES)
    def test_constant_image_unchanged(self, k):
        img = np.full((10, 10, 3), 77.0)
        np.testing.assert_allclose(preprocess.gaussian_blur(img, k), img, atol=1e-12)

    @pytest.mark.parametrize("k", [3, 5, 7])
    def test_checkerboard_gain(self, k):
        # a Nyquist checker is an eigenfunction of mirrored separable blur,
        # with gain (sum_i (-1)^i w_i)^2
        w = preprocess.gaussian_kernel_1d(k)
        g1 = float(np.sum(w * (-1.0) ** np.arange(k)))
        yy, xx = np.mgrid[0:16, 0:16]
        check = np.where((xx + yy) % 2 == 0, 1.0, -1.0)[:, :, None]
        out = preprocess.gaussian_blur(128.0 + 10.0 * check, k)
        np.testing.assert_allclose(out, 128.0 + 10.0 * g1 * g1 * check, atol=1e-9)

    def test_batch_equals_per_image(self, rng):
        batch = rng.uniform(0, 255, (3, 8, 8, 3))
        out = preprocess.gaussian_blur(batch, 5)
        for i in range(3):
            np.testing.assert_array_equal(out[i], preprocess.gaussian_blur(batch[i], 5))

    def test_output_clipped(self):
        img = np.zeros((5, 5, 1))
        img[2, 2] = 255.0
        out = preprocess.gaussian_blur(img, 3)
        assert out.min() >= 0.0 and out.max() <= 255.0

    def test_rejects_unsupported_size(self):
        with pytest.raises(ValueError, match="9"):
            preprocess.gaussian_blur(np.zeros((10, 10, 3)), 9)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.uint8, st.tuples(st.integers(8, 20), st.integers(8, 20), st.just(3))), st.sampled_from([3, 5, 7]))
    def test_range_and_mean_bounded(self, img, k):
        out = preprocess.gaussian_blur(img, k)
        assert out.min() >= img.min() - 1e-3 and out.max() <= img.max() + 1e-3


class TestNoise:
    def test_zero_std_bit_exact(self, rng):
        img = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
        out = preprocess.add_gaussian_noise(img, 0.0, np.random.default_rng(0))
        np.testing.assert_array_equal(out, img.astype(np.float32))

    def test_statistics_on_midgray(self):
        img = np.full((256, 256, 3), 128.0)
        out = preprocess.add_gaussian_noise(img, 4.0, np.random.default_rng(5))
        d = out - img
        # 196608 samples: the std estimate is good to well under 1%
        assert abs(d.mean()) < 0.05
        assert d.std() == pytest.approx(4.0, rel=0.01)

    def test_clips(self):
        img = np.array([[[0.0, 255.0, 1.0]]]).repeat(100, axis=0)
        out = preprocess.add_gaussian_noise(img, 5.0, np.random.default_rng(1))
        assert out.min() >= 0.0 and out.max() <= 255.0

    def test_same_seed_same_noise(self):
        img = np.full((4, 4, 3), 100.0)
        a = preprocess.add_gaussian_noise(img, 2.0, np.random.default_rng(3))
        b = preprocess.add_gaussian_noise(img, 2.0, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("std", [-0.1, 5.01])
    def test_rejects_out_of_range(self, std):
        with pytest.raises(ValueError):
            preprocess.add_gaussian_noise(np.zeros((2, 2, 3)), std, np.random.default_rng(0))


class TestDraws:
    def test_none_consumes_no_randomness(self):
        rng = np.random.default_rng(9)
        state = rng.bit_generator.state
        d = preprocess.draw_batch_preprocessing(preprocess.NONE, rng)
        assert d.kind == "none" and d.is_identity
        assert rng.bit_generator.state == state

    def test_blur_sizes_uniform(self):
        rng = np.random.default_rng(0)
        ks = [preprocess.draw_batch_preprocessing(preprocess.BLUR, rng).param for _ in range(4000)]
        counts = np.array([ks.count(k) for k in preprocess.KERNEL_SIZES])
        assert set(ks) == set(preprocess.KERNEL_SIZES)
        # chi-square with 3 dof; 16.27 is the 0.999 quantile
        assert np.sum((counts - 1000) ** 2 / 1000) < 16.27

    def test_noise_std_uniform(self):
        rng = np.random.default_rng(0)
        s = np.array([preprocess.draw_batch_preprocessing(preprocess.NOISE, rng).param for _ in range(4000)])
        assert s.min() >= 0.0 and s.max() <= 5.0
        # mean of U[0,5] is 2.5 with sd 5/sqrt(12*4000) ~ 0.023
        assert abs(s.mean() - 2.5) < 0.1

    def test_draws_reproducible(self):
        a = [preprocess.draw_batch_preprocessing(preprocess.BLUR, np.random.default_rng(4)) for _ in range(3)]
        assert len(set(a)) == 1

    @pytest.mark.parametrize("draw", [PreprocessDraw("none"), PreprocessDraw("blur", 1), PreprocessDraw("noise", 0.0)])
    def test_identity_draws(self, draw, rng):
        assert draw.is_identity
        img = rng.integers(0, 256, (2, 8, 8, 3)).astype(np.float32)
        np.testing.assert_array_equal(preprocess.apply(draw, img, np.random.default_rng(0)), img)

    def test_noise_draw_needs_rng(self):
        with pytest.raises(ValueError):
            preprocess.apply(PreprocessDraw("noise", 1.0), np.zeros((1, 4, 4, 3)))

    def test_mode_validation(self):
        with pytest.raises(ConfigError):
            PreprocessMode("sharpen")
        with pytest.raises(ConfigError):
            PreprocessMode("blur", kernel_sizes=(9,))
        with pytest.raises(ConfigError):
            PreprocessMode("noise", max_std=6.0)

    def test_model_ids(self):
        assert [m.model_id for m in (preprocess.NONE, preprocess.BLUR, preprocess.NOISE)] == ["M", "M_GB", "M_GN"]
