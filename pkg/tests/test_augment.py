import numpy as np
import pytest

from energyssl import augment
from tests.conftest import tiny_config


def _img(size=16, seed=0):
    return np.random.default_rng(seed).random((size, size)).astype(np.float32)


class TestStreams:
    def test_same_key_same_view(self):
        cfg = tiny_config()
        img = _img()
        a = augment.weak_view(img, cfg, seed=1, sample_id=5, iteration=9)
        b = augment.weak_view(img, cfg, seed=1, sample_id=5, iteration=9)
        np.testing.assert_array_equal(a, b)

    def test_key_components_change_view(self):
        cfg = tiny_config()
        img = _img()
        base = augment.weak_view(img, cfg, seed=1, sample_id=5, iteration=9)
        variants = [
            augment.weak_view(img, cfg, seed=2, sample_id=5, iteration=9),
            augment.weak_view(img, cfg, seed=1, sample_id=6, iteration=9),
            augment.weak_view(img, cfg, seed=1, sample_id=5, iteration=10),
        ]
        assert any(not np.array_equal(base, v) for v in variants)

    def test_weak_and_strong_streams_independent(self):
        cfg = tiny_config()
        img = _img()
        w = augment.weak_view(img, cfg, seed=1, sample_id=5, iteration=9)
        s = augment.strong_view(img, cfg, seed=1, sample_id=5, iteration=9)
        assert not np.array_equal(w, s)

    def test_input_not_mutated(self):
        cfg = tiny_config()
        img = _img()
        copy = img.copy()
        augment.strong_view(img, cfg, seed=0, sample_id=0, iteration=0)
        np.testing.assert_array_equal(img, copy)


class TestWeak:
    def test_flip_frequency_monte_carlo(self):
        """With shift disabled, a weak view is either identity or a mirror."""
        img = _img()
        flipped = img[:, ::-1]
        n = 10_000
        hits = 0
        for i in range(n):
            rng = augment.make_stream(0, i, 0, "weak")
            out = augment.weak(img, rng, flip_prob=0.5, max_shift=0.0)
            if np.array_equal(out, flipped):
                hits += 1
            else:
                np.testing.assert_array_equal(out, img)
        assert abs(hits / n - 0.5) < 0.02

    def test_flip_prob_extremes(self):
        img = _img()
        rng = augment.make_stream(0, 0, 0, "weak")
        np.testing.assert_array_equal(
            augment.weak(img, rng, flip_prob=0.0, max_shift=0.0), img
        )
        rng = augment.make_stream(0, 0, 0, "weak")
        np.testing.assert_array_equal(
            augment.weak(img, rng, flip_prob=1.0, max_shift=0.0), img[:, ::-1]
        )

    def test_shift_zero_pads(self):
        img = np.ones((8, 8), dtype=np.float32)
        shifted = augment._shift_zero_pad(img, 2, -3)
        assert shifted[:2].sum() == 0  # rows vacated by the down-shift
        assert shifted[:, -3:].sum() == 0  # columns vacated by the left-shift
        assert shifted.sum() == (8 - 2) * (8 - 3)

    def test_shift_bound(self):
        """Mass never moves farther than round(max_shift * size) pixels."""
        size = 16
        img = np.zeros((size, size), dtype=np.float32)
        img[8, 8] = 1.0
        max_px = int(round(0.125 * size))
        for i in range(200):
            rng = augment.make_stream(0, i, 0, "weak")
            out = augment.weak(img, rng, flip_prob=0.0, max_shift=0.125)
            y, x = np.unravel_index(out.argmax(), out.shape)
            assert abs(y - 8) <= max_px and abs(x - 8) <= max_px


class TestStrong:
    def test_output_range(self):
        cfg = tiny_config()
        img = _img()
        for i in range(50):
            out = augment.strong_view(img, cfg, seed=0, sample_id=i, iteration=0)
            assert out.dtype == np.float32
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_n_ops_zero_equals_weak(self):
        img = _img()
        rng1 = augment.make_stream(0, 1, 2, "strong")
        rng2 = augment.make_stream(0, 1, 2, "strong")
        s = augment.strong(img, rng1, n_ops=0)
        w = augment.weak(img, rng2)
        np.testing.assert_allclose(s, np.clip(w, 0, 1))

    def test_op_draw_without_replacement(self):
        rng = augment.make_stream(0, 0, 0, "strong")
        for _ in range(200):
            chosen = rng.choice(len(augment.STRONG_OPS), size=6, replace=False)
            assert len(set(chosen.tolist())) == 6

    def test_cutout_zeroes_square(self):
        img = np.ones((16, 16), dtype=np.float32)
        rng = augment.make_stream(0, 0, 0, "strong")
        out = augment._op_cutout(img, rng, 0.25)
        side = 4
        assert (out == 0).sum() == side * side

    def test_contrast_and_gamma_formulas(self):
        img = np.full((4, 4), 0.25, dtype=np.float32)

        class FixedRng:
            def uniform(self, lo, hi):
                return hi

        np.testing.assert_allclose(
            augment._op_contrast(img, FixedRng(), 0.5, 2.0), (0.25 - 0.5) * 2.0 + 0.5
        )
        np.testing.assert_allclose(
            augment._op_gamma(img, FixedRng(), 0.7, 2.0), 0.25**2.0, rtol=1e-6
        )

    @pytest.mark.parametrize("name", augment.STRONG_OPS)
    def test_each_op_preserves_shape(self, name):
        img = _img()
        rng = augment.make_stream(0, 0, 0, name)
        op = {
            "rotate": lambda: augment._op_rotate(img, rng, 15.0),
            "shear": lambda: augment._op_shear(img, rng, 0.2),
            "contrast": lambda: augment._op_contrast(img, rng, 0.5, 1.5),
            "gamma": lambda: augment._op_gamma(img, rng, 0.7, 1.4),
            "noise": lambda: augment._op_noise(img, rng, 0.1),
            "cutout": lambda: augment._op_cutout(img, rng, 0.25),
        }[name]
        assert op().shape == img.shape
