import numpy as np
import pytest

from styletrans import losses
from styletrans.gradcheck import check_gradients
from styletrans.losses import (ExtractorError, FeatureExtractor,
                               LossWeights, builtin_extractor,
                               content_loss, extractor_from_layout,
                               identity_losses, style_loss, total_loss)
from styletrans.patching import ImageBuffer
from styletrans.tensor import Tensor


def identity_conv(C=3, dtype=np.float64):
    """3x3 kernel acting as a per-channel identity (center tap)."""
    w = np.zeros((3, 3, C, C), dtype=dtype)
    for c in range(C):
        w[1, 1, c, c] = 1.0
    return Tensor(w), Tensor(np.zeros(C, dtype=dtype))


def identity_extractor(stages=2):
    """Pointwise extractor: stage outputs equal the input image."""
    return FeatureExtractor([[("conv",) + identity_conv()]
                             for _ in range(stages)])


def img(rng, h=16, w=16):
    return ImageBuffer(rng.random((h, w, 3)))


class TestContentLoss:
    def test_identical_is_zero(self, rng):
        ext = builtin_extractor(0)
        a = img(rng)
        assert content_loss(a, Tensor(a.values), ext).item() == 0.0

    def test_nonnegative(self, rng):
        ext = builtin_extractor(0)
        for _ in range(5):
            v = content_loss(img(rng), Tensor(img(rng).values), ext).item()
            assert v >= 0.0

    def test_hand_computed_identity_stages(self, rng):
        # pointwise identity stages on a 2x2 image: the loss is the mean
        # over stages of the RMS pixel distance
        ext = identity_extractor(2)
        a, b = rng.random((2, 2, 3)), rng.random((2, 2, 3))
        want = np.sqrt(((a - b) ** 2).sum() / 12.0)
        got = content_loss(ImageBuffer(a), Tensor(b), ext).item()
        assert got == pytest.approx(want, rel=1e-12)

    def test_raw_norms(self, rng):
        ext = identity_extractor(2)
        a, b = rng.random((2, 2, 3)), rng.random((2, 2, 3))
        want = np.sqrt(((a - b) ** 2).sum())
        got = content_loss(ImageBuffer(a), Tensor(b), ext,
                           raw_norms=True).item()
        assert got == pytest.approx(want, rel=1e-12)

    def test_not_shuffle_invariant(self, rng):
        ext = identity_extractor(2)
        a = rng.random((4, 4, 3))
        flat = a.reshape(16, 3)[rng.permutation(16)].reshape(4, 4, 3)
        assert content_loss(ImageBuffer(a), Tensor(flat), ext).item() > 1e-3


class TestStyleLoss:
    def test_identical_is_zero(self, rng):
        ext = builtin_extractor(0)
        a = img(rng)
        assert style_loss(a, Tensor(a.values), ext).item() \
            == pytest.approx(0.0, abs=1e-12)

    def test_spatial_shuffle_invariant_pointwise_extractor(self, rng):
        ext = identity_extractor(2)
        a = rng.random((4, 4, 3))
        shuffled = a.reshape(16, 3)[rng.permutation(16)].reshape(4, 4, 3)
        v = style_loss(ImageBuffer(shuffled), Tensor(a), ext).item()
        assert v < 1e-10

    def test_matches_two_pass_oracle(self, rng):
        ext = identity_extractor(2)
        a, b = rng.random((5, 4, 3)), rng.random((5, 4, 3))

        def stats(x):
            flat = x.reshape(-1, 3)
            mu = flat.mean(axis=0)
            sd = np.sqrt(((flat - mu) ** 2).mean(axis=0) + 1e-5)
            return mu, sd

        mu_a, sd_a = stats(a)
        mu_b, sd_b = stats(b)
        want = np.sqrt(((mu_a - mu_b) ** 2).sum() / 3) \
            + np.sqrt(((sd_a - sd_b) ** 2).sum() / 3)
        got = style_loss(ImageBuffer(a), Tensor(b), ext).item()
        assert got == pytest.approx(want, rel=1e-6)

    def test_variance_mode(self, rng):
        ext = identity_extractor(2)
        a, b = rng.random((4, 4, 3)), rng.random((4, 4, 3))
        v_std = style_loss(ImageBuffer(a), Tensor(b), ext,
                           sigma="std").item()
        v_var = style_loss(ImageBuffer(a), Tensor(b), ext,
                           sigma="variance").item()
        assert v_std != pytest.approx(v_var)

    def test_resolution_free(self, rng):
        ext = builtin_extractor(0)
        v = style_loss(img(rng, 16, 16), Tensor(img(rng, 32, 32).values),
                       ext).item()
        assert np.isfinite(v)


class TestIdentityLosses:
    def test_perfect_reconstruction_zero(self, rng):
        ext = builtin_extractor(0)
        c, s = img(rng), img(rng)
        l1, l2 = identity_losses(c, s, Tensor(c.values), Tensor(s.values),
                                 ext)
        assert l1.item() == 0.0
        assert l2.item() == pytest.approx(0.0, abs=1e-12)

    def test_hand_checked_single_pixel(self):
        ext = identity_extractor(2)
        c = ImageBuffer(np.full((1, 1, 3), 0.2))
        s = ImageBuffer(np.full((1, 1, 3), 0.8))
        cc = Tensor(np.full((1, 1, 3), 0.5))
        ss = Tensor(np.full((1, 1, 3), 0.8))
        l1, l2 = identity_losses(c, s, cc, ss, ext)
        # RMS distance: sqrt(3*(0.3)^2/3) = 0.3 for the content pair
        assert l1.item() == pytest.approx(0.3, rel=1e-12)
        assert l2.item() == pytest.approx(0.3, rel=1e-12)

    def test_sum_is_symmetric(self, rng):
        ext = identity_extractor(2)
        c, s = img(rng), img(rng)
        cc, ss = Tensor(img(rng).values), Tensor(img(rng).values)
        a = identity_losses(c, s, cc, ss, ext)
        b = identity_losses(s, c, ss, cc, ext)
        assert a[0].item() == pytest.approx(b[0].item(), rel=1e-12)
        assert a[1].item() == pytest.approx(b[1].item(), rel=1e-12)


class TestTotalLoss:
    def _setup(self, rng):
        ext = builtin_extractor(0)
        c, s = img(rng), img(rng)
        out = Tensor(img(rng).values, requires_grad=True)
        cc = Tensor(img(rng).values)
        ss = Tensor(img(rng).values)
        return ext, c, s, out, cc, ss

    def test_zero_weights_zero_total(self, rng):
        ext, c, s, out, cc, ss = self._setup(rng)
        w = LossWeights(0.0, 0.0, 0.0, 0.0)
        total, report = total_loss(c, s, out, cc, ss, ext, w)
        assert total.item() == 0.0
        assert report.total == 0.0

    def test_weighted_sum(self, rng):
        ext, c, s, out, cc, ss = self._setup(rng)
        w = LossWeights()
        assert (w.content, w.style, w.identity_pixel,
                w.identity_feature) == (10.0, 7.0, 50.0, 1.0)
        total, r = total_loss(c, s, out, cc, ss, ext, w)
        want = 10 * r.content + 7 * r.style + 50 * r.identity_pixel \
            + 1 * r.identity_feature
        assert r.total == pytest.approx(want, rel=1e-9)
        # unit terms weighted by the defaults sum to 68
        assert sum([10.0, 7.0, 50.0, 1.0]) == 68.0

    def test_gradient_wrt_output(self, rng):
        ext = builtin_extractor(0, dtype=np.float64)
        c, s = img(rng), img(rng)
        out = Tensor(img(rng).values, requires_grad=True)
        cc = Tensor(img(rng).values)
        ss = Tensor(img(rng).values)

        def fn(out):
            total, _ = total_loss(c, s, out, cc, ss, ext, LossWeights())
            return total

        assert check_gradients(fn, [out], entries=6) < 1e-4

    def test_each_term_gradient_wrt_output(self, rng):
        ext = builtin_extractor(0, dtype=np.float64)
        c = img(rng)
        out = Tensor(img(rng).values, requires_grad=True)
        assert check_gradients(
            lambda out: content_loss(out, Tensor(c.values), ext),
            [out], entries=6) < 1e-4
        assert check_gradients(
            lambda out: style_loss(out, Tensor(c.values), ext),
            [out], entries=6) < 1e-4


class TestBuiltinExtractor:
    def test_deterministic(self, rng):
        a = builtin_extractor(3)
        b = builtin_extractor(3)
        x = img(rng, 16, 16)
        for fa, fb in zip(a(x), b(x)):
            assert np.array_equal(fa.numpy(), fb.numpy())

    def test_spatial_sizes_halve(self, rng):
        ext = builtin_extractor(0)
        feats = ext(img(rng, 16, 16))
        sizes = [f.shape[:2] for f in feats]
        assert sizes == [(8, 8), (4, 4), (2, 2), (1, 1)]

    def test_distinct_images_distinct_features(self, rng):
        ext = builtin_extractor(0)
        f1 = ext(img(rng))[0].numpy()
        f2 = ext(img(rng))[0].numpy()
        assert np.abs(f1 - f2).max() > 1e-6

    def test_channel_progression(self, rng):
        ext = builtin_extractor(0)
        feats = ext(img(rng, 16, 16))
        assert [f.shape[-1] for f in feats] == [16, 32, 48, 64]


class TestExtractorSerialization:
    def test_roundtrip_identical_outputs(self, tmp_path, rng):
        from styletrans.weights import load_extractor, save_extractor
        ext = builtin_extractor(5)
        path = tmp_path / "ext.styw"
        save_extractor(path, ext, seed=5)
        back = load_extractor(path)
        x = img(rng)
        for fa, fb in zip(ext(x), back(x)):
            assert np.array_equal(fa.numpy(), fb.numpy())
        assert back.num_stages == ext.num_stages

    def test_missing_tensor_named(self):
        with pytest.raises(ExtractorError, match="stage0.0.w"):
            extractor_from_layout("conv:3:4|relu", {})

    def test_stage_count_honored(self, tmp_path):
        from styletrans.weights import load_extractor, save_extractor
        ext = builtin_extractor(0, stages=3)
        path = tmp_path / "e3.styw"
        save_extractor(path, ext)
        assert load_extractor(path).num_stages == 3

    def test_min_stage_count(self):
        with pytest.raises(ExtractorError):
            FeatureExtractor([[("relu",)]])
