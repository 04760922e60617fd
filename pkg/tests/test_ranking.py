"""Offset fusion, feature warping, rank maps, labels, scorer training."""

import numpy as np
import pytest

from cmfdkit import dlf, losses, ranking
from cmfdkit.ranking import ScorerParams


def swap_field(h, w, dx):
    field = np.zeros((h, w, 2))
    field[:, :dx, 0] = dx
    field[:, dx:2 * dx, 0] = -dx
    return field


class TestFuseOffsets:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.f1 = rng.uniform(-5, 5, (8, 8, 2))
        self.f2 = rng.uniform(-5, 5, (8, 8, 2))

    def test_full_mask_takes_first(self):
        out = ranking.fuse_offsets(self.f1, self.f2, np.ones((8, 8)))
        # pixels whose correspondence exits the image still fall back
        jj, ii = np.meshgrid(np.arange(8), np.arange(8))
        tx = np.floor(jj + self.f1[:, :, 0] + 0.5)
        ty = np.floor(ii + self.f1[:, :, 1] + 0.5)
        inside = (tx >= 0) & (tx < 8) & (ty >= 0) & (ty < 8)
        assert np.array_equal(out[inside], self.f1[inside])
        assert np.array_equal(out[~inside], self.f2[~inside])

    def test_empty_mask_takes_second(self):
        out = ranking.fuse_offsets(self.f1, self.f2, np.zeros((8, 8)))
        assert np.array_equal(out, self.f2)

    def test_match_landing_outside_mask_takes_second(self):
        mb = np.zeros((8, 8))
        mb[4, 4] = 1
        mb[4, 6] = 1
        f1 = np.zeros((8, 8, 2))
        f1[4, 4] = (2.0, 0.0)   # lands on (4, 6): inside mask
        f1[4, 6] = (1.0, 0.0)   # lands on (4, 7): outside mask
        f2 = np.full((8, 8, 2), 9.0)
        out = ranking.fuse_offsets(f1, f2, mb)
        assert np.array_equal(out[4, 4], (2.0, 0.0))
        assert np.array_equal(out[4, 6], (9.0, 9.0))


class TestWarp:
    def test_zero_field_identity(self):
        rng = np.random.default_rng(1)
        fm = rng.uniform(size=(6, 7, 3))
        out = ranking.warp_features(fm, np.zeros((6, 7, 2)))
        assert np.allclose(out, fm, atol=1e-15)

    def test_integer_shift_with_clamp(self):
        fm = np.arange(25, dtype=np.float64).reshape(5, 5)
        field = np.zeros((5, 5, 2))
        field[:, :, 0] = 2.0
        out = ranking.warp_features(fm, field)
        assert np.array_equal(out[:, :3], fm[:, 2:])
        assert np.array_equal(out[:, 3:], fm[:, [4, 4]])

    def test_convex_hull_of_neighbors(self):
        rng = np.random.default_rng(2)
        fm = rng.uniform(size=(9, 9))
        field = rng.uniform(-3, 3, (9, 9, 2))
        out = ranking.warp_features(fm, field)
        assert out.min() >= fm.min() - 1e-12
        assert out.max() <= fm.max() + 1e-12


class TestBuildFeatures:
    def test_mask_gating_zeroes_background(self):
        rng = np.random.default_rng(3)
        img = rng.uniform(size=(16, 16, 3))
        maps = dlf.multiscale(rng.uniform(-10, 10, (16, 16, 2)))
        field = rng.uniform(-3, 3, (16, 16, 2))
        mask = np.zeros((16, 16))
        mask[4:8, 4:8] = 1.0
        feats = ranking.build_features(img, maps, field, mask)
        assert feats.shape == (16, 16, ranking.FEATURE_DIM)
        assert (feats[mask == 0] == 0).all()

    def test_constant_image_kills_texture_channels(self):
        img = np.full((16, 16, 3), 0.4)
        rng = np.random.default_rng(4)
        maps = dlf.multiscale(rng.uniform(-10, 10, (16, 16, 2)))
        feats = ranking.build_features(img, maps, np.zeros((16, 16, 2)),
                                       np.ones((16, 16)))
        assert np.abs(feats[:, :, 0]).max() <= 1e-12  # variance
        assert np.abs(feats[:, :, 1]).max() <= 1e-12  # laplacian energy


class TestScoreMap:
    def test_zero_params_half(self):
        feats = np.random.default_rng(5).uniform(size=(4, 4, 8))
        sf = ranking.score_map(feats, ranking.zero_params())
        assert np.allclose(sf, 0.5)

    def test_sigmoid_saturation(self):
        feats = np.ones((2, 2, 1)) * 50.0
        sf = ranking.score_map(feats, ScorerParams(np.ones(1), 0.0))
        assert sf.min() > 1.0 - 1e-12

    def test_values_in_unit_interval(self):
        rng = np.random.default_rng(6)
        feats = rng.standard_normal((8, 8, 8))
        sf = ranking.score_map(feats, ScorerParams(rng.standard_normal(8),
                                                   0.3))
        assert sf.min() > 0.0 and sf.max() < 1.0


class TestRankMap:
    def test_constant_scores_rank_zero(self):
        sf = np.full((8, 8), 0.7)
        field = np.random.default_rng(7).uniform(-3, 3, (8, 8, 2))
        assert np.abs(ranking.rank_map(sf, field)).max() <= 1e-12

    def test_source_target_signs(self):
        sf = np.zeros((8, 16))
        sf[:, :8] = 1.0
        sr = ranking.rank_map(sf, swap_field(8, 16, 8))
        assert np.allclose(sr[:, :8], 1.0)
        assert np.allclose(sr[:, 8:], -1.0)

    def test_antisymmetry_on_integer_pairs(self):
        rng = np.random.default_rng(8)
        sf = rng.uniform(size=(10, 20))
        field = swap_field(10, 20, 10)
        sr = ranking.rank_map(sf, field)
        assert np.allclose(sr[:, :10], -sr[:, 10:], atol=1e-12)


class TestThreeChannel:
    def test_empty_mask_all_background(self):
        sr = np.random.default_rng(9).standard_normal((5, 5))
        labels = ranking.three_channel(sr, np.zeros((5, 5)))
        assert (labels == ranking.LABEL_BACKGROUND).all()

    def test_sign_mapping_and_tie(self):
        sr = np.array([[1.0, -1.0, 0.0]])
        labels = ranking.three_channel(sr, np.ones((1, 3)))
        assert labels.tolist() == [[ranking.LABEL_SOURCE,
                                    ranking.LABEL_TARGET,
                                    ranking.LABEL_TARGET]]

    def test_render_colors_and_roundtrip(self, tmp_path):
        labels = np.array([[0, 1], [2, 0]], dtype=np.uint8)
        rgb = ranking.render_three_channel(labels,
                                           str(tmp_path / "mc.png"))
        assert rgb[0, 0].tolist() == [0.0, 0.0, 1.0]  # background blue
        assert rgb[0, 1].tolist() == [0.0, 1.0, 0.0]  # source green
        assert rgb[1, 0].tolist() == [1.0, 0.0, 0.0]  # target red
        from cmfdkit.imagecore import load_image
        back = ranking.labels_from_render(load_image(str(tmp_path / "mc.png")))
        assert np.array_equal(back, labels)


def toy_instance(h=12, w=24, noise=0.0, seed=0):
    """Separable fixture: one feature channel is +1 on the source half,
    -1 on the target half; halves are exact integer matches."""
    rng = np.random.default_rng(seed)
    feats = np.zeros((h, w, 2))
    feats[:, :w // 2, 0] = 1.0
    feats[:, w // 2:, 0] = -1.0
    feats += noise * rng.standard_normal(feats.shape)
    field = swap_field(h, w, w // 2)
    labels = np.full((h, w), ranking.LABEL_SOURCE, dtype=np.uint8)
    labels[:, w // 2:] = ranking.LABEL_TARGET
    gate = np.ones((h, w))
    return feats, field, labels, gate


class TestScorerLoss:
    def test_gradient_matches_fd(self):
        feats, field, labels, gate = toy_instance(noise=0.3, seed=3)
        weight = losses.make_weight(labels)

        def f(x):
            p = ScorerParams(x[:-1], float(x[-1]))
            loss, gw, gb = ranking.scorer_loss(p, feats, field, weight, gate)
            return loss, np.concatenate([gw, [gb]])

        x0 = np.array([0.3, -0.2, 0.1])
        assert losses.grad_check(f, x0) <= 1e-4


class TestTrainScorer:
    def test_separable_converges(self):
        batches = [toy_instance(seed=s, noise=0.05) for s in range(3)]
        cfg = ranking.TrainConfig(learning_rate=5e-3, epochs=200)
        params, trace = ranking.train_scorer(batches, cfg)
        feats, field, labels, gate = toy_instance(seed=9, noise=0.05)
        sr = ranking.rank_map(ranking.score_map(feats, params), field)
        pred = ranking.three_channel(sr, gate)
        acc = (pred == labels).mean()
        assert acc >= 0.99

    def test_zero_learning_rate_keeps_params(self):
        batches = [toy_instance()]
        start = ScorerParams(np.array([0.5, -0.5]), 0.25)
        params, _ = ranking.train_scorer(
            batches, ranking.TrainConfig(learning_rate=0.0, epochs=5),
            params=start)
        assert np.array_equal(params.weights, start.weights)
        assert params.bias == start.bias

    def test_loss_trace_non_increasing_small_step(self):
        batches = [toy_instance(seed=1, noise=0.1)]
        cfg = ranking.TrainConfig(learning_rate=1e-4, epochs=50)
        _, trace = ranking.train_scorer(batches, cfg)
        diffs = np.diff(trace)
        assert (diffs <= 1e-9).all()


class TestParamsIO:
    def test_roundtrip(self, tmp_path):
        p = ScorerParams(np.array([1.5, -2.25, 0.125]), 0.75)
        path = str(tmp_path / "scorer.tsr")
        ranking.save_params(p, path)
        q = ranking.load_params(path)
        assert np.allclose(q.weights, p.weights, atol=1e-7)
        assert abs(q.bias - p.bias) < 1e-7

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            ScorerParams(np.array([np.nan]), 0.0)
