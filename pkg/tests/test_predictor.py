"""Mask prediction from fit residuals and offset fields."""

import numpy as np
import pytest

from cmfdkit import dlf, predictor
from cmfdkit.predictor import PredictorConfig


def swap_field(h, w, dx):
    """Left half points dx columns right, right half points back; every
    round trip returns exactly to the start."""
    field = np.zeros((h, w, 2))
    field[:, :dx, 0] = dx
    field[:, dx:2 * dx, 0] = -dx
    return field


def flat_error_maps(h, w, value_per_area):
    """Error maps whose area-normalized evidence equals value_per_area
    at every scale."""
    return dlf.DlfErrorMaps(
        eps1=np.full((h, w), value_per_area * 49.0),
        eps2=np.full((h, w), value_per_area * 81.0),
        eps3=np.full((h, w), value_per_area * 121.0),
    )


def duplicated_scene(seed=0):
    """96x96 field with a translated 32x32 duplicate pair and random
    background; returns (field, error maps, source-region slice)."""
    rng = np.random.default_rng(seed)
    field = rng.uniform(-40, 40, size=(96, 96, 2))
    src = (slice(20, 52), slice(8, 40))
    dst = (slice(20, 52), slice(48, 80))
    field[src] = (40.0, 0.0)
    field[dst] = (-40.0, 0.0)
    maps = dlf.multiscale(field)
    return field, maps, src


class TestConfig:
    def test_defaults(self):
        cfg = PredictorConfig()
        assert cfg.error_scale == 0.5
        assert cfg.sharpness == 8.0
        assert cfg.min_region_area == 64
        assert cfg.consistency_tol == 2.0
        assert cfg.binarize_threshold == 0.5

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            PredictorConfig(error_scale=0.0)
        with pytest.raises(ValueError):
            PredictorConfig(sharpness=-1.0)


class TestConsistency:
    def test_swap_field_round_trips(self):
        field = swap_field(16, 32, 8)
        ok = predictor.consistency_map(field, tol=2.0)
        assert ok[:, :16].all()

    def test_constant_field_does_not_round_trip(self):
        # a single global translation doubles on the way back
        field = np.full((16, 16, 2), 10.0)
        ok = predictor.consistency_map(field, tol=2.0)
        assert not ok.any()


class TestPredict:
    def test_sigmoid_center_probability_half(self):
        h, w = 16, 32
        field = swap_field(h, w, 16)
        maps = flat_error_maps(h, w, 0.5)  # evidence == error_scale
        cfg = PredictorConfig(min_region_area=4)
        m = predictor.predict(maps, field, maps, field, cfg)
        assert np.allclose(m, 0.5)

    def test_duplicate_region_high_background_low(self):
        field, maps, src = duplicated_scene()
        cfg = PredictorConfig()
        m = predictor.predict(maps, field, maps, field, cfg)
        inner = m[25:47, 13:35]  # source region minus a 5 px band
        assert inner.min() >= 0.9
        bg = np.ones(m.shape, dtype=bool)
        bg[12:60, 0:88] = False  # generous margin around both regions
        assert m[bg].max() <= 0.1

    def test_random_offsets_mostly_zero_after_cleanup(self):
        rng = np.random.default_rng(5)
        field = rng.uniform(-40, 40, size=(96, 96, 2))
        maps = dlf.multiscale(field)
        cfg = PredictorConfig()
        m = predictor.predict(maps, field, maps, field, cfg)
        assert (m == 0).mean() >= 0.99

    def test_monotone_in_error_maps(self):
        field, maps, _ = duplicated_scene(seed=3)
        half = dlf.DlfErrorMaps(eps1=maps.eps1 * 0.5, eps2=maps.eps2 * 0.5,
                                eps3=maps.eps3 * 0.5)
        cfg = PredictorConfig()
        a = predictor.predict(maps, field, maps, field, cfg)
        b = predictor.predict(half, field, half, field, cfg)
        assert (b >= a - 1e-12).all()

    def test_inconsistent_evidence_is_ignored(self):
        # field1 round-trips but carries high error; field2 has zero error
        # but never round-trips: the mask must stay low
        h, w = 16, 32
        f1 = swap_field(h, w, 16)
        m1 = flat_error_maps(h, w, 50.0)
        f2 = np.full((h, w, 2), 10.0)
        m2 = flat_error_maps(h, w, 0.0)
        cfg = PredictorConfig(min_region_area=1)
        m = predictor.predict(m1, f1, m2, f2, cfg)
        assert m.max() <= 0.01


class TestRefineMax:
    def test_zero_is_identity(self):
        rng = np.random.default_rng(0)
        m1 = rng.uniform(0, 1, (9, 7))
        assert np.array_equal(predictor.refine_max(m1, np.zeros((9, 7))), m1)

    def test_equal_masks(self):
        m = np.full((4, 4), 0.3)
        assert np.array_equal(predictor.refine_max(m, m), m)

    def test_union_of_indicators(self):
        a = np.zeros((6, 6))
        b = np.zeros((6, 6))
        a[:3] = 1.0
        b[:, :3] = 1.0
        u = predictor.refine_max(a, b)
        assert u.sum() == (a + b > 0).sum()

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            predictor.refine_max(np.zeros((4, 4)), np.zeros((4, 5)))


class TestBinarize:
    def test_threshold_convention(self):
        m = np.array([[0.49, 0.51, 0.5]])
        out = predictor.binarize(m)
        assert out.tolist() == [[0, 1, 1]]

    def test_all_zero(self):
        assert predictor.binarize(np.zeros((5, 5))).sum() == 0

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        m = rng.uniform(0, 1, (8, 8))
        once = predictor.binarize(m)
        again = predictor.binarize(once.astype(np.float64))
        assert np.array_equal(once, again)


class TestCleanup:
    def test_small_speckles_removed(self):
        m = np.zeros((32, 32))
        m[4, 4] = 1.0
        m[20:28, 20:28] = 1.0
        out = predictor.cleanup(m, min_area=9, threshold=0.5)
        assert out[4, 4] == 0.0
        assert (out[20:28, 20:28] == 1.0).all()

    def test_small_holes_filled(self):
        m = np.ones((24, 24))
        m[10:12, 10:12] = 0.0
        out = predictor.cleanup(m, min_area=9, threshold=0.5)
        assert (out[10:12, 10:12] >= 0.5).all()

    def test_large_holes_kept(self):
        m = np.ones((40, 40))
        m[10:30, 10:30] = 0.0
        out = predictor.cleanup(m, min_area=9, threshold=0.5)
        assert (out[10:30, 10:30] == 0.0).all()
