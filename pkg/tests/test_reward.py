import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from restoreplan import features as F
from restoreplan.degrade import FogParams, NoiseParams, apply_fog, apply_noise, synth_depth
from restoreplan.errors import CalibrationError, ValidationError
from restoreplan.imaging import ImageGrid
from restoreplan.reward import (
    DEFAULT_SCORERS,
    Calibration,
    UnifiedReward,
    calibrate,
    raw_score_batch,
    reported_reward,
    reported_reward_from_totals,
    score_raw,
    unified_from_raw,
    unified_score,
)
from restoreplan.scenes import procedural_scene
from restoreplan.seeding import root_seed


def checkerboard(n=16):
    return ImageGrid((np.indices((n, n)).sum(0) % 2).astype(float)[:, :, None])


def smooth_image(n=24):
    yy, xx = np.mgrid[0:n, 0:n] / (n - 1)
    return ImageGrid(np.stack([0.3 + 0.4 * xx, 0.3 + 0.3 * yy, 0.5 + 0.2 * xx * yy], axis=-1))


# -- features ----------------------------------------------------------------


def test_constant_image_features():
    f = F.extract_features(ImageGrid.full(6, 6, 3, 0.5))
    assert f[0] == pytest.approx(0.5)
    assert f[1] == pytest.approx(0.0, abs=1e-12)
    assert f[2] == pytest.approx(0.0, abs=1e-12)
    assert f[3] == pytest.approx(0.5)


def test_white_dark_channel():
    assert F.extract_features(ImageGrid.full(5, 5, 3, 1.0))[3] == pytest.approx(1.0)


def test_checkerboard_sharpness_saturates():
    # Laplacian of a 0/1 checkerboard is +-4 everywhere (mirror borders), energy 16
    assert F.laplacian_energy(F.as_batch(checkerboard()))[0] == pytest.approx(16.0)
    f = F.extract_features(checkerboard())
    assert f[2] == 1.0
    g = root_seed(5).generator()
    corpus = [ImageGrid(g.random((16, 16, 3))) for _ in range(20)] + [smooth_image()]
    assert all(F.extract_features(im)[2] <= f[2] for im in corpus)


def test_immerkaer_matches_direct_correlation(rng):
    from scipy import ndimage

    y = rng.random((3, 9, 7))
    ref = np.stack([ndimage.correlate(v, F._IMMERKAER, mode="mirror") for v in y])
    assert np.allclose(F.immerkaer_response(y), ref, atol=1e-12)


def test_features_batch_independent(rng):
    batch = rng.random((5, 12, 12, 3))
    together = F.feature_batch(batch)
    alone = np.stack([F.feature_batch(batch[i:i + 1])[0] for i in range(5)])
    assert np.array_equal(together, alone)


@given(st.integers(0, 2**31))
def test_features_in_unit_range(s):
    g = np.random.default_rng(s)
    f = F.extract_features(ImageGrid(g.random((8, 10, 3)) ** g.uniform(0.2, 5)))
    assert f.shape == (8,)
    assert np.all((f >= 0) & (f <= 1))


# -- scorers -----------------------------------------------------------------


def test_constant_image_scores():
    img = ImageGrid.full(6, 6, 3, 0.4)
    assert score_raw(img, "sharpness") == pytest.approx(0.0, abs=1e-12)
    assert score_raw(img, "contrast") == pytest.approx(0.0, abs=1e-12)


def test_unknown_scorer():
    with pytest.raises(ValidationError):
        score_raw(ImageGrid.full(2, 2, 1, 0.0), "musiq")


def test_noise_lowers_noise_inverse():
    img = smooth_image()
    noisy = apply_noise(img, NoiseParams(0.05), root_seed(3).child("n"))
    assert score_raw(noisy, "noise_inverse") < score_raw(img, "noise_inverse")


def test_fog_lowers_dark_channel_inverse():
    img = procedural_scene(24, 24, root_seed(0).child("c"))
    depth = synth_depth(24, 24, "ramp", root_seed(0).child("d"))
    fogged = apply_fog(img, depth, FogParams(beta=1.0), root_seed(0).child("f"))
    assert score_raw(fogged, "dark_channel_inverse") < score_raw(img, "dark_channel_inverse")


def test_raw_scores_batch_independent(rng):
    batch = rng.random((4, 10, 10, 3))
    together = raw_score_batch(batch)
    alone = np.concatenate([raw_score_batch(batch[i:i + 1]) for i in range(4)])
    assert np.array_equal(together, alone)


# -- calibration and unified reward --------------------------------------------


def test_calibrate_hand_values():
    cal = calibrate([2.0, 4.0, 6.0], ("sharpness",))
    assert cal.mu == (4.0,)
    assert cal.sigma[0] == pytest.approx(math.sqrt(8 / 3), abs=1e-12)
    assert cal.batch_size == 3
    r = unified_from_raw(np.array([6.0]), cal)
    assert r.z[0] == pytest.approx(1.22474487, abs=1e-8)
    assert r.total == r.z[0]
    assert unified_from_raw(np.array([4.0]), cal).total == 0.0


def test_constant_column_gives_zero_z():
    cal = calibrate([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]], ("sharpness", "contrast"))
    assert cal.mu[0] == 5.0 and cal.sigma[0] == 0.0
    assert unified_from_raw(np.array([9.0, 2.0]), cal).z == (0.0, 0.0)


def test_constant_column_with_inexact_mean():
    # the float mean of three copies of 0.1 is off by one ulp
    raw = np.full((3, 1), 0.1)
    assert raw.std() != 0
    cal = calibrate(raw, ("sharpness",))
    assert cal.sigma == (0.0,)
    assert np.all(cal.zscores(raw) == 0.0)


def test_columns_calibrated_independently():
    a = calibrate([[1.0, 10.0], [3.0, 30.0]], ("sharpness", "contrast"))
    b = calibrate([[1.0, -4.0], [3.0, 7.0]], ("sharpness", "contrast"))
    assert a.mu[0] == b.mu[0] and a.sigma[0] == b.sigma[0]


def test_calibrate_too_small():
    with pytest.raises(CalibrationError):
        calibrate([[1.0, 2.0, 3.0, 4.0]])


def test_calibration_json_roundtrip(tmp_path):
    cal = calibrate(np.random.default_rng(0).random((7, 4)))
    cal.save(tmp_path / "c.json")
    assert Calibration.load(tmp_path / "c.json") == cal


def test_unified_total_is_sum_of_z(rng):
    cal = calibrate(raw_score_batch(rng.random((6, 10, 10, 3))))
    r = unified_score(ImageGrid(rng.random((10, 10, 3))), cal)
    assert abs(r.total - sum(r.z)) <= 1e-12
    assert r.k == len(DEFAULT_SCORERS)


@given(st.integers(0, 2**31), st.integers(2, 40), st.integers(1, 4))
def test_self_normalization(s, n, k):
    g = np.random.default_rng(s)
    raw = g.normal(size=(n, k)) * g.uniform(0.01, 100, k) + g.uniform(-50, 50, k)
    ids = DEFAULT_SCORERS[:k]
    cal = calibrate(raw, ids)
    z = cal.zscores(raw)
    assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
    live = np.asarray(cal.sigma) > 0
    assert np.all(np.abs(z.std(axis=0)[live] - 1) < 1e-6)


@given(st.integers(0, 2**31))
def test_affine_rescaling_preserves_ranking(s):
    g = np.random.default_rng(s)
    raw = g.normal(size=(12, 4))
    a = g.uniform(0.1, 10, 4)
    b = g.uniform(-5, 5, 4)
    s1 = calibrate(raw).zscores(raw).sum(axis=1)
    raw2 = raw * a + b
    s2 = calibrate(raw2).zscores(raw2).sum(axis=1)
    assert np.argmax(s1) == np.argmax(s2)
    assert np.allclose(s1, s2, atol=1e-9)


def test_reported_reward_examples():
    k = 4
    assert reported_reward_from_totals([0.0, 0.0], k) == 0.0
    assert reported_reward_from_totals([-k, k], k) == pytest.approx(0.0, abs=1e-15)
    assert reported_reward_from_totals([1e3 * k], k) == pytest.approx(1.0)
    assert reported_reward([UnifiedReward((0,), (1.0,), 1.0)]) == pytest.approx(math.tanh(1.0))
    with pytest.raises(ValidationError):
        reported_reward([])


@given(st.lists(st.floats(-20, 20), min_size=1, max_size=8), st.integers(0, 7), st.floats(0.01, 5))
def test_reported_reward_monotone_and_bounded(totals, j, bump):
    j %= len(totals)
    r = reported_reward_from_totals(totals, 4)
    up = list(totals)
    up[j] += bump
    assert -1 < r < 1
    assert reported_reward_from_totals(up, 4) > r
