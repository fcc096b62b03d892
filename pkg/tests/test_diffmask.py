import numpy as np
import pytest

from modrssm import diffmask
from modrssm.diffmask import DiffConfig
from modrssm.errors import ConfigError, InputError


# ---- brute-force per-pixel oracles ------------------------------------
def oracle_backward(a, b, eps):
    h, w, c = a.shape
    out = np.zeros((h, w), dtype=np.uint8)
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for k in range(c):
                d = float(a[i, j, k]) - float(b[i, j, k])
                acc += d * d
            out[i, j] = 1 if acc ** 0.5 > eps else 0
    return out


def oracle_dilate(mask, radius):
    h, w = mask.shape
    out = np.zeros_like(mask)
    for i in range(h):
        for j in range(w):
            lo_i, hi_i = max(i - radius, 0), min(i + radius + 1, h)
            lo_j, hi_j = max(j - radius, 0), min(j + radius + 1, w)
            out[i, j] = 1 if mask[lo_i:hi_i, lo_j:hi_j].any() else 0
    return out


def oracle_moving_average(frames, index, cfg):
    window = min(index, cfg.window_len)
    avg = np.zeros(frames[0].shape, dtype=np.float64)
    for k in range(index - window, index):
        avg += frames[k]
    avg /= window
    h, w, c = frames[0].shape
    out = np.zeros((h, w), dtype=np.uint8)
    for i in range(h):
        for j in range(w):
            acc = sum((float(frames[index, i, j, k]) - avg[i, j, k]) ** 2 for k in range(c))
            out[i, j] = 1 if acc ** 0.5 > cfg.epsilon else 0
    return out


# ---- backward difference -----------------------------------------------
def test_identical_frames_zero_mask():
    f = np.random.default_rng(0).random((8, 8, 3)).astype(np.float32)
    assert diffmask.backward_difference(f, f.copy(), 0.001).sum() == 0


def test_single_pixel_change_detected_exactly():
    a = np.zeros((8, 8, 3), dtype=np.float32)
    b = a.copy()
    b[3, 5, 1] = 0.5
    mask = diffmask.backward_difference(b, a, 0.001)
    expected = np.zeros((8, 8), dtype=np.uint8)
    expected[3, 5] = 1
    np.testing.assert_array_equal(mask, expected)


def test_backward_difference_matches_oracle_on_random_pairs():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a = rng.random((8, 8, 3)).astype(np.float32)
        b = np.where(rng.random((8, 8, 3)) < 0.5, a, rng.random((8, 8, 3)).astype(np.float32))
        np.testing.assert_array_equal(
            diffmask.backward_difference(a, b, 0.001), oracle_backward(a, b, 0.001)
        )


def test_backward_difference_symmetric():
    rng = np.random.default_rng(2)
    a, b = rng.random((6, 6, 3)), rng.random((6, 6, 3))
    np.testing.assert_array_equal(
        diffmask.backward_difference(a, b, 0.01), diffmask.backward_difference(b, a, 0.01)
    )


def test_dimension_mismatch_rejected():
    with pytest.raises(InputError):
        diffmask.backward_difference(np.zeros((4, 4, 3)), np.zeros((5, 5, 3)), 0.001)


# ---- dilation ------------------------------------------------------------
def test_dilate_zero_mask_and_radius_zero():
    mask = np.zeros((6, 6), dtype=np.uint8)
    np.testing.assert_array_equal(diffmask.dilate(mask, 2), mask)
    one = np.zeros((6, 6), dtype=np.uint8)
    one[2, 2] = 1
    np.testing.assert_array_equal(diffmask.dilate(one, 0), one)


def test_dilate_center_and_corner():
    mask = np.zeros((7, 7), dtype=np.uint8)
    mask[3, 3] = 1
    out = diffmask.dilate(mask, 1)
    assert out.sum() == 9
    assert out[2:5, 2:5].all()
    corner = np.zeros((7, 7), dtype=np.uint8)
    corner[0, 0] = 1
    out = diffmask.dilate(corner, 1)
    assert out.sum() == 4
    assert out[:2, :2].all()


def test_dilate_matches_neighbourhood_oracle():
    rng = np.random.default_rng(3)
    for radius in (0, 1, 2, 3):
        for _ in range(20):
            mask = (rng.random((9, 9)) < 0.1).astype(np.uint8)
            np.testing.assert_array_equal(diffmask.dilate(mask, radius), oracle_dilate(mask, radius))


def test_dilate_monotone_and_extensive():
    rng = np.random.default_rng(4)
    small = (rng.random((10, 10)) < 0.05).astype(np.uint8)
    big = (small | (rng.random((10, 10)) < 0.05)).astype(np.uint8)
    ds, db = diffmask.dilate(small, 1), diffmask.dilate(big, 1)
    assert np.all(ds <= db)
    assert np.all(small <= ds)


# ---- differential observation ---------------------------------------------
def test_static_sequence_gives_zero_differential():
    f = np.random.default_rng(5).random((1, 8, 8, 3)).astype(np.float32)
    frames = np.repeat(f, 2, axis=0)
    out = diffmask.differential_observation(frames, 1, DiffConfig())
    np.testing.assert_array_equal(out, np.zeros_like(frames[0]))


def test_moving_block_masks_to_dilated_union():
    n = 16
    frames = np.zeros((2, n, n, 3), dtype=np.float32)
    frames[0, 4:7, 4:7, 0] = 1.0
    frames[1, 4:7, 6:9, 0] = 1.0  # block moved right by 2
    cfg = DiffConfig(dilation_radius=1)
    out = diffmask.differential_observation(frames, 1, cfg)
    # union of footprints: rows 4..6, cols 4..8; changed pixels cols 4..5 and 7..8
    changed = np.zeros((n, n), dtype=np.uint8)
    changed[4:7, 4:6] = 1
    changed[4:7, 7:9] = 1
    region = oracle_dilate(changed, 1).astype(bool)
    np.testing.assert_array_equal(out[region], frames[1][region])
    assert np.all(out[~region] == 0)


def test_differential_observation_bounds():
    rng = np.random.default_rng(6)
    frames = rng.random((5, 8, 8, 3)).astype(np.float32)
    out = diffmask.differential_observation(frames, 3, DiffConfig())
    assert np.all(out >= 0) and np.all(out <= frames[3])


def test_bootstrap_and_history_errors():
    frames = np.random.default_rng(7).random((4, 8, 8, 3)).astype(np.float32)
    np.testing.assert_array_equal(
        diffmask.differential_observation(frames, 0, DiffConfig()), np.zeros_like(frames[0])
    )
    with pytest.raises(InputError):
        diffmask.differential_observation(frames, 1, DiffConfig(interval=2))
    with pytest.raises(InputError):
        diffmask.differential_observation(frames, 9, DiffConfig())


# ---- moving average -----------------------------------------------------
def test_constant_sequence_moving_average_zero():
    frames = np.ones((5, 6, 6, 3), dtype=np.float32) * 0.25
    assert diffmask.moving_average_mask(frames, 4, DiffConfig(strategy="moving_average")).sum() == 0


def test_moving_average_short_history_uses_available_frames():
    rng = np.random.default_rng(8)
    frames = rng.random((6, 6, 6, 3)).astype(np.float32)
    cfg = DiffConfig(strategy="moving_average", window_len=4)
    for index in (1, 2, 3):  # fewer prior frames than the window
        np.testing.assert_array_equal(
            diffmask.moving_average_mask(frames, index, cfg),
            oracle_moving_average(frames, index, cfg),
        )


def test_moving_average_matches_oracle_random():
    rng = np.random.default_rng(9)
    cfg = DiffConfig(strategy="moving_average", window_len=3)
    for _ in range(20):
        frames = rng.random((7, 8, 8, 3)).astype(np.float32)
        for index in (1, 4, 6):
            np.testing.assert_array_equal(
                diffmask.moving_average_mask(frames, index, cfg),
                oracle_moving_average(frames, index, cfg),
            )


def test_moving_average_requires_history():
    frames = np.zeros((3, 4, 4, 3), dtype=np.float32)
    with pytest.raises(InputError):
        diffmask.moving_average_mask(frames, 0, DiffConfig(strategy="moving_average"))


# ---- multi-frame logical ---------------------------------------------------
def test_logical_and_identity_and_absorbing():
    rng = np.random.default_rng(10)
    base = rng.random((8, 8, 3)).astype(np.float32)
    moved = base + 0.5  # everything changed
    frames = np.stack([base, moved, base, moved])
    cfg = DiffConfig(strategy="multiframe_logical", window_delta=1)
    all_one = diffmask.multiframe_logical_mask(frames, 3, cfg)
    np.testing.assert_array_equal(all_one, np.ones((8, 8), dtype=np.uint8))
    frames_static = np.stack([base, base, base, base])
    np.testing.assert_array_equal(
        diffmask.multiframe_logical_mask(frames_static, 3, cfg), np.zeros((8, 8), dtype=np.uint8)
    )


def test_logical_matches_elementwise_min_oracle():
    rng = np.random.default_rng(11)
    cfg = DiffConfig(strategy="multiframe_logical", window_delta=2)
    for _ in range(20):
        frames = np.where(rng.random((6, 8, 8, 3)) < 0.6, 0.0, 1.0).astype(np.float32)
        got = diffmask.multiframe_logical_mask(frames, 5, cfg)
        m_now = oracle_backward(frames[5], frames[4], cfg.epsilon)
        m_old = oracle_backward(frames[3], frames[2], cfg.epsilon)
        np.testing.assert_array_equal(got, np.minimum(m_now, m_old))


def test_logical_requires_history():
    frames = np.zeros((3, 4, 4, 3), dtype=np.float32)
    with pytest.raises(InputError):
        diffmask.multiframe_logical_mask(frames, 1, DiffConfig(strategy="multiframe_logical"))


# ---- config and mask binarity ----------------------------------------------
def test_config_validation():
    with pytest.raises(ConfigError):
        DiffConfig(epsilon=0.0)
    with pytest.raises(ConfigError):
        DiffConfig(interval=0)
    with pytest.raises(ConfigError):
        DiffConfig(dilation_radius=-1)
    with pytest.raises(ConfigError):
        DiffConfig(strategy="optical-flow")


def test_masks_strictly_binary_and_sensitive():
    rng = np.random.default_rng(12)
    a = rng.random((8, 8, 3)).astype(np.float32)
    b = a.copy()
    b[0, 0, 0] += np.float32(0.01)
    mask = diffmask.backward_difference(a, b, 1e-6)
    assert set(np.unique(mask)) <= {0, 1}
    assert mask[0, 0] == 1  # any representable change exceeds a tiny epsilon


def test_rolling_variant_degrades_gracefully():
    rng = np.random.default_rng(13)
    frames = rng.random((5, 8, 8, 3)).astype(np.float32)
    cfg = DiffConfig(strategy="multiframe_logical", window_delta=2)
    np.testing.assert_array_equal(
        diffmask.rolling_differential_observation(frames, 0, cfg), np.zeros_like(frames[0])
    )
    # early steps fall back to the plain backward mask
    early = diffmask.rolling_differential_observation(frames, 1, cfg)
    ref_mask = diffmask.dilate(diffmask.backward_difference(frames[1], frames[0], cfg.epsilon), 1)
    np.testing.assert_array_equal(early, frames[1] * ref_mask[..., None])
    # and once history exists it matches the strict operation
    late = diffmask.rolling_differential_observation(frames, 4, cfg)
    np.testing.assert_array_equal(late, diffmask.differential_observation(frames, 4, cfg))
