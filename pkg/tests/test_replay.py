import numpy as np
import pytest

from modrssm import diffmask, envs, replay
from modrssm.diffmask import DiffConfig
from modrssm.errors import NotReadyError, ReplayLoadError
from modrssm.replay import ReplayBuffer, SampleConfig


def collect_episode(buf, seed, config=None, max_steps=None):
    """Plays a random episode into the buffer the same way the trainer does."""
    config = config or envs.EnvConfig(env_name="dot-chase", episode_limit=12)
    state, frame = envs.reset(config, seed)
    rng = np.random.default_rng((seed, 123))
    frames = [frame]
    diff = diffmask.rolling_differential_observation(np.stack(frames), 0, buf.diff_config)
    buf.append(frame, diff, -1, 0.0, 1, True, episode_seed=seed)
    cont, steps = 1, 0
    while cont and (max_steps is None or steps < max_steps):
        action = int(rng.integers(envs.n_actions(config)))
        state, tr = envs.step(state, action)
        frames.append(tr.observation)
        diff = diffmask.rolling_differential_observation(np.stack(frames), len(frames) - 1, buf.diff_config)
        buf.append(tr.observation, diff, action, tr.reward, tr.continue_flag, False, episode_seed=seed)
        cont, steps = tr.continue_flag, steps + 1
    return frames


def make_buffer(**kw):
    return ReplayBuffer((32, 32, 3), **kw)


def test_append_readback_bit_identical():
    buf = make_buffer()
    frames = collect_episode(buf, seed=0)
    ep = buf.episodes[0]
    np.testing.assert_array_equal(replay.decode_frame(ep.obs), np.stack(frames))


def test_sealed_episode_ends_with_continue_zero():
    buf = make_buffer()
    collect_episode(buf, seed=1)
    ep = buf.episodes[0]
    assert ep.cont[-1] == 0
    assert np.all(ep.cont[:-1] == 1)
    assert ep.is_first[0] == 1 and np.all(ep.is_first[1:] == 0)


def test_eviction_preserves_capacity():
    buf = make_buffer(capacity=30)
    for seed in range(6):  # 13 transitions per episode
        collect_episode(buf, seed=seed)
    assert len(buf) <= 30
    assert buf.episodes[0].episode_id > 0  # oldest evicted


def test_sample_shapes_and_determinism():
    buf = make_buffer()
    for seed in range(4):
        collect_episode(buf, seed=seed)
    cfg = SampleConfig(batch_size=5, batch_length=8)
    b1 = buf.sample_batch(cfg, np.random.default_rng(7))
    b2 = buf.sample_batch(cfg, np.random.default_rng(7))
    assert b1["obs"].shape == (5, 8, 32, 32, 3)
    assert b1["prev_action"].shape == (5, 8)
    for key in b1:
        np.testing.assert_array_equal(b1[key], b2[key])


def test_sample_crosses_episode_boundaries_with_flags():
    buf = make_buffer()
    for seed in range(3):
        collect_episode(buf, seed=seed)
    cfg = SampleConfig(batch_size=64, batch_length=20)
    batch = buf.sample_batch(cfg, np.random.default_rng(8))
    # windows longer than an episode (13) must contain a break marked twice:
    # cont 0 at the end of one episode, is_first 1 at the start of the next
    crossing = batch["cont"].min(axis=1) == 0
    assert crossing.any()
    rows = np.where(crossing)[0]
    for r in rows:
        t = int(np.argmin(batch["cont"][r]))
        if t + 1 < 20:
            assert batch["is_first"][r, t + 1] == 1


def test_window_starts_uniform():
    # synthetic episodes whose first pixel encodes the global step index,
    # so every window start is identifiable
    buf = ReplayBuffer((16, 16, 3))
    k = 0
    for _ in range(2):
        for t in range(13):
            frame = np.zeros((16, 16, 3), dtype=np.float32)
            frame[0, 0, 0] = np.float32(k) / np.float32(255)
            buf.append(frame, frame, -1 if t == 0 else 0, 0.0,
                       0 if t == 12 else 1, t == 0)
            k += 1
    total = len(buf)
    length = 10
    n_starts = total - length + 1
    cfg = SampleConfig(batch_size=4, batch_length=length)
    rng = np.random.default_rng(9)
    counts = np.zeros(n_starts)
    draws = 2500
    for _ in range(draws):
        batch = buf.sample_batch(cfg, rng)
        starts = np.round(batch["obs"][:, 0, 0, 0, 0] * 255).astype(int)
        np.add.at(counts, starts, 1)
    n = draws * 4
    p = 1.0 / n_starts
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 4 * sigma + 1)


def test_not_ready_errors():
    buf = make_buffer()
    with pytest.raises(NotReadyError):
        buf.sample_batch(SampleConfig(2, 4), np.random.default_rng(0))
    collect_episode(buf, seed=0)
    with pytest.raises(NotReadyError):
        buf.sample_batch(SampleConfig(2, 100), np.random.default_rng(0))


def test_persist_roundtrip_bit_exact(tmp_path):
    buf = make_buffer()
    for seed in range(3):
        collect_episode(buf, seed=seed)
    # leave a partial episode in progress
    state, frame = envs.reset(envs.EnvConfig(), 99)
    buf.append(frame, np.zeros_like(frame), -1, 0.0, 1, True, episode_seed=99)
    path = tmp_path / "buffer.bin"
    buf.save(path)
    loaded = ReplayBuffer.load(path)
    assert len(loaded) == len(buf)
    for a, b in zip(buf.episodes, loaded.episodes):
        for field in ("obs", "diff_obs", "prev_action", "reward", "cont", "is_first"):
            np.testing.assert_array_equal(getattr(a, field), getattr(b, field))
    # identical sampling after reload
    cfg = SampleConfig(3, 6)
    b1 = buf.sample_batch(cfg, np.random.default_rng(5))
    b2 = loaded.sample_batch(cfg, np.random.default_rng(5))
    for key in b1:
        np.testing.assert_array_equal(b1[key], b2[key])


def test_truncated_file_rejected(tmp_path):
    buf = make_buffer()
    collect_episode(buf, seed=0)
    path = tmp_path / "buffer.bin"
    buf.save(path)
    raw = path.read_bytes()
    (tmp_path / "cut.bin").write_bytes(raw[: len(raw) - 64])
    with pytest.raises(ReplayLoadError):
        ReplayBuffer.load(tmp_path / "cut.bin")
    (tmp_path / "garbage.bin").write_bytes(b"not a buffer\n" + raw[:100])
    with pytest.raises(ReplayLoadError):
        ReplayBuffer.load(tmp_path / "garbage.bin")


def test_stored_diff_obs_matches_recomputation():
    buf = make_buffer(diff_config=DiffConfig(dilation_radius=1))
    collect_episode(buf, seed=3)
    ep = buf.episodes[0]
    frames = replay.decode_frame(ep.obs)
    for t in range(len(ep)):
        expected = diffmask.rolling_differential_observation(frames, t, buf.diff_config)
        np.testing.assert_array_equal(replay.decode_frame(ep.diff_obs[t]), expected)
