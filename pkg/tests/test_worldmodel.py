import numpy as np
import pytest

from modrssm import nn
from modrssm.errors import ConfigError, InputError
from modrssm.nn import Tensor
from modrssm.worldmodel import (
    LatentSpec,
    ModelState,
    VariantFlags,
    WorldModel,
    WorldModelConfig,
    sample_straight_through,
    unimix_probs,
)


def mini_config(dtype="float64", **kw):
    base = dict(
        frame_size=8, channels=3, n_actions=4,
        z_spec=LatentSpec(4, 4), d_spec=LatentSpec(4, 4),
        h_dim=16, enc_channels=(4, 8), mlp_units=16, mlp_layers=1,
        n_buckets=63, dtype=dtype,
    )
    base.update(kw)
    return WorldModelConfig(**base)


def mini_model(seed=0, **kw):
    return WorldModel(np.random.default_rng(seed), mini_config(**kw))


def random_batch(rng, b=2, l=3, size=8):
    return {
        "obs": rng.random((b, l, size, size, 3)),
        "diff_obs": rng.random((b, l, size, size, 3)),
        "prev_action": rng.integers(-1, 4, (b, l)),
        "reward": rng.standard_normal((b, l)),
        "cont": (rng.random((b, l)) < 0.9).astype(np.float64),
        "is_first": np.zeros((b, l)),
    }


# ---- encode ---------------------------------------------------------------
def test_encode_distribution_invariants():
    model = mini_model()
    rng = np.random.default_rng(1)
    h = Tensor(np.zeros((2, 16)))
    obs = rng.random((2, 8, 8, 3))
    post_z, post_d = model.encode(h, obs, np.zeros_like(obs), rng)
    for latent, spec in ((post_z, model.cfg.z_spec), (post_d, model.cfg.d_spec)):
        np.testing.assert_allclose(latent.probs.data.sum(-1), 1.0, atol=1e-6)
        assert np.all(latent.probs.data >= spec.unimix / spec.n_cls - 1e-12)
        # samples are exact one-hots per category
        rows = latent.sample.data.reshape(2, spec.n_cat, spec.n_cls)
        assert np.all(rows.sum(-1) == 1.0)
        assert np.all((rows == 0.0) | (rows == 1.0))


def test_encode_zero_diff_frame_is_valid():
    model = mini_model()
    rng = np.random.default_rng(2)
    h = Tensor(np.zeros((1, 16)))
    _, post_d = model.encode(h, rng.random((1, 8, 8, 3)), np.zeros((1, 8, 8, 3)), rng)
    np.testing.assert_allclose(post_d.probs.data.sum(-1), 1.0, atol=1e-6)


# ---- straight-through sampling ---------------------------------------------
def test_point_mass_sample_deterministic():
    spec = LatentSpec(2, 5, unimix=0.0)
    probs = np.zeros((1, 2, 5))
    probs[0, :, 3] = 1.0
    sample = sample_straight_through(Tensor(probs), np.random.default_rng(0))
    expected = np.zeros((1, 10))
    expected[0, [3, 8]] = 1.0
    np.testing.assert_array_equal(sample.data, expected)


def test_sample_frequencies_match_probs():
    rng = np.random.default_rng(3)
    logits = rng.standard_normal((1, 1, 6))
    probs = np.exp(logits) / np.exp(logits).sum(-1, keepdims=True)
    draws = np.zeros(6)
    n = 10_000
    sample_rng = np.random.default_rng(4)
    for _ in range(n):
        s = sample_straight_through(Tensor(probs), sample_rng)
        draws += s.data[0]
    for k in range(6):
        p = probs[0, 0, k]
        sigma = np.sqrt(n * p * (1 - p))
        assert abs(draws[k] - n * p) <= 3 * sigma + 1


def test_straight_through_gradient_equals_probs_substitution():
    # objective J(sample) vs J(probs): gradients w.r.t. logits must agree
    rng = np.random.default_rng(5)
    logits_data = rng.standard_normal((2, 3, 4))
    mix = rng.standard_normal((2, 12))

    def grads(use_sample):
        logits = Tensor(logits_data.copy(), requires_grad=True)
        probs = unimix_probs(logits.reshape(2, 12), LatentSpec(3, 4))
        if use_sample:
            value = sample_straight_through(probs, np.random.default_rng(6))
        else:
            value = probs.reshape(2, 12)
        nn.tsum(value * Tensor(mix)).backward()
        return logits.grad.copy()

    np.testing.assert_allclose(grads(True), grads(False), rtol=1e-12, atol=1e-12)


def test_straight_through_gradient_matches_finite_differences():
    # The sample itself is piecewise constant in the logits; the estimator's
    # gradient is that of the smooth surrogate probs + frozen_offset. FD of
    # that surrogate must match the engine gradient of the sampled objective.
    rng = np.random.default_rng(7)
    logits_data = rng.standard_normal(8)
    mix = rng.standard_normal(8)
    spec = LatentSpec(2, 4)

    logits = Tensor(logits_data.reshape(1, 8).copy(), requires_grad=True)
    probs = unimix_probs(logits, spec)
    sample = sample_straight_through(probs, np.random.default_rng(8))
    offset = sample.data.reshape(1, 2, 4) - probs.data
    nn.tsum(sample * Tensor(mix.reshape(1, 8))).backward()
    analytic = logits.grad.reshape(-1)

    def surrogate(data):
        p = unimix_probs(Tensor(data.reshape(1, 8)), spec)
        shifted = (p + Tensor(offset)).reshape(1, 8)
        return float(nn.tsum(shifted * Tensor(mix.reshape(1, 8))).data)

    eps = 1e-6
    for i in range(8):
        up, down = logits_data.copy(), logits_data.copy()
        up[i] += eps
        down[i] -= eps
        fd = (surrogate(up) - surrogate(down)) / (2 * eps)
        assert abs(fd - analytic[i]) < 1e-3 * max(1.0, abs(fd), abs(analytic[i]))


# ---- sequence step -----------------------------------------------------------
def test_sequence_step_pure_and_bounded():
    model = mini_model()
    rng = np.random.default_rng(9)
    h = Tensor(rng.uniform(-0.9, 0.9, (3, 16)))
    z = Tensor(rng.random((3, 16)))
    d = Tensor(rng.random((3, 16)))
    a = Tensor(np.eye(4)[rng.integers(0, 4, 3)])
    out1 = model.sequence_step(h, z, d, a)
    out2 = model.sequence_step(h, z, d, a)
    np.testing.assert_array_equal(out1.data, out2.data)
    assert np.all(np.abs(out1.data) < 1.0)


def test_latent_difference_zero_delta_block():
    model = mini_model(modulator_enabled=False, flags=VariantFlags(latent_difference=True))
    rng = np.random.default_rng(10)
    h = Tensor(np.zeros((2, 16)))
    z = Tensor(rng.random((2, 16)))
    a = Tensor(np.eye(4)[[0, 1]])
    out = model.sequence_step(h, z, None, a, z_prev=z)
    # manual forward with an explicit all-zero difference block
    x = nn.silu(model.gru_norm(model.gru_proj(nn.concat([z, Tensor(np.zeros((2, 16))), a], axis=-1))))
    ref = model.gru(x, h)
    np.testing.assert_array_equal(out.data, ref.data)
    # and a different z_prev must change the state
    out2 = model.sequence_step(h, z, None, a, z_prev=Tensor(rng.random((2, 16))))
    assert not np.array_equal(out.data, out2.data)


def test_variant_flag_conflict_rejected():
    with pytest.raises(ConfigError):
        VariantFlags(no_modulation=True, latent_difference=True)
    with pytest.raises(ConfigError):
        mini_config(modulator_enabled=False, flags=VariantFlags(no_modulation=True))


# ---- priors, decode, heads ---------------------------------------------------
def test_priors_valid_and_pure():
    model = mini_model()
    h = Tensor(np.random.default_rng(11).standard_normal((3, 16)))
    pz1, pd1 = model.predict_priors(h)
    pz2, _ = model.predict_priors(h)
    np.testing.assert_array_equal(pz1.probs.data, pz2.probs.data)
    for latent, spec in ((pz1, model.cfg.z_spec), (pd1, model.cfg.d_spec)):
        np.testing.assert_allclose(latent.probs.data.sum(-1), 1.0, atol=1e-6)
        assert np.all(latent.probs.data >= spec.unimix / spec.n_cls - 1e-12)


def test_decode_shape_and_purity():
    model = mini_model()
    rng = np.random.default_rng(12)
    h, z, d = Tensor(rng.standard_normal((4, 16))), Tensor(rng.random((4, 16))), Tensor(rng.random((4, 16)))
    out1 = model.decode(h, z, d)["mean"]
    out2 = model.decode(h, z, d)["mean"]
    assert out1.shape == (4, 8, 8, 3)
    np.testing.assert_array_equal(out1.data, out2.data)


def test_static_split_decoder_components_sum_exactly():
    model = mini_model(flags=VariantFlags(static_split_decoder=True))
    rng = np.random.default_rng(13)
    h, z, d = Tensor(rng.standard_normal((2, 16))), Tensor(rng.random((2, 16))), Tensor(rng.random((2, 16)))
    out = model.decode(h, z, d)
    np.testing.assert_array_equal(out["mean"].data, out["static"].data + out["dynamic"].data)


def test_dual_dynamic_decoder_emits_diff_prediction():
    model = mini_model(flags=VariantFlags(dual_dynamic_decoder=True))
    rng = np.random.default_rng(14)
    h, z, d = Tensor(rng.standard_normal((2, 16))), Tensor(rng.random((2, 16))), Tensor(rng.random((2, 16)))
    out = model.decode(h, z, d)
    assert out["diff"].shape == (2, 8, 8, 3)


def test_heads_contract():
    model = mini_model()
    rng = np.random.default_rng(15)
    feat = Tensor(rng.standard_normal((5, model.state_dim)))
    r1, c1 = model.predict_heads(feat)
    r2, c2 = model.predict_heads(feat)
    np.testing.assert_array_equal(r1.data, r2.data)
    np.testing.assert_array_equal(c1.data, c2.data)
    assert np.all((c1.data >= 0) & (c1.data <= 1))
    probs = np.exp(r1.data - r1.data.max(-1, keepdims=True))
    probs /= probs.sum(-1, keepdims=True)
    np.testing.assert_allclose(probs.sum(-1), 1.0, atol=1e-6)


# ---- observe_sequence ---------------------------------------------------------
def test_observe_sequence_shapes_and_finiteness():
    model = mini_model()
    rng = np.random.default_rng(16)
    batch = random_batch(rng)
    roll = model.observe_sequence(batch, np.random.default_rng(17))
    assert roll.h.shape == (2, 3, 16)
    assert roll.post_z.shape == (2, 3, 4, 4)
    assert roll.z_sample.shape == (2, 3, 16)
    assert roll.recon.shape == (2, 3, 8, 8, 3)
    assert roll.reward_logits.shape == (2, 3, 63)
    for t in (roll.h, roll.post_z, roll.prior_z, roll.recon, roll.reward_logits, roll.cont_logit):
        assert np.all(np.isfinite(t.data))


def test_observe_sequence_single_step():
    model = mini_model()
    batch = random_batch(np.random.default_rng(18), b=2, l=1)
    roll = model.observe_sequence(batch, np.random.default_rng(19))
    assert roll.h.shape == (2, 1, 16)


def test_observe_sequence_rejects_misaligned_batch():
    model = mini_model()
    batch = random_batch(np.random.default_rng(20))
    batch["prev_action"] = batch["prev_action"][:, :2]
    with pytest.raises(InputError):
        model.observe_sequence(batch, np.random.default_rng(21))


def test_no_modulation_blocks_diff_path_into_h():
    model = mini_model(flags=VariantFlags(no_modulation=True))
    rng = np.random.default_rng(22)
    batch = random_batch(rng)
    roll1 = model.observe_sequence(batch, np.random.default_rng(23))
    perturbed = dict(batch)
    perturbed["diff_obs"] = rng.random(batch["diff_obs"].shape)
    roll2 = model.observe_sequence(perturbed, np.random.default_rng(23))
    np.testing.assert_array_equal(roll1.h.data, roll2.h.data)  # bit-identical
    # modulator posteriors still respond to the differential observation
    assert not np.array_equal(roll1.post_d.data, roll2.post_d.data)
    assert roll1.prior_d is None and roll1.post_d is not None
    # and the policy/head feature excludes the modulator entirely
    assert roll1.feat.shape[-1] == 16 + 16


# ---- imagination ---------------------------------------------------------------
def uniform_actor(feat):
    return np.full((feat.shape[0], 4), 0.25)


def test_imagine_lengths_and_determinism():
    model = mini_model()
    batch = random_batch(np.random.default_rng(24))
    roll = model.observe_sequence(batch, np.random.default_rng(25))
    start = model.start_states(roll)
    imag1 = model.imagine(start, uniform_actor, horizon=15, rng=np.random.default_rng(26))
    imag2 = model.imagine(start, uniform_actor, horizon=15, rng=np.random.default_rng(26))
    assert imag1.h.shape[0] == 16  # start plus 15 imagined states
    assert imag1.rewards.shape == (15, 6)
    np.testing.assert_array_equal(imag1.h, imag2.h)
    np.testing.assert_array_equal(imag1.actions, imag2.actions)


def test_imagine_never_touches_differencing(monkeypatch):
    from modrssm import diffmask

    def boom(*a, **k):
        raise AssertionError("differencing invoked during imagination")

    monkeypatch.setattr(diffmask, "backward_difference", boom)
    monkeypatch.setattr(diffmask, "differential_observation", boom)
    model = mini_model()
    batch = random_batch(np.random.default_rng(27))
    roll = model.observe_sequence(batch, np.random.default_rng(28))
    model.imagine(model.start_states(roll), uniform_actor, horizon=3, rng=np.random.default_rng(29))


def test_imagine_rejects_bad_horizon():
    model = mini_model()
    state = ModelState(h=np.zeros((1, 16)), z=np.zeros((1, 16)), d=np.zeros((1, 16)),
                       z_prev=np.zeros((1, 16)))
    with pytest.raises(InputError):
        model.imagine(state, uniform_actor, horizon=0, rng=np.random.default_rng(0))


def test_imagination_states_carry_no_graph():
    model = mini_model()
    batch = random_batch(np.random.default_rng(30))
    roll = model.observe_sequence(batch, np.random.default_rng(31))
    imag = model.imagine(model.start_states(roll), uniform_actor, horizon=2,
                         rng=np.random.default_rng(32))
    assert isinstance(imag.h, np.ndarray) and isinstance(imag.rewards, np.ndarray)


def test_frame_size_incompatible_with_stages_rejected():
    with pytest.raises(ConfigError):
        mini_config(frame_size=10)


def test_offset_replay_reproduces_rollout_exactly():
    model = mini_model()
    batch = random_batch(np.random.default_rng(33))
    captured: list = []
    roll = model.observe_sequence(batch, np.random.default_rng(34), capture=captured)
    replayed = model.observe_sequence(batch, np.random.default_rng(99), offsets=captured)
    np.testing.assert_array_equal(roll.recon.data, replayed.recon.data)
    np.testing.assert_array_equal(roll.h.data, replayed.h.data)
    np.testing.assert_array_equal(roll.z_sample.data, replayed.z_sample.data)
