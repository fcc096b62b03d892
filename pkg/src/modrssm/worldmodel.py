"""Recurrent state-space world model with motion modulators.

Two convolutional encoders produce stacked categorical posteriors: one
from the full frame (the stochastic representation z), one from the
differential observation (the dynamic modulator d). A GRU advances the
deterministic state h from the previous samples and action; MLP heads
predict prior distributions for both latents from h alone, and reward /
continue estimates from the concatenated model state. A transposed-conv
decoder reconstructs the frame from (h, z, d).

Structural variants:

* ``no_modulation``   - d is still encoded and still feeds the decoder,
  but is removed from the GRU input, the reward/continue heads, the
  policy state, and the KL constraints (no d prior head exists).
* ``latent_difference`` - no modulator lane at all; the GRU instead
  receives the difference between consecutive z samples.
* ``dual_dynamic_decoder`` - an extra decoder predicts the differential
  observation from (h, d).
* ``static_split_decoder`` - the reconstruction is the sum of a dynamic
  component decoded from (h, z, d) and a static component from (h, z).

Disabling ``modulator_enabled`` in the config removes the modulator lane
entirely (the plain-RSSM baseline used for the high-dimensional-z
comparison).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError, InputError
from .losses import BucketGrid, decode_bucket_probs
from .nn import Tensor


@dataclass(frozen=True)
class LatentSpec:
    n_cat: int = 32
    n_cls: int = 32
    unimix: float = 0.01

    def __post_init__(self):
        if self.n_cat < 1 or self.n_cls < 1:
            raise ConfigError("latent spec needs n_cat, n_cls >= 1")
        if not 0.0 <= self.unimix < 1.0:
            raise ConfigError(f"unimix must lie in [0, 1), got {self.unimix}")

    @property
    def flat(self) -> int:
        return self.n_cat * self.n_cls


@dataclass(frozen=True)
class VariantFlags:
    no_modulation: bool = False
    latent_difference: bool = False
    dual_dynamic_decoder: bool = False
    static_split_decoder: bool = False

    def __post_init__(self):
        if self.no_modulation and self.latent_difference:
            raise ConfigError("no_modulation and latent_difference are mutually exclusive")


@dataclass(frozen=True)
class WorldModelConfig:
    frame_size: int = 32
    channels: int = 3
    n_actions: int = 5
    z_spec: LatentSpec = field(default_factory=LatentSpec)
    d_spec: LatentSpec = field(default_factory=LatentSpec)
    h_dim: int = 256
    enc_channels: tuple[int, ...] = (32, 64, 128, 256)
    mlp_units: int = 256
    mlp_layers: int = 2
    n_buckets: int = 255
    modulator_enabled: bool = True
    flags: VariantFlags = field(default_factory=VariantFlags)
    dtype: str = "float32"

    def __post_init__(self):
        stages = len(self.enc_channels)
        if self.frame_size % (1 << stages) != 0 or self.frame_size < (1 << stages):
            raise ConfigError(
                f"frame_size {self.frame_size} incompatible with {stages} stride-2 conv stages"
            )
        if not self.modulator_enabled and (
            self.flags.no_modulation or self.flags.dual_dynamic_decoder or self.flags.static_split_decoder
        ):
            raise ConfigError("modulator-dependent variant flags require modulator_enabled")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype).type


@dataclass
class CategoricalLatent:
    """Stacked categorical: probs (B, n_cat, n_cls) and a flat straight-
    through one-hot sample (B, n_cat * n_cls)."""

    probs: Tensor
    sample: Tensor


@dataclass
class ModelState:
    """Concentration state fed to the decoder, heads, actor and critic."""

    h: np.ndarray
    z: np.ndarray
    d: np.ndarray | None
    z_prev: np.ndarray | None = None  # used by the latent-difference variant


@dataclass
class Rollout:
    """Teacher-forced posterior rollout over a (B, L) batch."""

    h: Tensor                       # (B, L, h_dim)
    post_z: Tensor                  # (B, L, n_cat, n_cls) probs
    prior_z: Tensor
    z_sample: Tensor                # (B, L, z_flat)
    post_d: Tensor | None
    prior_d: Tensor | None
    d_sample: Tensor | None
    feat: Tensor                    # (B*L, state_dim) policy/head features
    recon: Tensor                   # (B, L, H, W, C)
    recon_static: Tensor | None
    recon_dynamic: Tensor | None
    diff_recon: Tensor | None       # (B, L, H, W, C), dual-dynamic-decoder variant
    reward_logits: Tensor           # (B, L, n_buckets)
    cont_logit: Tensor              # (B, L)
    z_prev_sample: np.ndarray       # (B, L, z_flat) previous-step samples, zeros at resets


def unimix_probs(logits: Tensor, spec: LatentSpec) -> Tensor:
    """Softmax over classes mixed with a uniform floor, reshaped to
    (B, n_cat, n_cls)."""
    shaped = logits.reshape(-1, spec.n_cat, spec.n_cls)
    probs = nn.softmax(shaped, axis=-1)
    if spec.unimix:
        probs = probs * (1.0 - spec.unimix) + spec.unimix / spec.n_cls
    return probs


def sample_straight_through(probs: Tensor, rng: np.random.Generator) -> Tensor:
    """One-hot sample per category whose gradient is that of the probs
    (sample = probs - sg(probs) + sg(one_hot))."""
    p = probs.data
    n_cls = p.shape[-1]
    cum = np.cumsum(p, axis=-1)
    draws = rng.random(p.shape[:-1] + (1,))
    idx = np.minimum((cum < draws).sum(axis=-1), n_cls - 1)
    onehot = np.eye(n_cls, dtype=p.dtype)[idx]
    st = probs - nn.stop_gradient(probs) + Tensor(onehot)
    return st.reshape(p.shape[0], -1)


class ConvTrunk:
    """Stride-2 conv stages with channel LayerNorm + SiLU, flattened.
    3x3 kernels: cheaper than 4x4 and stride-2 halving still lands on
    even sizes with pad 1."""

    def __init__(self, rng, frame_size: int, channels: int, widths: tuple[int, ...], dtype):
        self.stages = []
        c_in = channels
        for c_out in widths:
            conv = nn.Conv2d(rng, c_in, c_out, kernel=3, dtype=dtype)
            norm = nn.LayerNorm(c_out, dtype=dtype)
            self.stages.append((conv, norm))
            c_in = c_out
        self.out_hw = frame_size >> len(widths)
        self.out_dim = self.out_hw * self.out_hw * widths[-1]

    def __call__(self, frames: Tensor) -> Tensor:
        x = frames
        for conv, norm in self.stages:
            x = nn.silu(norm(conv(x)))
        return x.reshape(x.shape[0], -1)

    def params(self):
        out = {}
        for i, (conv, norm) in enumerate(self.stages):
            out.update(nn.prefix_params(f"c{i}", conv.params()))
            out.update(nn.prefix_params(f"n{i}", norm.params()))
        return out


class ConvDecoder:
    """Linear projection to a small grid, then mirrored transposed convs."""

    def __init__(self, rng, n_in: int, frame_size: int, channels: int, widths: tuple[int, ...], dtype):
        self.start_hw = frame_size >> len(widths)
        self.start_c = widths[-1]
        self.proj = nn.Linear(rng, n_in, self.start_hw * self.start_hw * self.start_c, dtype=dtype)
        self.stages = []
        c_in = self.start_c
        for c_out in list(reversed(widths[:-1])) + [channels]:
            last = c_out == channels
            conv = nn.ConvTranspose2d(rng, c_in, c_out, dtype=dtype)
            norm = None if last else nn.LayerNorm(c_out, dtype=dtype)
            self.stages.append((conv, norm))
            c_in = c_out

    def __call__(self, state: Tensor) -> Tensor:
        x = self.proj(state).reshape(-1, self.start_hw, self.start_hw, self.start_c)
        for conv, norm in self.stages:
            x = conv(x)
            if norm is not None:
                x = nn.silu(norm(x))
        return x

    def params(self):
        out = nn.prefix_params("proj", self.proj.params())
        for i, (conv, norm) in enumerate(self.stages):
            out.update(nn.prefix_params(f"c{i}", conv.params()))
            if norm is not None:
                out.update(nn.prefix_params(f"n{i}", norm.params()))
        return out


class WorldModel:
    def __init__(self, rng: np.random.Generator, cfg: WorldModelConfig):
        self.cfg = cfg
        dtype = cfg.np_dtype
        flags = cfg.flags
        self.grid = BucketGrid(cfg.n_buckets)

        self.d_in_rssm = cfg.modulator_enabled and not flags.no_modulation
        z_flat, d_flat = cfg.z_spec.flat, cfg.d_spec.flat
        self.state_dim = cfg.h_dim + z_flat + (d_flat if self.d_in_rssm else 0)
        dec_in = cfg.h_dim + z_flat + (d_flat if cfg.modulator_enabled else 0)

        self.enc_z = ConvTrunk(rng, cfg.frame_size, cfg.channels, cfg.enc_channels, dtype)
        self.head_z = nn.Linear(rng, self.enc_z.out_dim + cfg.h_dim, z_flat, dtype=dtype)
        if cfg.modulator_enabled:
            self.enc_d = ConvTrunk(rng, cfg.frame_size, cfg.channels, cfg.enc_channels, dtype)
            self.head_d = nn.Linear(rng, self.enc_d.out_dim + cfg.h_dim, d_flat, dtype=dtype)

        gru_in = z_flat + cfg.n_actions
        if self.d_in_rssm:
            gru_in += d_flat
        if flags.latent_difference:
            gru_in += z_flat
        self.gru_proj = nn.Linear(rng, gru_in, cfg.h_dim, dtype=dtype)
        self.gru_norm = nn.LayerNorm(cfg.h_dim, dtype=dtype)
        self.gru = nn.GRUCell(rng, cfg.h_dim, cfg.h_dim, dtype=dtype)

        self.prior_z = nn.MLP(rng, cfg.h_dim, cfg.mlp_units, z_flat, cfg.mlp_layers, dtype=dtype)
        if self.d_in_rssm:
            self.prior_d = nn.MLP(rng, cfg.h_dim, cfg.mlp_units, d_flat, cfg.mlp_layers, dtype=dtype)

        widths = cfg.enc_channels
        self.decoder = ConvDecoder(rng, dec_in, cfg.frame_size, cfg.channels, widths, dtype)
        if flags.static_split_decoder:
            self.static_decoder = ConvDecoder(rng, cfg.h_dim + z_flat, cfg.frame_size, cfg.channels, widths, dtype)
        if flags.dual_dynamic_decoder:
            self.diff_decoder = ConvDecoder(rng, cfg.h_dim + d_flat, cfg.frame_size, cfg.channels, widths, dtype)

        self.reward_head = nn.MLP(rng, self.state_dim, cfg.mlp_units, cfg.n_buckets, cfg.mlp_layers, dtype=dtype, zero_out=True)
        self.cont_head = nn.MLP(rng, self.state_dim, cfg.mlp_units, 1, cfg.mlp_layers, dtype=dtype, zero_out=True)

    # ------------------------------------------------------------------
    def params(self) -> dict[str, Tensor]:
        out = {}
        out.update(nn.prefix_params("enc_z", self.enc_z.params()))
        out.update(nn.prefix_params("head_z", self.head_z.params()))
        if self.cfg.modulator_enabled:
            out.update(nn.prefix_params("enc_d", self.enc_d.params()))
            out.update(nn.prefix_params("head_d", self.head_d.params()))
        out.update(nn.prefix_params("gru_proj", self.gru_proj.params()))
        out.update(nn.prefix_params("gru_norm", self.gru_norm.params()))
        out.update(nn.prefix_params("gru", self.gru.params()))
        out.update(nn.prefix_params("prior_z", self.prior_z.params()))
        if self.d_in_rssm:
            out.update(nn.prefix_params("prior_d", self.prior_d.params()))
        out.update(nn.prefix_params("decoder", self.decoder.params()))
        if self.cfg.flags.static_split_decoder:
            out.update(nn.prefix_params("static_decoder", self.static_decoder.params()))
        if self.cfg.flags.dual_dynamic_decoder:
            out.update(nn.prefix_params("diff_decoder", self.diff_decoder.params()))
        out.update(nn.prefix_params("reward", self.reward_head.params()))
        out.update(nn.prefix_params("cont", self.cont_head.params()))
        return out

    # ------------------------------------------------------------------
    def encode(self, h: Tensor, obs: np.ndarray, diff_obs: np.ndarray,
               rng: np.random.Generator) -> tuple[CategoricalLatent, CategoricalLatent | None]:
        """Posterior latents for a batch of single frames conditioned on h."""
        dtype = self.cfg.np_dtype
        obs_t = Tensor(np.asarray(obs, dtype=dtype))
        logits_z = self.head_z(nn.concat([self.enc_z(obs_t), h], axis=-1))
        probs_z = unimix_probs(logits_z, self.cfg.z_spec)
        post_z = CategoricalLatent(probs_z, sample_straight_through(probs_z, rng))
        post_d = None
        if self.cfg.modulator_enabled:
            diff_t = Tensor(np.asarray(diff_obs, dtype=dtype))
            logits_d = self.head_d(nn.concat([self.enc_d(diff_t), h], axis=-1))
            probs_d = unimix_probs(logits_d, self.cfg.d_spec)
            post_d = CategoricalLatent(probs_d, sample_straight_through(probs_d, rng))
        if not np.all(np.isfinite(post_z.probs.data)):
            raise FloatingPointError("non-finite encoder activations")
        return post_z, post_d

    def sequence_step(self, h: Tensor, z: Tensor, d: Tensor | None, action_onehot: Tensor,
                      z_prev: Tensor | None = None) -> Tensor:
        """One GRU advance from the previous samples and action."""
        parts = [z]
        if self.d_in_rssm:
            if d is None:
                raise InputError("modulated sequence step needs a modulator sample")
            parts.append(d)
        if self.cfg.flags.latent_difference:
            if z_prev is None:
                raise InputError("latent-difference sequence step needs z_prev")
            parts.append(z - z_prev)
        parts.append(action_onehot)
        x = nn.silu(self.gru_norm(self.gru_proj(nn.concat(parts, axis=-1))))
        return self.gru(x, h)

    def predict_priors(self, h: Tensor) -> tuple[CategoricalLatent, CategoricalLatent | None]:
        probs_z = unimix_probs(self.prior_z(h), self.cfg.z_spec)
        prior_z = CategoricalLatent(probs_z, probs_z)  # sample drawn on demand
        prior_d = None
        if self.d_in_rssm:
            probs_d = unimix_probs(self.prior_d(h), self.cfg.d_spec)
            prior_d = CategoricalLatent(probs_d, probs_d)
        return prior_z, prior_d

    def decoder_input(self, h: Tensor, z: Tensor, d: Tensor | None) -> Tensor:
        parts = [h, z]
        if self.cfg.modulator_enabled:
            parts.append(d)
        return nn.concat(parts, axis=-1)

    def decode(self, h: Tensor, z: Tensor, d: Tensor | None) -> dict[str, Tensor]:
        """Frame-shaped reconstruction mean(s) for flat (N, dim) inputs."""
        out: dict[str, Tensor] = {}
        if self.cfg.flags.static_split_decoder:
            dynamic = self.decoder(self.decoder_input(h, z, d))
            static = self.static_decoder(nn.concat([h, z], axis=-1))
            out["dynamic"] = dynamic
            out["static"] = static
            out["mean"] = dynamic + static
        else:
            out["mean"] = self.decoder(self.decoder_input(h, z, d))
        if self.cfg.flags.dual_dynamic_decoder:
            out["diff"] = self.diff_decoder(nn.concat([h, d], axis=-1))
        return out

    def state_feature(self, h: Tensor, z: Tensor, d: Tensor | None) -> Tensor:
        parts = [h, z]
        if self.d_in_rssm:
            parts.append(d)
        return nn.concat(parts, axis=-1)

    def predict_heads(self, feat: Tensor) -> tuple[Tensor, Tensor]:
        """(reward bucket logits, continue probability)."""
        reward_logits = self.reward_head(feat)
        cont_prob = nn.sigmoid(self.cont_head(feat))
        return reward_logits, cont_prob

    # ------------------------------------------------------------------
    def observe_sequence(self, batch: dict[str, np.ndarray], rng: np.random.Generator,
                         offsets: list[np.ndarray] | None = None,
                         capture: list[np.ndarray] | None = None) -> Rollout:
        """Teacher-forced rollout. ``batch`` holds obs/diff_obs (B, L, H, W, C),
        prev_action (B, L) with -1 marking a missing action, and is_first
        (B, L) resetting the recurrent state inside concatenated windows.

        Straight-through sampling draws fresh one-hots from ``rng``. When
        ``capture`` is given, the constant offsets (one_hot - probs) are
        appended to it; replaying them later via ``offsets`` evaluates the
        smooth surrogate ``probs + frozen_offset`` whose gradient at the
        recording point is exactly the straight-through gradient. The
        finite-difference suite verifies gradients against that surrogate."""
        cfg = self.cfg
        dtype = cfg.np_dtype
        obs = np.asarray(batch["obs"], dtype=dtype)
        if obs.ndim != 5:
            raise InputError(f"obs must be (B, L, H, W, C), got shape {obs.shape}")
        b, l = obs.shape[:2]
        for key in ("diff_obs", "prev_action", "is_first"):
            if batch[key].shape[:2] != (b, l):
                raise InputError(f"batch field {key} misaligned: {batch[key].shape[:2]} != {(b, l)}")
        diff_obs = np.asarray(batch["diff_obs"], dtype=dtype)
        prev_action = np.asarray(batch["prev_action"])
        is_first = np.asarray(batch["is_first"], dtype=dtype)

        embed_z = self.enc_z(Tensor(obs.reshape(b * l, *obs.shape[2:]))).reshape(b, l, -1)
        embed_d = None
        if cfg.modulator_enabled:
            embed_d = self.enc_d(Tensor(diff_obs.reshape(b * l, *obs.shape[2:]))).reshape(b, l, -1)

        eye = np.eye(cfg.n_actions, dtype=dtype)
        zeros_a = np.zeros(cfg.n_actions, dtype=dtype)
        h = Tensor(np.zeros((b, cfg.h_dim), dtype=dtype))
        z = Tensor(np.zeros((b, cfg.z_spec.flat), dtype=dtype))
        d = Tensor(np.zeros((b, cfg.d_spec.flat), dtype=dtype)) if cfg.modulator_enabled else None
        z_prev = Tensor(np.zeros((b, cfg.z_spec.flat), dtype=dtype))

        replay = iter(offsets) if offsets is not None else None

        def draw(probs: Tensor) -> Tensor:
            if replay is not None:
                shifted = probs + Tensor(next(replay))
                return shifted.reshape(probs.shape[0], -1)
            sample = sample_straight_through(probs, rng)
            if capture is not None:
                capture.append(sample.data.reshape(probs.shape) - probs.data)
            return sample

        hs, post_zs, prior_zs, z_samples = [], [], [], []
        post_ds, prior_ds, d_samples = [], [], []
        z_prev_np = np.zeros((b, l, cfg.z_spec.flat), dtype=dtype)

        for t in range(l):
            keep = Tensor((1.0 - is_first[:, t])[:, None].astype(dtype))
            h_in, z_in = h * keep, z * keep
            d_in = d * keep if d is not None else None
            zp_in = z_prev * keep
            acts = np.where(prev_action[:, t, None] < 0, zeros_a, eye[np.maximum(prev_action[:, t], 0)])
            h = self.sequence_step(h_in, z_in, d_in, Tensor(acts),
                                   z_prev=zp_in if cfg.flags.latent_difference else None)
            z_prev_np[:, t] = z_in.data

            logits_z = self.head_z(nn.concat([embed_z[:, t], h], axis=-1))
            probs_z = unimix_probs(logits_z, cfg.z_spec)
            z_new = draw(probs_z)
            prior_z, prior_d = self.predict_priors(h)

            hs.append(h.reshape(b, 1, cfg.h_dim))
            post_zs.append(probs_z.reshape(b, 1, cfg.z_spec.n_cat, cfg.z_spec.n_cls))
            prior_zs.append(prior_z.probs.reshape(b, 1, cfg.z_spec.n_cat, cfg.z_spec.n_cls))
            z_samples.append(z_new.reshape(b, 1, cfg.z_spec.flat))
            z_prev = z
            z = z_new

            if cfg.modulator_enabled:
                logits_d = self.head_d(nn.concat([embed_d[:, t], h], axis=-1))
                probs_d = unimix_probs(logits_d, cfg.d_spec)
                d_new = draw(probs_d)
                post_ds.append(probs_d.reshape(b, 1, cfg.d_spec.n_cat, cfg.d_spec.n_cls))
                d_samples.append(d_new.reshape(b, 1, cfg.d_spec.flat))
                if prior_d is not None:
                    prior_ds.append(prior_d.probs.reshape(b, 1, cfg.d_spec.n_cat, cfg.d_spec.n_cls))
                d = d_new

        h_all = nn.concat(hs, axis=1)
        z_all = nn.concat(z_samples, axis=1)
        h_flat = h_all.reshape(b * l, cfg.h_dim)
        z_flat_t = z_all.reshape(b * l, cfg.z_spec.flat)
        d_all = nn.concat(d_samples, axis=1) if d_samples else None
        d_flat_t = d_all.reshape(b * l, cfg.d_spec.flat) if d_all is not None else None

        feat = self.state_feature(h_flat, z_flat_t, d_flat_t)
        reward_logits, cont_logit = self.reward_head(feat), self.cont_head(feat)
        decoded = self.decode(h_flat, z_flat_t, d_flat_t)

        frame_shape = (b, l) + obs.shape[2:]
        return Rollout(
            h=h_all,
            post_z=nn.concat(post_zs, axis=1),
            prior_z=nn.concat(prior_zs, axis=1),
            z_sample=z_all,
            post_d=nn.concat(post_ds, axis=1) if post_ds else None,
            prior_d=nn.concat(prior_ds, axis=1) if prior_ds else None,
            d_sample=d_all,
            feat=feat,
            recon=decoded["mean"].reshape(*frame_shape),
            recon_static=decoded["static"].reshape(*frame_shape) if "static" in decoded else None,
            recon_dynamic=decoded["dynamic"].reshape(*frame_shape) if "dynamic" in decoded else None,
            diff_recon=decoded["diff"].reshape(*frame_shape) if "diff" in decoded else None,
            reward_logits=reward_logits.reshape(b, l, cfg.n_buckets),
            cont_logit=cont_logit.reshape(b, l),
            z_prev_sample=z_prev_np,
        )

    # ------------------------------------------------------------------
    def start_states(self, rollout: Rollout, limit: int | None = None,
                     rng: np.random.Generator | None = None) -> ModelState:
        """Flatten rollout posterior states into imagination start states,
        optionally subsampling to ``limit`` of them."""
        cfg = self.cfg
        h = rollout.h.data.reshape(-1, cfg.h_dim)
        z = rollout.z_sample.data.reshape(-1, cfg.z_spec.flat)
        d = rollout.d_sample.data.reshape(-1, cfg.d_spec.flat) if rollout.d_sample is not None else None
        zp = rollout.z_prev_sample.reshape(-1, cfg.z_spec.flat)
        if limit is not None and limit < h.shape[0]:
            idx = rng.choice(h.shape[0], size=limit, replace=False) if rng is not None else np.arange(limit)
            h, z, zp = h[idx], z[idx], zp[idx]
            d = d[idx] if d is not None else None
        return ModelState(h=h.copy(), z=z.copy(), d=d.copy() if d is not None else None, z_prev=zp.copy())

    def imagine(self, start: ModelState, actor, horizon: int, rng: np.random.Generator) -> "Imagination":
        """Latent rollout under the actor; no observations, no differencing,
        and no gradients (states come out as plain arrays)."""
        if horizon < 1:
            raise InputError(f"horizon must be >= 1, got {horizon}")
        cfg = self.cfg
        dtype = cfg.np_dtype
        eye = np.eye(cfg.n_actions, dtype=dtype)
        n = start.h.shape[0]

        hs = [start.h.astype(dtype)]
        zs = [start.z.astype(dtype)]
        ds = [start.d.astype(dtype)] if start.d is not None else None
        z_prev = start.z_prev.astype(dtype) if start.z_prev is not None else np.zeros_like(start.z)
        actions = np.zeros((horizon, n), dtype=np.int64)
        rewards = np.zeros((horizon, n), dtype=np.float64)
        conts = np.zeros((horizon, n), dtype=np.float64)

        with nn.no_grad():
            for step in range(horizon):
                feat = self.feature_np(hs[-1], zs[-1], ds[-1] if ds is not None else None)
                probs = actor(feat)
                cum = np.cumsum(probs, axis=-1)
                a = np.minimum((cum < rng.random((n, 1))).sum(-1), cfg.n_actions - 1)
                actions[step] = a

                h_t = Tensor(hs[-1])
                z_t = Tensor(zs[-1])
                d_t = Tensor(ds[-1]) if ds is not None else None
                h_next = self.sequence_step(
                    h_t, z_t, d_t if self.d_in_rssm else d_t, Tensor(eye[a]),
                    z_prev=Tensor(z_prev) if cfg.flags.latent_difference else None,
                )
                prior_z, prior_d = self.predict_priors(h_next)
                z_prev = zs[-1]
                z_next = _sample_onehot(prior_z.probs.data, rng)
                hs.append(h_next.data)
                zs.append(z_next)
                d_next = None
                if ds is not None:
                    if prior_d is not None:
                        d_next = _sample_onehot(prior_d.probs.data, rng)
                    else:  # no-modulation: no prior head, modulator unused downstream
                        d_next = np.zeros_like(ds[-1])
                    ds.append(d_next)

                feat_next = self.feature_np(hs[-1], zs[-1], d_next)
                r_logits, c_prob = self.predict_heads(Tensor(feat_next))
                r_probs = softmax_np(r_logits.data)
                rewards[step] = decode_bucket_probs(r_probs, self.grid)
                conts[step] = c_prob.data[:, 0]

        return Imagination(
            h=np.stack(hs), z=np.stack(zs), d=np.stack(ds) if ds is not None else None,
            actions=actions, rewards=rewards, continues=conts,
        )

    def feature_np(self, h: np.ndarray, z: np.ndarray, d: np.ndarray | None) -> np.ndarray:
        parts = [h, z]
        if self.d_in_rssm:
            parts.append(d)
        return np.concatenate(parts, axis=-1)

    def feature_of(self, state: ModelState) -> np.ndarray:
        return self.feature_np(state.h, state.z, state.d)


@dataclass
class Imagination:
    """Imagined trajectory: states s_0..s_H plus per-transition reward and
    continue predictions evaluated at the arrival states s_1..s_H."""

    h: np.ndarray          # (H+1, N, h_dim)
    z: np.ndarray          # (H+1, N, z_flat)
    d: np.ndarray | None   # (H+1, N, d_flat)
    actions: np.ndarray    # (H, N)
    rewards: np.ndarray    # (H, N) decoded reward means at s_{t+1}
    continues: np.ndarray  # (H, N) continue probabilities at s_{t+1}

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]


def _sample_onehot(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n_cls = probs.shape[-1]
    cum = np.cumsum(probs, axis=-1)
    idx = np.minimum((cum < rng.random(probs.shape[:-1] + (1,))).sum(-1), n_cls - 1)
    return np.eye(n_cls, dtype=probs.dtype)[idx].reshape(probs.shape[0], -1)


def softmax_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)
