"""Imagination-trained actor-critic.

The actor and critic are MLPs over the concatenated model state. The
critic is distributional (symlog two-hot buckets) with its scalar value
being the decoded expectation; training pulls the bucket distribution
towards the two-hot encoding of the lambda-return and squared-regularises
the decoded value towards a slow EMA copy. The actor uses the Reinforce
estimator with advantages normalised by the 5th-95th percentile range of
the lambda-returns (floored at 1) and an entropy bonus.

All imagined quantities live in plain arrays: the policy losses rebuild
actor/critic outputs on those detached states, so no gradient can reach
the world model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError, InputError
from .losses import BucketGrid, decode_bucket_probs, twohot_encode
from .nn import Tensor
from .worldmodel import Imagination, softmax_np


@dataclass(frozen=True)
class PolicyConfig:
    gamma: float = 0.997
    lam: float = 0.95
    horizon: int = 15
    entropy_eta: float = 3e-4
    ema_decay: float = 0.98
    ema_reg: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0 and 0.0 < self.lam <= 1.0):
            raise ConfigError("gamma and lam must lie in (0, 1]")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")


class Actor:
    def __init__(self, rng, state_dim: int, n_actions: int, units: int = 256, layers: int = 2, dtype=np.float32):
        self.net = nn.MLP(rng, state_dim, units, n_actions, layers, dtype=dtype)
        self.n_actions = n_actions

    def __call__(self, feat: Tensor) -> Tensor:
        return self.net(feat)

    def probs(self, feat: np.ndarray) -> np.ndarray:
        with nn.no_grad():
            logits = self.net(Tensor(feat))
        return softmax_np(logits.data)

    def params(self):
        return nn.prefix_params("actor", self.net.params())


class Critic:
    def __init__(self, rng, state_dim: int, grid: BucketGrid, units: int = 256, layers: int = 2, dtype=np.float32):
        self.net = nn.MLP(rng, state_dim, units, grid.n_buckets, layers, dtype=dtype, zero_out=True)
        self.grid = grid

    def __call__(self, feat: Tensor) -> tuple[Tensor, Tensor]:
        """(bucket probabilities, decoded scalar values)."""
        probs = nn.softmax(self.net(feat), axis=-1)
        return probs, decode_bucket_probs(probs, self.grid)

    def values(self, feat: np.ndarray) -> np.ndarray:
        with nn.no_grad():
            _, v = self(Tensor(feat))
        return v.data

    def params(self):
        return nn.prefix_params("critic", self.net.params())

    def clone_ema(self, rng) -> "Critic":
        twin = Critic(rng, self.net.blocks[0][0].w.shape[0], self.grid,
                      units=self.net.blocks[0][0].w.shape[1], layers=len(self.net.blocks),
                      dtype=self.net.out.w.dtype.type)
        for (name, src), (_, dst) in zip(self.params().items(), twin.params().items()):
            dst.data = src.data.copy()
            dst.requires_grad = False
        return twin


def ema_update(critic: Critic, ema: Critic, decay: float) -> None:
    """ema <- decay * ema + (1 - decay) * critic, elementwise."""
    src, dst = critic.params(), ema.params()
    for key in src:
        if dst[key].data.shape != src[key].data.shape:
            raise InputError(f"EMA parameter shape mismatch at {key}")
        dst[key].data = decay * dst[key].data + (1.0 - decay) * src[key].data


def lambda_returns(rewards: np.ndarray, values: np.ndarray, continues: np.ndarray,
                   gamma: float, lam: float) -> np.ndarray:
    """Backward recursion R_t = r_t + gamma * c_t * ((1-lam) V_{t+1} + lam R_{t+1})
    with R_H = V_H. rewards/continues: (H, ...); values: (H+1, ...)."""
    horizon = rewards.shape[0]
    if values.shape[0] != horizon + 1 or continues.shape[0] != horizon:
        raise InputError(
            f"length mismatch: rewards {rewards.shape[0]}, continues {continues.shape[0]}, "
            f"values {values.shape[0]} (need horizon and horizon+1)"
        )
    out = np.zeros_like(values)
    out[horizon] = values[horizon]
    for t in range(horizon - 1, -1, -1):
        out[t] = rewards[t] + gamma * continues[t] * ((1.0 - lam) * values[t + 1] + lam * out[t + 1])
    return out[:horizon]


def return_scale(returns: np.ndarray) -> float:
    """Spread between the 5th and 95th percentiles (linear interpolation)."""
    flat = np.asarray(returns).reshape(-1)
    if flat.size == 0:
        raise InputError("return_scale needs a non-empty batch")
    return float(np.percentile(flat, 95) - np.percentile(flat, 5))


@dataclass
class ImaginedTrajectory:
    """Imagination plus everything the policy losses need, all detached."""

    imag: Imagination
    feats: np.ndarray          # (H+1, N, state_dim)
    values: np.ndarray         # (H+1, N) decoded critic values
    lam_returns: np.ndarray    # (H, N)
    weights: np.ndarray        # (H, N) cumulative continue products
    scale: float               # percentile spread of the lambda-returns


def build_trajectory(model, imag: Imagination, critic: Critic, cfg: PolicyConfig,
                     first_cont: np.ndarray | None = None) -> ImaginedTrajectory:
    """Computes values, lambda-returns, loss weights and the return scale.

    ``first_cont`` is the continue probability of the posterior start
    state; it seeds the cumulative weight so trajectories imagined from
    terminal states do not train the policy.
    """
    steps = imag.h.shape[0]
    feats = np.stack([
        model.feature_np(imag.h[t], imag.z[t], imag.d[t] if imag.d is not None else None)
        for t in range(steps)
    ])
    n = feats.shape[1]
    values = critic.values(feats.reshape(steps * n, -1)).reshape(steps, n)
    lam = lambda_returns(imag.rewards, values, imag.continues, cfg.gamma, cfg.lam)

    if first_cont is None:
        first_cont = np.ones(n)
    weights = np.ones((imag.horizon, n))
    running = first_cont.astype(np.float64).copy()
    for t in range(imag.horizon):
        weights[t] = running
        running = running * imag.continues[t]
    return ImaginedTrajectory(imag, feats, values, lam, weights, return_scale(lam))


def policy_losses(actor: Actor, critic: Critic, critic_ema: Critic,
                  traj: ImaginedTrajectory, cfg: PolicyConfig) -> tuple[Tensor, Tensor, dict]:
    """(actor_loss, critic_loss, stats) on the detached trajectory.

    critic: KL towards the two-hot-coded lambda-return (zero when the
    distributions coincide) plus ema_reg * squared distance of the decoded
    value from the EMA critic's. actor: Reinforce with percentile-scaled
    advantages plus an entropy bonus. No gradient reaches the other
    network or the world model.
    """
    horizon, n = traj.imag.horizon, traj.feats.shape[1]
    feat_act = traj.feats[:horizon].reshape(horizon * n, -1)
    dtype = feat_act.dtype
    w_t = Tensor(traj.weights.reshape(-1).astype(dtype))
    denom = float(horizon * n)

    # critic on s_0..s_{H-1} against the lambda-returns
    logits_c = critic.net(Tensor(feat_act))
    logp_c = nn.log_softmax(logits_c, axis=-1)
    value = decode_bucket_probs(nn.exp(logp_c), critic.grid)
    target = twohot_encode(traj.lam_returns.reshape(-1), critic.grid)
    target_t = Tensor(target.astype(dtype))
    log_target = Tensor(np.log(np.maximum(target, 1e-12)).astype(dtype))
    kl_rows = nn.tsum(target_t * (log_target - logp_c), axis=-1)
    ema_diff = value - Tensor(critic_ema.values(feat_act).astype(dtype))
    critic_loss = nn.tsum((kl_rows + cfg.ema_reg * ema_diff * ema_diff) * w_t) * (1.0 / denom)

    # actor: Reinforce with scaled advantages + entropy bonus
    advantage = (traj.lam_returns.reshape(-1) - value.data) / max(1.0, traj.scale)
    logits = actor(Tensor(feat_act))
    logp = nn.log_softmax(logits, axis=-1)
    onehot = np.eye(actor.n_actions, dtype=dtype)[traj.imag.actions.reshape(-1)]
    logp_taken = nn.tsum(logp * Tensor(onehot), axis=-1)
    entropy = -nn.tsum(nn.exp(logp) * logp, axis=-1)
    actor_loss = nn.tsum((-Tensor(advantage.astype(dtype)) * logp_taken - cfg.entropy_eta * entropy) * w_t) * (1.0 / denom)

    stats = {
        "scale": traj.scale,
        "value_mean": float(value.data.mean()),
        "return_mean": float(traj.lam_returns.mean()),
        "entropy": float(entropy.data.mean()),
    }
    return actor_loss, critic_loss, stats
