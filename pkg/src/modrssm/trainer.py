"""Training and evaluation orchestration.

One loop interleaves acting and learning: the collector steps the
environment with the current actor (random during prefill and for the
first ``diff.interval`` steps of each episode, which bootstrap the
backward difference), transitions land in the replay buffer, and at the
configured ratio a gradient update runs: sample a sequence batch, roll
the world model over it, descend the total loss, imagine from the
posterior states, and update actor, critic and the critic's EMA.

Everything derives from the master seed, so two runs with the same
(config, seed) produce byte-identical metrics streams. Metrics are one
JSON object per line; wall-clock timing lives in summary.json, outside
the deterministic stream.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffmask, envs, losses, policy, tensorio
from .config import RunConfig
from .errors import CheckpointError, NotReadyError
from .nn import Adam, Tensor, no_grad, sigmoid
from .replay import ReplayBuffer, SampleConfig
from .worldmodel import ModelState, WorldModel

METRICS_SCHEMA = 1


class TrainingAborted(RuntimeError):
    """Raised when a non-finite loss is detected; the metrics stream
    carries a diagnostic record describing which term went bad."""


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng((seed, stream))


@dataclass
class AgentState:
    """Collector-side recurrent state, advanced once per env step."""

    h: np.ndarray
    z: np.ndarray
    d: np.ndarray | None
    z_prev: np.ndarray
    prev_action: int

    @classmethod
    def initial(cls, model: WorldModel) -> "AgentState":
        cfg = model.cfg
        dtype = cfg.np_dtype
        return cls(
            h=np.zeros((1, cfg.h_dim), dtype=dtype),
            z=np.zeros((1, cfg.z_spec.flat), dtype=dtype),
            d=np.zeros((1, cfg.d_spec.flat), dtype=dtype) if cfg.modulator_enabled else None,
            z_prev=np.zeros((1, cfg.z_spec.flat), dtype=dtype),
            prev_action=-1,
        )


def advance_agent(model: WorldModel, state: AgentState, obs: np.ndarray, diff_obs: np.ndarray,
                  rng: np.random.Generator) -> AgentState:
    """Folds the new observation into the recurrent state: one sequence
    step with the previous action, then the posterior encoders."""
    cfg = model.cfg
    dtype = cfg.np_dtype
    with no_grad():
        if state.prev_action < 0:
            action = Tensor(np.zeros((1, cfg.n_actions), dtype=dtype))
        else:
            action = Tensor(np.eye(cfg.n_actions, dtype=dtype)[[state.prev_action]])
        h = model.sequence_step(
            Tensor(state.h), Tensor(state.z), Tensor(state.d) if state.d is not None else None,
            action, z_prev=Tensor(state.z_prev) if cfg.flags.latent_difference else None,
        )
        post_z, post_d = model.encode(h, obs[None], diff_obs[None], rng)
    return AgentState(
        h=h.data, z=post_z.sample.data,
        d=post_d.sample.data if post_d is not None else None,
        z_prev=state.z, prev_action=state.prev_action,
    )


def policy_feature(model: WorldModel, state: AgentState) -> np.ndarray:
    return model.feature_np(state.h, state.z, state.d)


class Collector:
    """Runs episodes, maintains frame history for differencing, and
    (optionally) appends transitions to a replay buffer."""

    def __init__(self, run: RunConfig, model: WorldModel, actor: policy.Actor,
                 buffer: ReplayBuffer | None, seed_stream: int):
        self.run = run
        self.model = model
        self.actor = actor
        self.buffer = buffer
        self.env_config = run.env_config()
        self.diff_config = run.diff_config()
        self.seed_stream = seed_stream
        self.episode_index = 0
        self.returns: list[float] = []
        self._begin_episode()

    def _begin_episode(self) -> None:
        seed = int(_rng(self.run["seed"], self.seed_stream).integers(2**31)) + self.episode_index
        self.env_state, frame = envs.reset(self.env_config, seed)
        self.frames = [frame]
        self.agent = AgentState.initial(self.model)
        self.episode_return = 0.0
        self.steps_in_episode = 0
        diff = np.zeros_like(frame)
        if self.buffer is not None:
            self.buffer.append(frame, diff, -1, 0.0, 1, True, episode_seed=seed)
        self._fold(frame, diff)

    def _fold(self, frame: np.ndarray, diff: np.ndarray) -> None:
        self.agent = advance_agent(self.model, self.agent, frame, diff, self.model_rng)

    @property
    def model_rng(self) -> np.random.Generator:
        if not hasattr(self, "_model_rng"):
            self._model_rng = _rng(self.run["seed"], self.seed_stream + 1)
        return self._model_rng

    @property
    def action_rng(self) -> np.random.Generator:
        if not hasattr(self, "_action_rng"):
            self._action_rng = _rng(self.run["seed"], self.seed_stream + 2)
        return self._action_rng

    def step(self, random_action: bool = False, greedy: bool = False) -> float | None:
        """One env step; returns the episode return when one finishes."""
        bootstrap = self.steps_in_episode < self.diff_config.interval
        if random_action or bootstrap:
            action = int(self.action_rng.integers(envs.n_actions(self.env_config)))
        else:
            probs = self.actor.probs(policy_feature(self.model, self.agent))[0]
            if greedy:
                action = int(np.argmax(probs))
            else:
                action = int(np.searchsorted(np.cumsum(probs), self.action_rng.random()))
                action = min(action, len(probs) - 1)
        self.env_state, tr = envs.step(self.env_state, action)
        self.frames.append(tr.observation)
        history = np.stack(self.frames[-(self.diff_config.interval + max(self.diff_config.window_len, self.diff_config.window_delta + self.diff_config.interval) + 1):])
        diff = diffmask.rolling_differential_observation(history, history.shape[0] - 1, self.diff_config)
        if self.buffer is not None:
            self.buffer.append(tr.observation, diff, action, tr.reward, tr.continue_flag,
                               False, episode_seed=0)
        self.agent.prev_action = action
        self._fold(tr.observation, diff)
        self.episode_return += tr.reward
        self.steps_in_episode += 1
        if tr.continue_flag == 0:
            finished = self.episode_return
            self.returns.append(finished)
            self.episode_index += 1
            self._begin_episode()
            return finished
        return None


def _check_finite(breakdown: dict, metrics_file, step: int) -> None:
    bad = {k: float(v.data) for k, v in breakdown.items()
           if hasattr(v, "data") and not np.all(np.isfinite(v.data))}
    if bad:
        record = {"schema": METRICS_SCHEMA, "event": "nan_abort", "step": step, "bad_terms": list(bad)}
        if metrics_file is not None:
            metrics_file.write(json.dumps(record) + "\n")
            metrics_file.flush()
        raise TrainingAborted(f"non-finite loss terms at step {step}: {sorted(bad)}")


def train(run: RunConfig, out_dir) -> dict:
    """Runs the full collect/update loop; writes metrics.jsonl, periodic
    and final checkpoints, and summary.json under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t_start = time.monotonic()
    seed = run["seed"]

    model = WorldModel(_rng(seed, 0), run.model_config())
    mcfg = model.cfg
    actor = policy.Actor(_rng(seed, 1), model.state_dim, mcfg.n_actions,
                         units=run["policy.units"], layers=run["policy.layers"], dtype=mcfg.np_dtype)
    critic = policy.Critic(_rng(seed, 2), model.state_dim, model.grid,
                           units=run["policy.units"], layers=run["policy.layers"], dtype=mcfg.np_dtype)
    critic_ema = critic.clone_ema(_rng(seed, 3))
    weights = run.loss_weights()
    harmony = losses.HarmoniousWeights(dtype=mcfg.np_dtype) if weights.harmonious else None

    wm_params = dict(model.params())
    if harmony is not None:
        wm_params.update(harmony.params())
    wm_opt = Adam(wm_params, lr=run["opt.wm_lr"], eps=run["opt.wm_eps"], clip=run["opt.wm_clip"])
    actor_opt = Adam(actor.params(), lr=run["opt.ac_lr"], eps=run["opt.ac_eps"], clip=run["opt.ac_clip"])
    critic_opt = Adam(critic.params(), lr=run["opt.ac_lr"], eps=run["opt.ac_eps"], clip=run["opt.ac_clip"])

    buffer = ReplayBuffer((mcfg.frame_size, mcfg.frame_size, mcfg.channels),
                          capacity=run["train.capacity"], diff_config=run.diff_config())
    collector = Collector(run, model, actor, buffer, seed_stream=10)
    sample_cfg = SampleConfig(run["train.batch_size"], run["train.batch_length"])
    batch_rng = _rng(seed, 20)
    rollout_rng = _rng(seed, 21)
    imag_rng = _rng(seed, 22)
    pcfg = run.policy_config()

    total = run["train.total_env_steps"]
    prefill = run["train.prefill_steps"]
    ratio = run["train.train_ratio"]
    metrics_every = max(run["train.metrics_every"], 1)
    updates = 0
    reported = 0
    summary: dict = {"variant": run.variant, "seed": seed}

    with open(out / "metrics.jsonl", "w") as metrics_file:
        for step in range(1, total + 1):
            collector.step(random_action=step <= prefill)

            while step > prefill and updates < (step - prefill) * ratio:
                try:
                    batch = buffer.sample_batch(sample_cfg, batch_rng)
                except NotReadyError:
                    break
                rollout = model.observe_sequence(batch, rollout_rng)
                terms = losses.world_model_loss_terms(
                    rollout, batch, model.grid, weights,
                    include_reg=run.include_reg, harmony=harmony,
                )
                _check_finite(terms, metrics_file, step)
                wm_opt.zero_grad()
                terms["total"].backward()
                wm_grad_norm = wm_opt.step()

                limit = run["train.imag_starts"] or None
                starts = model.start_states(rollout, limit=limit, rng=imag_rng)
                imag = model.imagine(starts, actor.probs, pcfg.horizon, imag_rng)
                with no_grad():
                    first_cont = sigmoid(model.cont_head(Tensor(model.feature_np(
                        starts.h, starts.z, starts.d)))).data[:, 0]
                traj = policy.build_trajectory(model, imag, critic, pcfg, first_cont=first_cont)
                actor_loss, critic_loss, stats = policy.policy_losses(actor, critic, critic_ema, traj, pcfg)
                for t, label in ((actor_loss, "actor"), (critic_loss, "critic")):
                    _check_finite({label: t}, metrics_file, step)
                actor_opt.zero_grad()
                actor_loss.backward()
                actor_grad_norm = actor_opt.step()
                critic_opt.zero_grad()
                critic_loss.backward()
                critic_grad_norm = critic_opt.step()
                policy.ema_update(critic, critic_ema, pcfg.ema_decay)
                updates += 1

                if updates % metrics_every == 0:
                    breakdown = losses.breakdown_from_terms(terms)
                    recent = collector.returns[reported:]
                    reported = len(collector.returns)
                    record = {
                        "schema": METRICS_SCHEMA, "step": step, "update": updates,
                        **{f"loss/{k}": v for k, v in breakdown.as_dict().items()},
                        "grad_norm/world_model": wm_grad_norm,
                        "grad_norm/actor": actor_grad_norm,
                        "grad_norm/critic": critic_grad_norm,
                        "policy/scale": stats["scale"],
                        "policy/value_mean": stats["value_mean"],
                        "policy/return_mean": stats["return_mean"],
                        "policy/entropy": stats["entropy"],
                        "episodes": collector.episode_index,
                        "episode_return_mean": float(np.mean(recent)) if recent else None,
                    }
                    if harmony is not None:
                        record.update({f"harmony/{k}": v for k, v in harmony.weights().items()})
                    metrics_file.write(json.dumps(record) + "\n")

            if run["train.checkpoint_every"] and step % run["train.checkpoint_every"] == 0:
                _save(out / f"checkpoint_{step:07d}.ckpt", run, step, model, actor, critic, critic_ema, harmony)
            if run["train.eval_every"] and step % run["train.eval_every"] == 0 and step > prefill:
                mean, std, median, _ = evaluate_live(run, model, actor, run["train.eval_episodes"],
                                                     seed=seed + 900_000)
                metrics_file.write(json.dumps({
                    "schema": METRICS_SCHEMA, "event": "eval", "step": step,
                    "eval/mean": mean, "eval/std": std, "eval/median": median,
                }) + "\n")

    final_path = out / "checkpoint_final.ckpt"
    _save(final_path, run, total, model, actor, critic, critic_ema, harmony)
    summary.update({
        "env_steps": total, "updates": updates,
        "episodes": collector.episode_index,
        "train_return_mean_last20": float(np.mean(collector.returns[-20:])) if collector.returns else None,
        "wall_clock_seconds": time.monotonic() - t_start,
        "checkpoint": str(final_path),
    })
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2)
    return summary


def _save(path, run: RunConfig, step: int, model, actor, critic, critic_ema, harmony) -> None:
    arrays = {}
    for prefix, params in (("model", model.params()), ("actor", actor.params()),
                           ("critic", critic.params()), ("critic_ema", critic_ema.params())):
        arrays.update({f"{prefix}/{k}": p.data for k, p in params.items()})
    if harmony is not None:
        arrays.update({f"harmony/{k}": p.data for k, p in harmony.params().items()})
    meta = {
        "step": step, "seed": run["seed"], "variant": run.variant,
        "config": run.flat(), "config_digest": tensorio.config_digest(run.flat()),
    }
    tensorio.save_checkpoint(path, arrays, meta)


def load_agent(checkpoint_path, variant: str | None = None):
    """Rebuilds (run, model, actor, critic, critic_ema) from a checkpoint.
    A caller-supplied variant that contradicts the checkpoint is an error."""
    arrays, meta = tensorio.load_checkpoint(checkpoint_path)
    if variant is not None and variant != meta["variant"]:
        raise CheckpointError(
            f"variant mismatch: checkpoint was trained as {meta['variant']!r}, requested {variant!r}"
        )
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in meta["config"].items()}
    run = RunConfig(values)
    seed = run["seed"]
    model = WorldModel(_rng(seed, 0), run.model_config())
    actor = policy.Actor(_rng(seed, 1), model.state_dim, model.cfg.n_actions,
                         units=run["policy.units"], layers=run["policy.layers"], dtype=model.cfg.np_dtype)
    critic = policy.Critic(_rng(seed, 2), model.state_dim, model.grid,
                           units=run["policy.units"], layers=run["policy.layers"], dtype=model.cfg.np_dtype)
    critic_ema = critic.clone_ema(_rng(seed, 3))
    groups = {"model": model.params(), "actor": actor.params(),
              "critic": critic.params(), "critic_ema": critic_ema.params()}
    if run.variant == "harmonious":
        groups["harmony"] = losses.HarmoniousWeights(dtype=model.cfg.np_dtype).params()
    for prefix, params in groups.items():
        subset = {k[len(prefix) + 1:]: v for k, v in arrays.items() if k.startswith(prefix + "/")}
        tensorio.restore_params(params, subset)
    return run, model, actor, critic, critic_ema


def evaluate_live(run: RunConfig, model: WorldModel, actor: policy.Actor,
                  episodes: int, seed: int, mode: str = "sample") -> tuple[float, float, float, list]:
    """Rolls fresh episodes with the given policy; no replay writes."""
    eval_run = run.with_overrides(seed=seed)
    collector = Collector(eval_run, model, actor, buffer=None, seed_stream=50)
    returns: list[float] = []
    while len(returns) < episodes:
        finished = collector.step(greedy=(mode == "greedy"))
        if finished is not None:
            returns.append(finished)
    arr = np.asarray(returns)
    return float(arr.mean()), float(arr.std()), float(np.median(arr)), returns


def evaluate(checkpoint_path, episodes: int = 100, seed: int = 0,
             mode: str = "sample", variant: str | None = None) -> dict:
    """Final-checkpoint evaluation: mean/std/median return over fresh
    episode seeds, deterministic given (checkpoint, episodes, seed)."""
    run, model, actor, _, _ = load_agent(checkpoint_path, variant=variant)
    mean, std, median, returns = evaluate_live(run, model, actor, episodes, seed, mode=mode)
    return {"episodes": episodes, "mean": mean, "std": std, "median": median,
            "returns": returns, "mode": mode, "variant": run.variant}
