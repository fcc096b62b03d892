"""Deterministic toy pixel POMDPs with discrete actions.

Two micro-games exercise the small-sparse-moving-object regime on a
uniform background:

* ``dot-chase``: a red 3x3 agent block chases a static green 3x3 target.
  Overlap pays +1 and respawns the target away from the agent. Actions:
  up/down/left/right/noop.
* ``mini-pong``: a blue 3x3 paddle on the bottom rows keeps a white 3x3
  ball in play. Paddle contact pays +1; the episode ends when the ball
  crosses the paddle plane, or at the step limit. Actions: left/right/noop.

Everything is functional: ``step`` maps (state, action) to (state,
transition) and ``render`` is a pure function of the state, so a full
trace is determined by (config, seed, action sequence). Pixel values are
exact multiples of 1/255, which lets the replay buffer store frames as
uint8 without loss.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, InputError

ENV_NAMES = ("dot-chase", "mini-pong")
BLOCK = 3  # all elements render as 3x3 solid blocks
AGENT_STEP = 2
BALL_SPEED = 2
PADDLE_STEP = 2

_F255 = np.float32(255.0)


def _color(r: int, g: int, b: int) -> np.ndarray:
    return np.array([r, g, b], dtype=np.float32) / _F255


AGENT_COLOR = _color(255, 0, 0)
TARGET_COLOR = _color(0, 255, 0)
PADDLE_COLOR = _color(0, 128, 255)
BALL_COLOR = _color(255, 255, 255)


@dataclass(frozen=True)
class EnvConfig:
    env_name: str = "dot-chase"
    frame_size: int = 32
    episode_limit: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.env_name not in ENV_NAMES:
            raise ConfigError(f"unknown env_name {self.env_name!r}; expected one of {ENV_NAMES}")
        if self.frame_size < 16:
            raise ConfigError(f"frame_size must be >= 16, got {self.frame_size}")
        if self.episode_limit < 1:
            raise ConfigError(f"episode_limit must be >= 1, got {self.episode_limit}")


@dataclass(frozen=True)
class Transition:
    observation: np.ndarray
    action: int
    reward: float
    continue_flag: int


@dataclass(frozen=True)
class DotChaseState:
    config: EnvConfig
    seed: int
    agent: tuple[int, int]  # block centre (row, col)
    target: tuple[int, int]
    steps: int
    catches: int


@dataclass(frozen=True)
class MiniPongState:
    config: EnvConfig
    seed: int
    paddle_col: int
    ball: tuple[int, int]
    velocity: tuple[int, int]
    steps: int


EnvState = DotChaseState | MiniPongState


def n_actions(config: EnvConfig) -> int:
    return 5 if config.env_name == "dot-chase" else 3


def _draw_block(frame: np.ndarray, center: tuple[int, int], color: np.ndarray) -> None:
    n = frame.shape[0]
    r, c = center
    r0, r1 = max(r - 1, 0), min(r + 2, n)
    c0, c1 = max(c - 1, 0), min(c + 2, n)
    frame[r0:r1, c0:c1, :] = color


def element_boxes(state: EnvState) -> list[tuple[int, int, int, int]]:
    """Bounding boxes (r0, r1, c0, c1), exclusive ends, of the moving elements."""
    n = state.config.frame_size
    if isinstance(state, DotChaseState):
        centers = [state.agent, state.target]
    else:
        centers = [(n - 2, state.paddle_col), state.ball]
    boxes = []
    for r, c in centers:
        boxes.append((max(r - 1, 0), min(r + 2, n), max(c - 1, 0), min(c + 2, n)))
    return boxes


def render(state: EnvState) -> np.ndarray:
    n = state.config.frame_size
    frame = np.zeros((n, n, 3), dtype=np.float32)
    if isinstance(state, DotChaseState):
        _draw_block(frame, state.target, TARGET_COLOR)
        _draw_block(frame, state.agent, AGENT_COLOR)
    else:
        _draw_block(frame, (n - 2, state.paddle_col), PADDLE_COLOR)
        _draw_block(frame, state.ball, BALL_COLOR)
    return frame


def _uniform_center(rng: np.random.Generator, n: int) -> tuple[int, int]:
    return int(rng.integers(1, n - 1)), int(rng.integers(1, n - 1))


def _chebyshev(a: tuple[int, int], b: tuple[int, int]) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


def reset(config: EnvConfig, seed: int) -> tuple[EnvState, np.ndarray]:
    """Initial state and rendered frame; a pure function of (config, seed)."""
    n = config.frame_size
    rng = np.random.default_rng((seed, 0))
    if config.env_name == "dot-chase":
        agent = _uniform_center(rng, n)
        target = _uniform_center(rng, n)
        while _chebyshev(agent, target) < BLOCK + 1:
            target = _uniform_center(rng, n)
        state: EnvState = DotChaseState(config, seed, agent, target, steps=0, catches=0)
    else:
        paddle_col = int(rng.integers(1, n - 1))
        ball = (int(rng.integers(2, n // 2)), int(rng.integers(1, n - 1)))
        velocity = (BALL_SPEED if rng.random() < 0.5 else -BALL_SPEED,
                    BALL_SPEED if rng.random() < 0.5 else -BALL_SPEED)
        state = MiniPongState(config, seed, paddle_col, ball, velocity, steps=0)
    return state, render(state)


def _respawn_target(state: DotChaseState) -> tuple[int, int]:
    n = state.config.frame_size
    rng = np.random.default_rng((state.seed, 1 + state.catches))
    min_gap = min(2 * BLOCK, n // 4)
    target = _uniform_center(rng, n)
    while _chebyshev(target, state.agent) < min_gap:
        target = _uniform_center(rng, n)
    return target


def _step_dot_chase(state: DotChaseState, action: int) -> tuple[DotChaseState, float]:
    n = state.config.frame_size
    dr, dc = ((-AGENT_STEP, 0), (AGENT_STEP, 0), (0, -AGENT_STEP), (0, AGENT_STEP), (0, 0))[action]
    agent = (int(np.clip(state.agent[0] + dr, 1, n - 2)),
             int(np.clip(state.agent[1] + dc, 1, n - 2)))
    caught = _chebyshev(agent, state.target) < BLOCK
    state = replace(state, agent=agent)
    if caught:
        state = replace(state, catches=state.catches + 1)
        state = replace(state, target=_respawn_target(state))
    return state, float(caught)


def _reflect(value: int, low: int, high: int) -> tuple[int, bool]:
    bounced = False
    if value < low:
        value, bounced = 2 * low - value, True
    elif value > high:
        value, bounced = 2 * high - value, True
    return value, bounced


def _step_mini_pong(state: MiniPongState, action: int) -> tuple[MiniPongState, float, bool]:
    n = state.config.frame_size
    dc = (-PADDLE_STEP, PADDLE_STEP, 0)[action]
    paddle_col = int(np.clip(state.paddle_col + dc, 1, n - 2))

    br, bc = state.ball
    vr, vc = state.velocity
    bc, hbounce = _reflect(bc + vc, 1, n - 2)
    if hbounce:
        vc = -vc
    br = br + vr
    if br < 1:  # ceiling
        br, vr = 2 - br, -vr

    reward = 0.0
    out = False
    contact_row = n - 2 - BLOCK  # ball centre row where it meets the paddle top
    if vr > 0 and br > contact_row:
        if abs(bc - paddle_col) < BLOCK + 1:
            reward = 1.0
            br, vr = 2 * contact_row - br, -vr
        else:
            out = True
            br = min(br, n - 2)
    return MiniPongState(state.config, state.seed, paddle_col, (br, bc), (vr, vc), state.steps), reward, out


def step(state: EnvState, action: int) -> tuple[EnvState, Transition]:
    """Advance one step. Rewards are {0, 1}; continue_flag drops to 0 exactly
    at episode termination (ball out or step limit)."""
    if not 0 <= action < n_actions(state.config):
        raise InputError(f"action {action} out of range for {state.config.env_name}")
    if isinstance(state, DotChaseState):
        state, reward = _step_dot_chase(state, action)
        out = False
    else:
        state, reward, out = _step_mini_pong(state, action)
    state = replace(state, steps=state.steps + 1)
    done = out or state.steps >= state.config.episode_limit
    return state, Transition(render(state), action, reward, 0 if done else 1)


def baseline_returns(config: EnvConfig, episodes: int, seed: int) -> tuple[float, float]:
    """Monte-Carlo episode-return mean/std under the uniform-random policy."""
    if episodes < 1:
        raise InputError(f"episodes must be >= 1, got {episodes}")
    acts = n_actions(config)
    returns = np.zeros(episodes)
    for i in range(episodes):
        rng = np.random.default_rng((seed, i, 2**20))
        state, _ = reset(config, seed + i)
        total, cont = 0.0, 1
        while cont:
            state, tr = step(state, int(rng.integers(acts)))
            total += tr.reward
            cont = tr.continue_flag
        returns[i] = total
    return float(returns.mean()), float(returns.std())
