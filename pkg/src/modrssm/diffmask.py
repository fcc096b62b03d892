"""Inter-frame differencing masks and differential observations.

A mask marks pixels whose channel vector moved more than a threshold
between frames; dilation then grows each marked pixel into its Chebyshev
neighbourhood so the surrounding context survives the masking. The
differential observation is the current frame with everything outside
the dilated mask zeroed.

Three mask strategies are provided: plain backward differencing against
the frame ``interval`` steps earlier, differencing against a moving
average of recent frames, and a logical-AND combination of backward
masks at two temporal offsets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError

STRATEGIES = ("backward", "moving_average", "multiframe_logical")


@dataclass(frozen=True)
class DiffConfig:
    epsilon: float = 0.001
    interval: int = 1          # frames between the differenced pair
    dilation_radius: int = 1
    strategy: str = "backward"
    window_len: int = 4        # moving-average window
    window_delta: int = 1      # offset of the second mask in the logical AND

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.interval < 1:
            raise ConfigError(f"interval must be >= 1, got {self.interval}")
        if self.dilation_radius < 0:
            raise ConfigError(f"dilation_radius must be >= 0, got {self.dilation_radius}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.window_len < 1 or self.window_delta < 1:
            raise ConfigError("window_len and window_delta must be >= 1")


def backward_difference(frame: np.ndarray, previous: np.ndarray, epsilon: float) -> np.ndarray:
    """Binary H x W mask: 1 where the channel vector moved by more than
    epsilon in L2 norm. Symmetric in its two frames."""
    if frame.shape != previous.shape:
        raise InputError(f"frame shapes differ: {frame.shape} vs {previous.shape}")
    if epsilon <= 0:
        raise InputError(f"epsilon must be > 0, got {epsilon}")
    delta = frame.astype(np.float64) - previous.astype(np.float64)
    norm = np.sqrt(np.sum(delta * delta, axis=-1))
    return (norm > epsilon).astype(np.uint8)


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Chebyshev-ball dilation: output 1 wherever any input 1 lies within
    ``radius``. Radius 0 is the identity."""
    if radius < 0:
        raise InputError(f"radius must be >= 0, got {radius}")
    out = mask.astype(bool)
    for _ in range(radius):
        grown = out.copy()
        grown[1:, :] |= out[:-1, :]
        grown[:-1, :] |= out[1:, :]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        grown[1:, 1:] |= out[:-1, :-1]
        grown[1:, :-1] |= out[:-1, 1:]
        grown[:-1, 1:] |= out[1:, :-1]
        grown[:-1, :-1] |= out[1:, 1:]
        out = grown
    return out.astype(np.uint8)


def moving_average_mask(frames: np.ndarray, index: int, cfg: DiffConfig) -> np.ndarray:
    """Mask of pixels deviating from the average of the preceding
    min(index, window_len) frames."""
    if index < 1:
        raise InputError("moving_average_mask needs at least one prior frame")
    window = min(index, cfg.window_len)
    average = frames[index - window : index].astype(np.float64).mean(axis=0)
    delta = frames[index].astype(np.float64) - average
    norm = np.sqrt(np.sum(delta * delta, axis=-1))
    return (norm > cfg.epsilon).astype(np.uint8)


def multiframe_logical_mask(frames: np.ndarray, index: int, cfg: DiffConfig) -> np.ndarray:
    """Elementwise AND of the backward masks at offsets {index - delta, index}."""
    if index - cfg.window_delta - cfg.interval < 0:
        raise InputError(
            f"multiframe_logical_mask needs index >= window_delta + interval, got index {index}"
        )
    current = backward_difference(frames[index], frames[index - cfg.interval], cfg.epsilon)
    older = backward_difference(
        frames[index - cfg.window_delta],
        frames[index - cfg.window_delta - cfg.interval],
        cfg.epsilon,
    )
    return (current & older).astype(np.uint8)


def _raw_mask(frames: np.ndarray, index: int, cfg: DiffConfig) -> np.ndarray:
    if cfg.strategy == "backward":
        if index - cfg.interval < 0:
            raise InputError(f"backward mask needs index >= interval, got index {index}")
        return backward_difference(frames[index], frames[index - cfg.interval], cfg.epsilon)
    if cfg.strategy == "moving_average":
        return moving_average_mask(frames, index, cfg)
    return multiframe_logical_mask(frames, index, cfg)


def differential_observation(frames: np.ndarray, index: int, cfg: DiffConfig) -> np.ndarray:
    """Dilated mask times the current frame. Index 0 is the bootstrap step
    and yields an all-zero frame (no motion evidence yet); otherwise the
    configured strategy must have enough history."""
    if index < 0 or index >= len(frames):
        raise InputError(f"index {index} outside frame sequence of length {len(frames)}")
    if index == 0:
        return np.zeros_like(frames[0])
    mask = dilate(_raw_mask(frames, index, cfg), cfg.dilation_radius)
    return frames[index] * mask[..., None].astype(frames.dtype)


def rolling_differential_observation(frames: np.ndarray, index: int, cfg: DiffConfig) -> np.ndarray:
    """Collector-facing variant that tolerates short histories: lookbacks
    clamp to frame 0, and the logical-AND strategy degrades to the plain
    backward mask until both constituents exist."""
    if index == 0:
        return np.zeros_like(frames[0])
    if cfg.strategy == "moving_average":
        mask = moving_average_mask(frames, index, cfg)
    elif cfg.strategy == "multiframe_logical" and index - cfg.window_delta - cfg.interval >= 0:
        mask = multiframe_logical_mask(frames, index, cfg)
    else:
        mask = backward_difference(frames[index], frames[max(index - cfg.interval, 0)], cfg.epsilon)
    mask = dilate(mask, cfg.dilation_radius)
    return frames[index] * mask[..., None].astype(frames.dtype)
