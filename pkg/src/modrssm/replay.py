"""Episodic experience dataset with uniform sequence sampling.

Episodes are ordered lists of (frame, differential frame, previous
action, reward, continue flag, episode-start flag). Frames arrive as
float32 images whose values are exact multiples of 1/255 (the toy envs
guarantee this), so they are stored as uint8 and decode back bit-exactly.

Training batches are fixed-length windows drawn uniformly from the
concatenation of all sealed episodes in insertion order; windows may
cross episode boundaries, with the stored flags marking the break. A ring
policy evicts whole episodes, oldest first, once the transition count
exceeds the capacity.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .diffmask import DiffConfig
from .errors import ConfigError, InputError, NotReadyError, ReplayLoadError

_MAGIC = "RBUF"
_VERSION = 1


@dataclass(frozen=True)
class SampleConfig:
    batch_size: int = 16
    batch_length: int = 64

    def __post_init__(self):
        if self.batch_size < 1 or self.batch_length < 1:
            raise ConfigError("batch_size and batch_length must be >= 1")


@dataclass
class Episode:
    episode_id: int
    seed: int
    obs: np.ndarray          # (T, H, W, C) uint8
    diff_obs: np.ndarray     # (T, H, W, C) uint8
    prev_action: np.ndarray  # (T,) int16, -1 marks "no previous action"
    reward: np.ndarray       # (T,) float32
    cont: np.ndarray         # (T,) uint8
    is_first: np.ndarray     # (T,) uint8
    sealed: bool = True

    def __len__(self):
        return self.obs.shape[0]


def encode_frame(frame: np.ndarray) -> np.ndarray:
    return np.round(frame * 255.0).astype(np.uint8)


def decode_frame(coded: np.ndarray) -> np.ndarray:
    return coded.astype(np.float32) / np.float32(255)


@dataclass
class _Partial:
    episode_id: int
    seed: int
    obs: list = field(default_factory=list)
    diff_obs: list = field(default_factory=list)
    prev_action: list = field(default_factory=list)
    reward: list = field(default_factory=list)
    cont: list = field(default_factory=list)
    is_first: list = field(default_factory=list)

    def __len__(self):
        return len(self.obs)


class ReplayBuffer:
    def __init__(self, frame_shape: tuple[int, int, int], capacity: int = 100_000,
                 diff_config: DiffConfig | None = None):
        if capacity < 1:
            raise ConfigError(f"capacity must be >= 1, got {capacity}")
        self.frame_shape = tuple(frame_shape)
        self.capacity = capacity
        self.diff_config = diff_config or DiffConfig()
        self.episodes: list[Episode] = []
        self._partial: _Partial | None = None
        self._next_id = 0

    # ------------------------------------------------------------------
    def __len__(self) -> int:
        total = sum(len(ep) for ep in self.episodes)
        if self._partial is not None:
            total += len(self._partial)
        return total

    @property
    def num_sealed(self) -> int:
        return len(self.episodes)

    def append(self, obs: np.ndarray, diff_obs: np.ndarray, prev_action: int,
               reward: float, cont: int, is_first: bool, episode_seed: int = 0) -> None:
        """Stores one transition; a cont of 0 seals the episode."""
        if obs.shape != self.frame_shape:
            raise InputError(f"frame shape {obs.shape} != buffer shape {self.frame_shape}")
        if self._partial is None:
            self._partial = _Partial(self._next_id, episode_seed)
            self._next_id += 1
        p = self._partial
        p.obs.append(encode_frame(obs))
        p.diff_obs.append(encode_frame(diff_obs))
        p.prev_action.append(prev_action)
        p.reward.append(reward)
        p.cont.append(cont)
        p.is_first.append(1 if is_first else 0)
        if cont == 0:
            self._seal()
        self._evict()

    def _seal(self) -> None:
        p = self._partial
        self.episodes.append(Episode(
            p.episode_id, p.seed,
            np.stack(p.obs), np.stack(p.diff_obs),
            np.asarray(p.prev_action, dtype=np.int16),
            np.asarray(p.reward, dtype=np.float32),
            np.asarray(p.cont, dtype=np.uint8),
            np.asarray(p.is_first, dtype=np.uint8),
        ))
        self._partial = None

    def _evict(self) -> None:
        while len(self) > self.capacity and self.episodes:
            self.episodes.pop(0)

    # ------------------------------------------------------------------
    def _sealed_arrays(self) -> dict[str, np.ndarray]:
        if not self.episodes:
            raise NotReadyError("no sealed episodes yet")
        return {
            "obs": np.concatenate([ep.obs for ep in self.episodes]),
            "diff_obs": np.concatenate([ep.diff_obs for ep in self.episodes]),
            "prev_action": np.concatenate([ep.prev_action for ep in self.episodes]),
            "reward": np.concatenate([ep.reward for ep in self.episodes]),
            "cont": np.concatenate([ep.cont for ep in self.episodes]),
            "is_first": np.concatenate([ep.is_first for ep in self.episodes]),
        }

    def sample_batch(self, cfg: SampleConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
        """B uniformly-placed length-L windows over the sealed stream."""
        flat = self._sealed_arrays()
        total = flat["obs"].shape[0]
        if total < cfg.batch_length:
            raise NotReadyError(
                f"buffer holds {total} sealed transitions; need >= {cfg.batch_length}"
            )
        starts = rng.integers(0, total - cfg.batch_length + 1, size=cfg.batch_size)
        idx = starts[:, None] + np.arange(cfg.batch_length)[None, :]
        return {
            "obs": decode_frame(flat["obs"][idx]),
            "diff_obs": decode_frame(flat["diff_obs"][idx]),
            "prev_action": flat["prev_action"][idx].astype(np.int64),
            "reward": flat["reward"][idx].astype(np.float64),
            "cont": flat["cont"][idx].astype(np.float64),
            "is_first": flat["is_first"][idx].astype(np.float64),
        }

    # ------------------------------------------------------------------
    def save(self, path) -> None:
        records = list(self.episodes)
        if self._partial is not None and len(self._partial) > 0:
            p = self._partial
            records.append(Episode(
                p.episode_id, p.seed, np.stack(p.obs), np.stack(p.diff_obs),
                np.asarray(p.prev_action, dtype=np.int16),
                np.asarray(p.reward, dtype=np.float32),
                np.asarray(p.cont, dtype=np.uint8),
                np.asarray(p.is_first, dtype=np.uint8),
                sealed=False,
            ))
        header = {
            "magic": _MAGIC, "version": _VERSION,
            "episodes": len(records),
            "transitions": int(sum(len(r) for r in records)),
            "frame_dims": list(self.frame_shape),
            "capacity": self.capacity,
            "next_id": self._next_id,
            "diff_config": {
                "epsilon": self.diff_config.epsilon,
                "interval": self.diff_config.interval,
                "dilation_radius": self.diff_config.dilation_radius,
                "strategy": self.diff_config.strategy,
                "window_len": self.diff_config.window_len,
                "window_delta": self.diff_config.window_delta,
            },
        }
        with open(path, "wb") as f:
            f.write((json.dumps(header) + "\n").encode())
            for ep in records:
                meta = {"length": len(ep), "episode_id": ep.episode_id,
                        "seed": ep.seed, "sealed": ep.sealed}
                f.write((json.dumps(meta) + "\n").encode())
                for arr in (ep.obs, ep.diff_obs, ep.prev_action, ep.reward, ep.cont, ep.is_first):
                    f.write(_to_le(arr).tobytes())

    @classmethod
    def load(cls, path) -> "ReplayBuffer":
        with open(path, "rb") as f:
            data = f.read()
        stream = io.BytesIO(data)
        header = _read_json_line(stream, "header")
        if header.get("magic") != _MAGIC or header.get("version") != _VERSION:
            raise ReplayLoadError(f"bad replay header: {header.get('magic')}/{header.get('version')}")
        shape = tuple(header["frame_dims"])
        buf = cls(shape, capacity=header["capacity"], diff_config=DiffConfig(**header["diff_config"]))
        buf._next_id = header["next_id"]
        h, w, c = shape
        for i in range(header["episodes"]):
            meta = _read_json_line(stream, f"episode {i} meta")
            t = meta["length"]
            obs = _read_array(stream, np.uint8, (t, h, w, c), f"episode {i} obs")
            diff = _read_array(stream, np.uint8, (t, h, w, c), f"episode {i} diff_obs")
            act = _read_array(stream, np.dtype("<i2"), (t,), f"episode {i} actions")
            rew = _read_array(stream, np.dtype("<f4"), (t,), f"episode {i} rewards")
            cont = _read_array(stream, np.uint8, (t,), f"episode {i} cont")
            first = _read_array(stream, np.uint8, (t,), f"episode {i} is_first")
            ep = Episode(meta["episode_id"], meta["seed"], obs, diff,
                         act.astype(np.int16), rew.astype(np.float32), cont, first,
                         sealed=meta["sealed"])
            if ep.sealed:
                buf.episodes.append(ep)
            else:
                p = _Partial(ep.episode_id, ep.seed, list(ep.obs), list(ep.diff_obs),
                             list(ep.prev_action), list(ep.reward), list(ep.cont), list(ep.is_first))
                buf._partial = p
        if stream.read(1):
            raise ReplayLoadError("trailing bytes after the final episode record")
        return buf


def _to_le(arr: np.ndarray) -> np.ndarray:
    if arr.dtype == np.uint8:
        return arr
    return arr.astype(arr.dtype.newbyteorder("<"))


def _read_json_line(stream: io.BytesIO, what: str) -> dict:
    line = stream.readline()
    if not line.endswith(b"\n"):
        raise ReplayLoadError(f"truncated file while reading {what}")
    try:
        return json.loads(line)
    except json.JSONDecodeError as e:
        raise ReplayLoadError(f"corrupt {what}: {e}") from None


def _read_array(stream: io.BytesIO, dtype, shape, what: str) -> np.ndarray:
    count = int(np.prod(shape))
    raw = stream.read(count * np.dtype(dtype).itemsize)
    if len(raw) != count * np.dtype(dtype).itemsize:
        raise ReplayLoadError(f"truncated file while reading {what}")
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
