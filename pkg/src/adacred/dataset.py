"""Offline trajectories, return-to-go, the ADCR container and window batching.

ADCR layout (version 1). Multi-byte fields use the byte order named by the
endianness flag; frames, actions and rewards are stored in that order too
and are byte-swapped on read when it differs from the host.

    4s   magic  b"ADCR"
    u16  version (1)
    u8   endianness flag (0 little, 1 big)
    u32  trajectory count
    u32  header length, then UTF-8 JSON header (gamma, imitation_mode, env)
    per trajectory:
      u32  T
      u8   observation dtype code (1 = float32)
      u8   observation ndim, then u32 * ndim per-frame shape
      f32  (T + 1) frames
      u16  T actions
      f32  T rewards
      u32  metadata length, then UTF-8 JSON metadata
      u32  CRC32 of the record bytes from T through the metadata
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParameterError, SamplingError

MAGIC = b"ADCR"
VERSION = 1
_DTYPE_CODES = {1: np.float32}


def compute_return_to_go(rewards, gamma: float = 1.0) -> np.ndarray:
    """Suffix discounted sums: ``rtg[t] = sum_{k >= t} gamma**(k - t) * r[k]``."""
    if not 0.0 <= gamma <= 1.0:
        raise ParameterError(f"gamma must lie in [0, 1], got {gamma}")
    rewards = np.asarray(rewards, dtype=np.float64)
    if not np.isfinite(rewards).all():
        raise ParameterError("rewards must be finite")
    out = np.zeros_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


@dataclass
class Trajectory:
    observations: np.ndarray   # (T + 1, *obs_shape) float32
    actions: np.ndarray        # (T,) int
    rewards: np.ndarray        # (T,) float32
    gamma: float = 1.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float32)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.rewards = np.asarray(self.rewards, dtype=np.float32)
        if not (len(self.actions) == len(self.rewards) == len(self.observations) - 1):
            raise ValueError("trajectory needs T actions, T rewards and T + 1 observations")
        self.returns_to_go = compute_return_to_go(self.rewards, self.gamma).astype(np.float32)

    def __len__(self):
        return len(self.actions)

    @property
    def ret(self) -> float:
        return float(self.returns_to_go[0]) if len(self) else 0.0


class OfflineDataset:
    """Trajectories plus per-channel observation statistics.

    Statistics come from the first ``train_count`` trajectories only (all of
    them by default); :meth:`split` shares them with the held-out part.
    """

    def __init__(self, trajectories, gamma: float = 1.0, imitation_mode: bool = False,
                 env: str = "", stats=None, train_count: int | None = None):
        self.trajectories = list(trajectories)
        self.gamma = gamma
        self.imitation_mode = imitation_mode
        self.env = env
        if stats is None and self.trajectories:
            stats = self._stats(self.trajectories[:train_count])
        self.obs_mean, self.obs_std = stats if stats is not None else (None, None)

    @staticmethod
    def _stats(trajs):
        frames = np.concatenate([t.observations for t in trajs], axis=0)
        axes = (0,) + tuple(range(2, frames.ndim))
        mean = frames.mean(axis=axes, dtype=np.float64)
        std = frames.std(axis=axes, dtype=np.float64)
        std = np.where(std < 1e-6, 1.0, std)
        return mean.astype(np.float32), std.astype(np.float32)

    def split(self, val_fraction: float):
        n_train = max(1, int(round(len(self) * (1.0 - val_fraction))))
        stats = self._stats(self.trajectories[:n_train])
        kw = dict(gamma=self.gamma, imitation_mode=self.imitation_mode, env=self.env, stats=stats)
        return (OfflineDataset(self.trajectories[:n_train], **kw),
                OfflineDataset(self.trajectories[n_train:], **kw))

    def __len__(self):
        return len(self.trajectories)

    def rewards(self, i: int) -> np.ndarray:
        t = self.trajectories[i]
        return np.zeros_like(t.rewards) if self.imitation_mode else t.rewards

    def returns_to_go(self, i: int) -> np.ndarray:
        t = self.trajectories[i]
        return np.zeros_like(t.returns_to_go) if self.imitation_mode else t.returns_to_go

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        return normalize_obs(obs, self.obs_mean, self.obs_std, len(self.obs_shape))

    @property
    def obs_shape(self) -> tuple:
        return self.trajectories[0].observations.shape[1:]

    def episode_returns(self) -> np.ndarray:
        return np.array([self.returns_to_go(i)[0] if len(t) else 0.0
                         for i, t in enumerate(self.trajectories)])

    def max_return(self) -> float:
        return float(max(t.ret for t in self.trajectories))


# -- binary container -------------------------------------------------------

def write_dataset(ds: OfflineDataset, path, byteorder: str = "little") -> None:
    if byteorder not in ("little", "big"):
        raise ParameterError("byteorder must be 'little' or 'big'")
    e = "<" if byteorder == "little" else ">"
    header = json.dumps({"gamma": ds.gamma, "imitation_mode": ds.imitation_mode, "env": ds.env},
                        sort_keys=True).encode()
    parts = [MAGIC, struct.pack(e + "HBI", VERSION, 0 if e == "<" else 1, len(ds)),
             struct.pack(e + "I", len(header)), header]
    for traj in ds.trajectories:
        frame_shape = traj.observations.shape[1:]
        rewards = np.zeros_like(traj.rewards) if ds.imitation_mode else traj.rewards
        meta = json.dumps(traj.metadata, sort_keys=True).encode()
        rec = b"".join([
            struct.pack(e + "IBB", len(traj), 1, len(frame_shape)),
            struct.pack(e + "I" * len(frame_shape), *frame_shape),
            traj.observations.astype(e + "f4").tobytes(),
            traj.actions.astype(e + "u2").tobytes(),
            rewards.astype(e + "f4").tobytes(),
            struct.pack(e + "I", len(meta)), meta,
        ])
        parts += [rec, struct.pack(e + "I", zlib.crc32(rec))]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0
        self.e = "<"

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated file while reading {what}", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        size = struct.calcsize(self.e + fmt)
        return struct.unpack(self.e + fmt, self.take(size, what))


def read_dataset(path) -> OfflineDataset:
    with open(path, "rb") as fh:
        buf = fh.read()
    rd = _Reader(buf)
    if rd.take(4, "magic") != MAGIC:
        raise FormatError("bad magic bytes, not an ADCR file", 0)
    (version,) = struct.unpack("<H", rd.take(2, "version"))
    flag = rd.take(1, "endianness flag")[0]
    if flag not in (0, 1):
        raise FormatError(f"unknown endianness flag {flag}", 6)
    if flag == 1:
        rd.e = ">"
        (version,) = struct.unpack(">H", buf[4:6])
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    (count,) = rd.unpack("I", "trajectory count")
    (hlen,) = rd.unpack("I", "header length")
    hpos = rd.pos
    try:
        header = json.loads(rd.take(hlen, "header").decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt header: {exc}", hpos) from None
    e = rd.e
    trajs = []
    for i in range(count):
        start = rd.pos
        T, code, ndim = rd.unpack("IBB", f"trajectory {i} length")
        if code not in _DTYPE_CODES:
            raise FormatError(f"unknown observation dtype code {code}", start + 4)
        shape = rd.unpack("I" * ndim, "frame shape")
        n_obs = (T + 1) * int(np.prod(shape))
        obs = np.frombuffer(rd.take(4 * n_obs, "frames"), dtype=e + "f4").astype(np.float32)
        actions = np.frombuffer(rd.take(2 * T, "actions"), dtype=e + "u2").astype(np.int64)
        rewards = np.frombuffer(rd.take(4 * T, "rewards"), dtype=e + "f4").astype(np.float32)
        (mlen,) = rd.unpack("I", "metadata length")
        meta_bytes = rd.take(mlen, "metadata")
        end = rd.pos
        (crc,) = rd.unpack("I", "checksum")
        if zlib.crc32(buf[start:end]) != crc:
            raise FormatError(f"CRC mismatch in trajectory {i}", start)
        trajs.append(Trajectory(obs.reshape((T + 1,) + tuple(shape)), actions, rewards,
                                gamma=header["gamma"], metadata=json.loads(meta_bytes.decode())))
    if rd.pos != len(buf):
        raise FormatError("trailing bytes after last trajectory", rd.pos)
    return OfflineDataset(trajs, gamma=header["gamma"], imitation_mode=header["imitation_mode"],
                          env=header.get("env", ""))


# -- batching -----------------------------------------------------------------

@dataclass
class SequenceBatch:
    observations: np.ndarray   # (B, T, *obs_shape), normalized
    prev_actions: np.ndarray   # (B, T) int; start_id at episode start and on padding
    rtg: np.ndarray            # (B, T) reward-token values
    actions: np.ndarray        # (B, T) targets
    valid: np.ndarray          # (B, T) bool; False on left padding
    starts: np.ndarray = None  # (B, 2) trajectory index and window start

    @property
    def shape(self):
        return self.actions.shape


def window(ds: OfflineDataset, traj_idx: int, start: int, ctx: int, start_id: int,
           reward_token: str = "rtg"):
    """Slice ``[start, start + ctx)`` of a trajectory; negative starts left-pad."""
    traj = ds.trajectories[traj_idx]
    obs_shape = traj.observations.shape[1:]
    obs = np.zeros((ctx,) + obs_shape, dtype=np.float32)
    prev = np.full(ctx, start_id, dtype=np.int64)
    tok = np.zeros(ctx, dtype=np.float32)
    act = np.zeros(ctx, dtype=np.int64)
    valid = np.zeros(ctx, dtype=bool)
    lo = max(start, 0)
    hi = start + ctx
    off = lo - start
    n = hi - lo
    obs[off:] = traj.observations[lo:hi]
    act[off:] = traj.actions[lo:hi]
    src = ds.returns_to_go(traj_idx) if reward_token == "rtg" else ds.rewards(traj_idx)
    tok[off:] = src[lo:hi]
    valid[off:] = True
    if lo > 0:
        prev[off] = traj.actions[lo - 1]
    prev[off + 1:] = traj.actions[lo:hi - 1][: n - 1]
    return obs, prev, tok, act, valid


def sample_batch(ds: OfflineDataset, batch_size: int, ctx: int, rng: np.random.Generator,
                 start_id: int | None = None, reward_token: str = "rtg",
                 normalize: bool = True) -> SequenceBatch:
    """Draw windows uniformly over every (trajectory, start) pair.

    A trajectory of length T contributes T starts, ``-(ctx-1) .. T-ctx``;
    the ``T - ctx + 1`` non-negative ones are unpadded.
    """
    if ctx < 1:
        raise SamplingError("context length must be >= 1")
    if not len(ds):
        raise SamplingError("dataset is empty")
    lengths = np.array([len(t) for t in ds.trajectories])
    if ctx > lengths.max():
        raise SamplingError(f"context {ctx} longer than every trajectory (max {lengths.max()})")
    eligible = np.where(lengths >= ctx, lengths, 0)
    bounds = np.cumsum(eligible)
    if start_id is None:
        start_id = int(max(int(t.actions.max()) for t in ds.trajectories if len(t)) + 1)
    flat = rng.integers(0, bounds[-1], size=batch_size)
    tidx = np.searchsorted(bounds, flat, side="right")
    offsets = flat - np.concatenate([[0], bounds[:-1]])[tidx]
    starts = offsets - (ctx - 1)
    parts = [window(ds, int(i), int(s), ctx, start_id, reward_token) for i, s in zip(tidx, starts)]
    obs, prev, tok, act, valid = (np.stack(x) for x in zip(*parts))
    if normalize and ds.obs_mean is not None:
        obs = ds.normalize(obs)
    return SequenceBatch(obs, prev, tok, act, valid, np.stack([tidx, starts], axis=1))


def normalize_obs(obs: np.ndarray, mean: np.ndarray, std: np.ndarray, frame_ndim: int) -> np.ndarray:
    """Per-channel standardization; the channel axis leads each frame."""
    shape = (-1,) + (1,) * (frame_ndim - 1)
    return ((obs - mean.reshape(shape)) / std.reshape(shape)).astype(np.float32)
