"""Episode-structured replay with hindsight relabelling ("future" strategy).

Relabelled transitions are materialised when an episode is stored, so the
buffer is a plain FIFO ring of flat columns and sampling is a single
uniform index draw.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .envsim import GoalObservation
from .numerics import ContractError


class InsufficientData(RuntimeError):
    """Raised when a batch is requested before the buffer holds enough transitions."""


@dataclass
class Transition:
    state_obs: GoalObservation
    action: np.ndarray
    reward: float
    next_obs: GoalObservation
    terminated: bool


@dataclass
class Minibatch:
    obs: np.ndarray
    goal: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    terminated: np.ndarray
    next_achieved: np.ndarray

    def __len__(self):
        return self.reward.shape[0]

    @property
    def inputs(self) -> np.ndarray:
        return np.concatenate([self.obs, self.goal], axis=1)

    @property
    def next_inputs(self) -> np.ndarray:
        return np.concatenate([self.next_obs, self.goal], axis=1)


_COLUMNS = ("obs", "goal", "action", "reward", "next_obs", "terminated", "next_achieved",
            "relabeled", "episode", "source_step", "goal_step")


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int, action_dim: int, goal_dim: int = 3):
        if capacity < 1:
            raise ContractError("capacity must be positive")
        self.capacity = int(capacity)
        self.obs_dim, self.action_dim, self.goal_dim = obs_dim, action_dim, goal_dim
        n = self.capacity
        self.obs = np.zeros((n, obs_dim))
        self.next_obs = np.zeros((n, obs_dim))
        self.goal = np.zeros((n, goal_dim))
        self.next_achieved = np.zeros((n, goal_dim))
        self.action = np.zeros((n, action_dim))
        self.reward = np.zeros(n)
        self.terminated = np.zeros(n)
        # bookkeeping used by the consistency checks
        self.relabeled = np.zeros(n, dtype=np.int64)
        self.episode = np.zeros(n, dtype=np.int64)
        self.source_step = np.zeros(n, dtype=np.int64)
        self.goal_step = np.zeros(n, dtype=np.int64)
        self.size = 0
        self.cursor = 0
        self.episodes_stored = 0
        self.last_stored = np.zeros(0, dtype=np.int64)

    def __len__(self):
        return self.size

    def _put(self, rows: dict):
        k = rows["reward"].shape[0]
        idx = (self.cursor + np.arange(k)) % self.capacity
        self.last_stored = idx
        for name, values in rows.items():
            getattr(self, name)[idx] = values
        self.cursor = int((self.cursor + k) % self.capacity)
        self.size = min(self.capacity, self.size + k)

    def order(self) -> np.ndarray:
        """Storage indices from oldest to newest."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (self.cursor + np.arange(self.capacity)) % self.capacity

    def save(self, path):
        """Binary snapshot: magic, five little-endian uint64 counts, then float64 columns."""
        with open(path, "wb") as fh:
            fh.write(_SNAPSHOT_MAGIC)
            fh.write(struct.pack("<5Q", self.capacity, self.obs_dim, self.action_dim,
                                 self.goal_dim, self.size))
            fh.write(struct.pack("<2Q", self.cursor, self.episodes_stored))
            order = self.order()
            for name in _COLUMNS:
                fh.write(np.ascontiguousarray(getattr(self, name)[order], dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ReplayBuffer":
        data = open(path, "rb").read()
        if not data.startswith(_SNAPSHOT_MAGIC):
            raise ContractError(f"{path} is not a replay snapshot")
        off = len(_SNAPSHOT_MAGIC)
        capacity, obs_dim, action_dim, goal_dim, size = struct.unpack_from("<5Q", data, off)
        off += 40
        _, episodes = struct.unpack_from("<2Q", data, off)
        off += 16
        buf = cls(capacity, obs_dim, action_dim, goal_dim)
        for name in _COLUMNS:
            col = getattr(buf, name)
            count = size * (col.shape[1] if col.ndim == 2 else 1)
            values = np.frombuffer(data, dtype="<f8", count=count, offset=off)
            off += 8 * count
            col[:size] = values.reshape((size,) + col.shape[1:]).astype(col.dtype)
        buf.size = size
        buf.cursor = size % capacity
        buf.episodes_stored = episodes
        return buf


_SNAPSHOT_MAGIC = b"TTRLBUF1"


def store_episode(buffer: ReplayBuffer, episode, her_k: int, rng: np.random.Generator,
                  reward_fn, success_fn=None) -> ReplayBuffer:
    """Store an episode plus ``her_k`` hindsight copies of each transition.

    A copy of step ``t`` takes as its goal the achieved goal observed at a
    uniformly drawn later step ``t' in (t, T-1]``; the final step has no
    later step and contributes no copies. ``reward_fn(achieved, desired)``
    recomputes the reward and ``success_fn`` (when given) the termination
    flag of each copy.
    """
    episode = list(episode)
    if not episode:
        raise ContractError("cannot store an empty episode")
    if her_k < 0:
        raise ContractError("her_k must be non-negative")
    T = len(episode)
    obs = np.stack([tr.state_obs.observation for tr in episode])
    next_obs = np.stack([tr.next_obs.observation for tr in episode])
    goal = np.stack([tr.state_obs.desired_goal for tr in episode])
    achieved = np.stack([tr.state_obs.achieved_goal for tr in episode])
    next_achieved = np.stack([tr.next_obs.achieved_goal for tr in episode])
    action = np.stack([np.asarray(tr.action, dtype=np.float64) for tr in episode])
    reward = np.array([tr.reward for tr in episode], dtype=np.float64)
    terminated = np.array([tr.terminated for tr in episode], dtype=np.float64)
    steps = np.arange(T)
    ep_id = buffer.episodes_stored

    rows = dict(obs=obs, next_obs=next_obs, goal=goal, next_achieved=next_achieved,
                action=action, reward=reward, terminated=terminated,
                relabeled=np.zeros(T, dtype=np.int64), episode=np.full(T, ep_id),
                source_step=steps, goal_step=np.full(T, -1))

    if her_k > 0 and T > 1:
        src = np.repeat(steps[:-1], her_k)
        # uniform over t+1 .. T-1 inclusive
        fut = src + 1 + np.floor(rng.random(src.shape[0]) * (T - 1 - src)).astype(np.int64)
        new_goal = achieved[fut]
        new_reward = np.asarray(reward_fn(next_achieved[src], new_goal), dtype=np.float64)
        if success_fn is not None:
            new_term = np.asarray(success_fn(next_achieved[src], new_goal), dtype=np.float64)
        else:
            new_term = terminated[src]
        n = src.shape[0]
        her = dict(obs=obs[src], next_obs=next_obs[src], goal=new_goal,
                   next_achieved=next_achieved[src], action=action[src],
                   reward=new_reward, terminated=new_term,
                   relabeled=np.ones(n, dtype=np.int64), episode=np.full(n, ep_id),
                   source_step=src, goal_step=fut)
        rows = {k: np.concatenate([rows[k], her[k]]) for k in rows}

    buffer._put(rows)
    buffer.episodes_stored += 1
    return buffer


def sample_batch(buffer: ReplayBuffer, batch_size: int, rng: np.random.Generator) -> Minibatch:
    """Uniform sampling with replacement."""
    if batch_size < 1:
        raise ContractError("batch_size must be positive")
    if buffer.size < batch_size:
        raise InsufficientData(f"buffer holds {buffer.size} transitions, need {batch_size}")
    idx = rng.integers(0, buffer.size, size=batch_size)
    return Minibatch(
        obs=buffer.obs[idx], goal=buffer.goal[idx], action=buffer.action[idx],
        reward=buffer.reward[idx], next_obs=buffer.next_obs[idx],
        terminated=buffer.terminated[idx], next_achieved=buffer.next_achieved[idx],
    )
