"""Training and evaluation loops."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..agents import TrainingDiverged, load_agent, make_agent, save_agent
from ..envsim import TabletopEnv, TaskConfig, compute_reward, is_success
from ..replay import ReplayBuffer, Transition, sample_batch, store_episode
from .config import RunConfig
from .curves import CURVE_HEADER, EvalRecord, curve_row

log = logging.getLogger(__name__)

_TRAIN_STREAM = 0
_EVAL_STREAM = 1


def episode_seed(seed: int, stream: int, index: int) -> int:
    """Reset seed of episode ``index`` in a run's train or eval stream."""
    return int(np.random.SeedSequence([seed, stream, index]).generate_state(1)[0])


def evaluate(agent, env_config: TaskConfig, n_episodes: int, seed: int, step: int = 0) -> EvalRecord:
    """Run ``n_episodes`` greedy episodes; success = object reached goal within the horizon."""
    env = TabletopEnv(env_config)
    successes = 0
    returns = 0.0
    for i in range(n_episodes):
        obs = env.reset(episode_seed(seed, _EVAL_STREAM, i))
        reached = False
        while True:
            action = agent.act(obs.observation, obs.desired_goal, False, None)
            res = env.step(action)
            returns += res.reward
            reached = reached or res.info["is_success"]
            obs = res.observation
            if res.terminated or res.truncated:
                break
        successes += int(reached)
    return EvalRecord(step, successes / n_episodes, returns / n_episodes, seed)


@dataclass
class RunArtifacts:
    records: list
    curve_path: Path
    checkpoint_path: Path
    agent: object
    wall_seconds: float


def curve_path(out_dir, seed) -> Path:
    return Path(out_dir) / f"curve_seed{seed}.csv"


def checkpoint_path(out_dir, seed) -> Path:
    return Path(out_dir) / f"checkpoint_seed{seed}.bin"


def train(config: RunConfig, progress=None) -> RunArtifacts:
    """Collect, relabel, update and periodically evaluate; fully determined by ``config``.

    ``progress(step, record)`` is called after each evaluation when given.
    """
    t0 = time.perf_counter()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    task_cfg = config.task_config()
    env = TabletopEnv(task_cfg)
    streams = np.random.SeedSequence([config.seed, 7]).spawn(3)
    act_rng, her_rng, update_rng = (np.random.default_rng(s) for s in streams)
    agent = make_agent(config.algorithm, task_cfg.observation_dim, 3, task_cfg.action_dim,
                       config.hyperparams(), seed=config.seed)
    buffer = ReplayBuffer(config.buffer_size, task_cfg.observation_dim, task_cfg.action_dim)

    def reward_fn(achieved, desired):
        return compute_reward(achieved, desired, task_cfg)

    def success_fn(achieved, desired):
        return is_success(achieved, desired, task_cfg)

    cpath = curve_path(out, config.seed)
    records = []
    fh = open(cpath, "w", newline="")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CURVE_HEADER)
    fh.flush()

    episode_index = 0
    obs = env.reset(episode_seed(config.seed, _TRAIN_STREAM, episode_index))
    episode = []
    try:
        for step in range(1, config.total_steps + 1):
            if step <= config.warmup_steps:
                action = act_rng.uniform(-1.0, 1.0, task_cfg.action_dim)
            else:
                action = agent.act(obs.observation, obs.desired_goal, True, act_rng)
            res = env.step(action)
            episode.append(Transition(obs, np.asarray(action, dtype=np.float64), res.reward,
                                      res.observation, res.terminated))
            obs = res.observation
            if res.terminated or res.truncated:
                store_episode(buffer, episode, config.her_k, her_rng, reward_fn, success_fn)
                idx = buffer.last_stored
                agent.observe(buffer.obs[idx], buffer.goal[idx])
                episode = []
                episode_index += 1
                obs = env.reset(episode_seed(config.seed, _TRAIN_STREAM, episode_index))
            if step > config.warmup_steps and buffer.size >= config.batch_size:
                agent.update(sample_batch(buffer, config.batch_size, update_rng), update_rng)
            if step % config.eval_interval == 0:
                rec = evaluate(agent, task_cfg, config.eval_episodes, config.seed, step)
                records.append(rec)
                writer.writerow(curve_row(rec))
                fh.flush()
                if progress is not None:
                    progress(step, rec)
    except TrainingDiverged as exc:
        fh.close()
        (out / f"diverged_seed{config.seed}.txt").write_text(
            f"training diverged after {agent.updates} updates: {exc}\n")
        raise
    fh.close()
    ckpt = checkpoint_path(out, config.seed)
    save_agent(agent, ckpt)
    return RunArtifacts(records, cpath, ckpt, agent, time.perf_counter() - t0)


@dataclass(frozen=True)
class FinalSummary:
    n_episodes: int
    successes: int
    mean: float
    std: float

    def __str__(self):
        return f"{self.mean:.1f} ± {self.std:.1f}"


def summarize_successes(flags) -> FinalSummary:
    """Percent success, mean +- population std over per-episode 0/1 outcomes."""
    arr = 100.0 * np.asarray(flags, dtype=np.float64)
    return FinalSummary(len(arr), int(np.sum(flags)), float(arr.mean()), float(arr.std()))


def final_test(checkpoint, env_config: TaskConfig, n_episodes: int = 20, seed: int = 0,
               summary_path=None) -> FinalSummary:
    """Load a checkpoint and score it greedily over ``n_episodes`` fresh episodes."""
    agent = load_agent(checkpoint) if not hasattr(checkpoint, "act") else checkpoint
    env = TabletopEnv(env_config)
    flags = []
    for i in range(n_episodes):
        obs = env.reset(episode_seed(seed, 2, i))
        reached = False
        while True:
            res = env.step(agent.act(obs.observation, obs.desired_goal, False, None))
            reached = reached or res.info["is_success"]
            obs = res.observation
            if res.terminated or res.truncated:
                break
        flags.append(reached)
    summary = summarize_successes(flags)
    if summary_path is not None:
        with open(summary_path, "a") as fh:
            fh.write(f"{env_config.task_kind.value} seed={seed} episodes={n_episodes} "
                     f"success={summary}\n")
    return summary
