"""DDPG, SAC and TQC learners sharing one act/update interface."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..numerics import AdamState, ContractError, MlpNetwork, adam_step, polyak_update
from . import losses as L
from .normalizer import RunningNormalizer


class TrainingDiverged(FloatingPointError):
    """A loss or parameter became non-finite during an update."""


@dataclass
class AlgoHyperParams:
    gamma: float = 0.95
    learning_rate: float = 1e-3
    polyak_tau: float = 0.05
    batch_size: int = 512
    hidden_sizes: tuple = (256, 256, 256)
    action_noise_std: float = 0.2
    policy_delay: int = 1
    init_alpha: float = 1.0
    entropy_target: float | None = None  # None -> -action_dim
    sac_extra_noise: bool = True
    n_critics: int = 2
    n_quantiles: int = 25
    drop_per_critic: int = 2
    normalize_inputs: bool = True

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ContractError("gamma must lie in [0, 1]")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.policy_delay < 1:
            raise ContractError("learning rate, batch size and policy delay must be positive")
        if not 0.0 <= self.polyak_tau <= 1.0:
            raise ContractError("polyak_tau must lie in [0, 1]")
        if self.action_noise_std < 0 or self.init_alpha <= 0:
            raise ContractError("noise std must be >= 0 and initial alpha > 0")
        if not 0 <= self.drop_per_critic < self.n_quantiles:
            raise ContractError("drop_per_critic must lie in [0, n_quantiles)")
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)


def _check_finite(diag: dict):
    bad = {k: v for k, v in diag.items() if isinstance(v, float) and not math.isfinite(v)}
    if bad:
        raise TrainingDiverged(f"non-finite training quantities: {bad}")


@dataclass
class PreparedBatch:
    """Minibatch with network-ready (normalised) inputs."""

    inputs: np.ndarray
    next_inputs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    terminated: np.ndarray

    def __len__(self):
        return self.reward.shape[0]


class Agent:
    """Common plumbing: network bookkeeping, optimisers, checkpoint arrays."""

    algorithm = ""

    def __init__(self, obs_dim: int, goal_dim: int, action_dim: int,
                 hp: AlgoHyperParams, rng: np.random.Generator):
        self.obs_dim, self.goal_dim, self.action_dim = obs_dim, goal_dim, action_dim
        self.input_dim = obs_dim + goal_dim
        self.hp = hp
        self.updates = 0
        self.normalizer = RunningNormalizer(self.input_dim) if hp.normalize_inputs else None
        self._build(rng)

    # subclasses fill these in
    def _build(self, rng):
        raise NotImplementedError

    def named_networks(self) -> dict[str, MlpNetwork]:
        raise NotImplementedError

    def optimizers(self) -> dict[str, AdamState]:
        raise NotImplementedError

    def _mlp(self, n_in, n_out, rng, output_activation="identity"):
        sizes = [n_in, *self.hp.hidden_sizes, n_out]
        return MlpNetwork(sizes, output_activation=output_activation, rng=rng)

    def _adam(self, params):
        return AdamState.for_params(params, learning_rate=self.hp.learning_rate)

    def agent_input(self, observation, desired_goal):
        obs = np.asarray(observation, dtype=np.float64)
        goal = np.asarray(desired_goal, dtype=np.float64)
        if obs.shape[-1] != self.obs_dim or goal.shape[-1] != self.goal_dim:
            raise ContractError(
                f"agent expects observation {self.obs_dim} + goal {self.goal_dim}, "
                f"got {obs.shape[-1]} + {goal.shape[-1]}"
            )
        return self._norm(np.concatenate([obs, goal], axis=-1))

    def _norm(self, x):
        return x if self.normalizer is None else self.normalizer(x)

    def observe(self, observations, goals):
        """Feed raw (observation, goal) rows to the input statistics."""
        if self.normalizer is not None:
            self.normalizer.update(np.concatenate([observations, goals], axis=-1))

    def prepare(self, batch) -> "PreparedBatch":
        return PreparedBatch(self._norm(batch.inputs), self._norm(batch.next_inputs),
                             batch.action, batch.reward, batch.terminated)

    def act(self, observation, desired_goal, explore: bool, rng: np.random.Generator):
        raise NotImplementedError

    def update(self, batch, rng: np.random.Generator) -> dict:
        raise NotImplementedError

    def scalars(self) -> dict[str, float]:
        return {}

    def set_scalars(self, values: dict[str, float]):
        pass


class DdpgAgent(Agent):
    algorithm = "ddpg"

    def _build(self, rng):
        self.actor = self._mlp(self.input_dim, self.action_dim, rng, "tanh")
        self.critic = self._mlp(self.input_dim + self.action_dim, 1, rng)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.actor_opt = self._adam(self.actor.params())
        self.critic_opt = self._adam(self.critic.params())

    def named_networks(self):
        return {"actor": self.actor, "critic": self.critic,
                "target_actor": self.target_actor, "target_critic": self.target_critic}

    def optimizers(self):
        return {"actor": self.actor_opt, "critic": self.critic_opt}

    def act(self, observation, desired_goal, explore, rng):
        a = self.actor.forward(self.agent_input(observation, desired_goal))
        if explore and self.hp.action_noise_std > 0:
            a = np.clip(a + self.hp.action_noise_std * rng.standard_normal(a.shape), -1.0, 1.0)
        return a

    def update(self, batch, rng):
        batch = self.prepare(batch)
        hp = self.hp
        y = L.ddpg_target(batch, self.target_actor, self.target_critic, hp.gamma)
        c_loss, c_grads = L.ddpg_critic_loss(batch, self.critic, y)
        adam_step(self.critic.params(), c_grads, self.critic_opt)
        diag = {"critic_loss": c_loss}
        self.updates += 1
        if self.updates % hp.policy_delay == 0:
            a_loss, a_grads = L.ddpg_actor_loss(batch, self.actor, self.critic)
            adam_step(self.actor.params(), a_grads, self.actor_opt)
            diag["actor_loss"] = a_loss
        polyak_update(self.target_critic.params(), self.critic.params(), hp.polyak_tau)
        polyak_update(self.target_actor.params(), self.actor.params(), hp.polyak_tau)
        _check_finite(diag)
        return diag


class _EntropyAgent(Agent):
    """Shared stochastic actor and temperature handling for SAC and TQC."""

    extra_noise = False

    def _build_actor(self, rng):
        self.actor = self._mlp(self.input_dim, 2 * self.action_dim, rng)
        self.actor_opt = self._adam(self.actor.params())
        self.log_alpha = math.log(self.hp.init_alpha)
        self.alpha_opt = AdamState.for_params([np.zeros(1)], learning_rate=self.hp.learning_rate)

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    @property
    def entropy_target(self) -> float:
        if self.hp.entropy_target is not None:
            return self.hp.entropy_target
        return -float(self.action_dim)

    def scalars(self):
        return {"log_alpha": self.log_alpha}

    def set_scalars(self, values):
        self.log_alpha = float(values["log_alpha"])

    def act(self, observation, desired_goal, explore, rng):
        x = self.agent_input(observation, desired_goal)
        if not explore:
            return L.deterministic_action(self.actor, x)
        noise = rng.standard_normal(x.shape[:-1] + (self.action_dim,))
        sample, _ = L.policy_sample(self.actor, x, noise)
        a = sample.sampled_action
        if self.extra_noise and self.hp.sac_extra_noise and self.hp.action_noise_std > 0:
            a = np.clip(a + self.hp.action_noise_std * rng.standard_normal(a.shape), -1.0, 1.0)
        return a

    def _update_alpha(self, log_probs):
        loss, grad = L.alpha_loss(log_probs, self.log_alpha, self.entropy_target)
        param = np.array([self.log_alpha])
        adam_step([param], [np.array([grad])], self.alpha_opt)
        self.log_alpha = float(param[0])
        return loss

    def _noise(self, rng, n):
        return rng.standard_normal((n, self.action_dim))


class SacAgent(_EntropyAgent):
    algorithm = "sac"
    extra_noise = True

    def _build(self, rng):
        self._build_actor(rng)
        self.critics = [self._mlp(self.input_dim + self.action_dim, 1, rng) for _ in range(2)]
        self.target_critics = [c.copy() for c in self.critics]
        self.critic_opts = [self._adam(c.params()) for c in self.critics]

    def named_networks(self):
        nets = {"actor": self.actor}
        for i, (c, t) in enumerate(zip(self.critics, self.target_critics)):
            nets[f"critic{i}"] = c
            nets[f"target_critic{i}"] = t
        return nets

    def optimizers(self):
        opts = {"actor": self.actor_opt, "alpha": self.alpha_opt}
        for i, o in enumerate(self.critic_opts):
            opts[f"critic{i}"] = o
        return opts

    def update(self, batch, rng):
        batch = self.prepare(batch)
        hp = self.hp
        n = len(batch)
        alpha = self.alpha
        y = L.sac_target(batch, self.target_critics, self.actor, alpha, hp.gamma, self._noise(rng, n))
        c_loss, c_grads = L.sac_critic_loss(batch, self.critics, y)
        for c, g, opt in zip(self.critics, c_grads, self.critic_opts):
            adam_step(c.params(), g, opt)
        a_loss, a_grads, log_probs = L.sac_actor_loss(
            batch, self.actor, self.critics, alpha, self._noise(rng, n))
        adam_step(self.actor.params(), a_grads, self.actor_opt)
        al_loss = self._update_alpha(log_probs)
        for c, t in zip(self.critics, self.target_critics):
            polyak_update(t.params(), c.params(), hp.polyak_tau)
        self.updates += 1
        diag = {"critic_loss": c_loss, "actor_loss": a_loss, "alpha_loss": al_loss,
                "alpha": self.alpha, "entropy": -float(np.mean(log_probs))}
        _check_finite(diag)
        return diag


class TqcAgent(_EntropyAgent):
    algorithm = "tqc"

    def _build(self, rng):
        self._build_actor(rng)
        nets = [self._mlp(self.input_dim + self.action_dim, self.hp.n_quantiles, rng)
                for _ in range(self.hp.n_critics)]
        self.bank = L.QuantileCriticBank(nets, self.hp.n_quantiles)
        self.target_bank = self.bank.copy()
        self.critic_opts = [self._adam(net.params()) for net in self.bank.nets]

    def named_networks(self):
        nets = {"actor": self.actor}
        for i, (c, t) in enumerate(zip(self.bank.nets, self.target_bank.nets)):
            nets[f"critic{i}"] = c
            nets[f"target_critic{i}"] = t
        return nets

    def optimizers(self):
        opts = {"actor": self.actor_opt, "alpha": self.alpha_opt}
        for i, o in enumerate(self.critic_opts):
            opts[f"critic{i}"] = o
        return opts

    def update(self, batch, rng):
        batch = self.prepare(batch)
        hp = self.hp
        n = len(batch)
        alpha = self.alpha
        y = L.tqc_critic_targets(batch, self.target_bank, self.actor, alpha, hp.gamma,
                                 hp.drop_per_critic, self._noise(rng, n))
        c_loss, c_grads = L.tqc_critic_loss(batch, self.bank, y)
        for net, g, opt in zip(self.bank.nets, c_grads, self.critic_opts):
            adam_step(net.params(), g, opt)
        a_loss, a_grads, log_probs = L.tqc_actor_loss(
            batch, self.actor, self.bank, alpha, self._noise(rng, n))
        adam_step(self.actor.params(), a_grads, self.actor_opt)
        al_loss = self._update_alpha(log_probs)
        polyak_update(self.target_bank.params(), self.bank.params(), hp.polyak_tau)
        self.updates += 1
        diag = {"critic_loss": c_loss, "actor_loss": a_loss, "alpha_loss": al_loss,
                "alpha": self.alpha, "entropy": -float(np.mean(log_probs)),
                "atom_mean": float(np.mean(y)), "atom_std": float(np.std(y))}
        _check_finite(diag)
        return diag


AGENTS = {cls.algorithm: cls for cls in (DdpgAgent, SacAgent, TqcAgent)}


def make_agent(algorithm: str, obs_dim: int, goal_dim: int, action_dim: int,
               hp: AlgoHyperParams | None = None, seed: int = 0) -> Agent:
    try:
        cls = AGENTS[algorithm.lower()]
    except KeyError:
        raise ContractError(f"unknown algorithm {algorithm!r}") from None
    return cls(obs_dim, goal_dim, action_dim, hp or AlgoHyperParams(),
               np.random.default_rng(seed))


def select_action(agent: Agent, observation, desired_goal, explore: bool, rng):
    return agent.act(observation, desired_goal, explore, rng)


def agent_update(agent: Agent, minibatch, rng) -> dict:
    return agent.update(minibatch, rng)
