"""Targets and losses for DDPG, SAC and TQC.

Each loss returns the scalar value together with parameter gradients laid
out like ``net.params()``. "Maximise" objectives are returned negated so a
single descent optimiser serves every network. Sampling noise is always an
explicit argument, which keeps every function deterministic.
"""
from __future__ import annotations

import numba
import numpy as np

from ..numerics import (
    ContractError,
    MlpNetwork,
    clamp_log_std,
    squashed_gaussian_backward,
    squashed_gaussian_sample,
)


def _critic_input(states, actions):
    return np.concatenate([states, actions], axis=-1)


def _mask(terminated):
    return 1.0 - np.asarray(terminated, dtype=np.float64)


# ---------------------------------------------------------------------------
# stochastic policy head

def policy_sample(actor: MlpNetwork, states, noise):
    """Run the Gaussian policy head and draw reparameterised actions.

    The actor emits ``[mean, raw_log_std]``. Returns the sample record and a
    cache for :func:`policy_backward`.
    """
    out, cache = actor.forward_cached(states)
    a_dim = out.shape[-1] // 2
    mean = out[..., :a_dim]
    log_std, mask = clamp_log_std(out[..., a_dim:])
    sample = squashed_gaussian_sample(mean, log_std, noise)
    return sample, (cache, mask)


def policy_backward(actor: MlpNetwork, sample, cache, d_action, d_log_prob):
    net_cache, mask = cache
    d_mean, d_log_std = squashed_gaussian_backward(sample, d_action, d_log_prob)
    upstream = np.concatenate([d_mean, d_log_std * mask], axis=-1)
    grads, _ = actor.backward(net_cache, upstream, need_input_grad=False)
    return grads


def deterministic_action(actor: MlpNetwork, states):
    out = actor.forward(states)
    a_dim = out.shape[-1] // 2
    return np.tanh(out[..., :a_dim])


# ---------------------------------------------------------------------------
# DDPG

def ddpg_target(batch, target_actor: MlpNetwork, target_critic: MlpNetwork, gamma: float):
    """y = r + gamma * (1 - d) * Q_targ(s', pi_targ(s'))."""
    nxt = batch.next_inputs
    q_next = target_critic.forward(_critic_input(nxt, target_actor.forward(nxt)))[:, 0]
    return batch.reward + gamma * _mask(batch.terminated) * q_next


def mse_critic_loss(critic: MlpNetwork, states, actions, targets):
    q, cache = critic.forward_cached(_critic_input(states, actions))
    diff = q[:, 0] - targets
    n = diff.shape[0]
    loss = float(np.mean(diff * diff))
    grads, _ = critic.backward(cache, (2.0 / n) * diff[:, None], need_input_grad=False)
    return loss, grads


def ddpg_critic_loss(batch, critic: MlpNetwork, targets):
    """Mean squared TD error; gradients w.r.t. the critic only."""
    return mse_critic_loss(critic, batch.inputs, batch.action, targets)


def ddpg_actor_loss(batch, actor: MlpNetwork, critic: MlpNetwork):
    """-mean Q(s, pi(s)); gradients w.r.t. the actor (critic held fixed)."""
    states = batch.inputs
    a, a_cache = actor.forward_cached(states)
    q, q_cache = critic.forward_cached(_critic_input(states, a))
    n = q.shape[0]
    _, d_in = critic.backward(q_cache, np.full_like(q, -1.0 / n), need_param_grads=False)
    d_action = d_in[:, states.shape[1]:]
    grads, _ = actor.backward(a_cache, d_action, need_input_grad=False)
    return -float(np.mean(q)), grads


# ---------------------------------------------------------------------------
# SAC

def sac_target(batch, target_critics, actor: MlpNetwork, alpha: float, gamma: float, noise):
    """y = r + gamma (1 - d) (min_j Q_targ_j(s', a~') - alpha log pi(a~'|s'))."""
    nxt = batch.next_inputs
    sample, _ = policy_sample(actor, nxt, noise)
    x = _critic_input(nxt, sample.sampled_action)
    q_min = np.min(np.stack([c.forward(x)[:, 0] for c in target_critics]), axis=0)
    return batch.reward + gamma * _mask(batch.terminated) * (q_min - alpha * sample.log_prob)


def sac_critic_loss(batch, critics, targets):
    """Sum over the twin critics of their mean squared errors."""
    total = 0.0
    all_grads = []
    for c in critics:
        loss, grads = mse_critic_loss(c, batch.inputs, batch.action, targets)
        total += loss
        all_grads.append(grads)
    return total, all_grads


def sac_actor_loss(batch, actor: MlpNetwork, critics, alpha: float, noise):
    """mean(alpha log pi(a~|s) - min_i Q_i(s, a~)).

    Returns ``(loss, actor_grads, log_probs)``; the log-probs feed the
    temperature update.
    """
    states = batch.inputs
    sample, cache = policy_sample(actor, states, noise)
    x = _critic_input(states, sample.sampled_action)
    outs = [c.forward_cached(x) for c in critics]
    qs = np.stack([q[:, 0] for q, _ in outs])
    pick = np.argmin(qs, axis=0)
    q_min = qs[pick, np.arange(qs.shape[1])]
    n = q_min.shape[0]
    d_action = np.zeros_like(sample.sampled_action)
    for j, (c, (q, qc)) in enumerate(zip(critics, outs)):
        sel = (pick == j).astype(np.float64)
        if not sel.any():
            continue
        _, d_in = c.backward(qc, (-sel / n)[:, None], need_param_grads=False)
        d_action += d_in[:, states.shape[1]:]
    d_logp = np.full(n, alpha / n)
    grads = policy_backward(actor, sample, cache, d_action, d_logp)
    loss = float(np.mean(alpha * sample.log_prob - q_min))
    return loss, grads, sample.log_prob


def alpha_loss(log_probs, log_alpha: float, entropy_target: float):
    """mean(-log_alpha * (log pi + H_T)); returns ``(loss, d loss / d log_alpha)``."""
    m = float(np.mean(np.asarray(log_probs, dtype=np.float64) + entropy_target))
    return -log_alpha * m, -m


# ---------------------------------------------------------------------------
# TQC

def quantile_fractions(n_quantiles: int) -> np.ndarray:
    """Midpoint quantile levels (2m - 1) / (2M), m = 1..M."""
    m = np.arange(1, n_quantiles + 1, dtype=np.float64)
    return (2.0 * m - 1.0) / (2.0 * n_quantiles)


def tqc_pool_and_truncate(atoms, drop_per_critic: int):
    """Pool N x M atoms, sort ascending and keep the smallest (M - drop) * N.

    ``atoms`` has shape ``(N, M)`` or ``(B, N, M)``.
    """
    atoms = np.asarray(atoms, dtype=np.float64)
    n, m = atoms.shape[-2:]
    if not 0 <= drop_per_critic < m:
        raise ContractError(f"drop_per_critic must lie in [0, {m}), got {drop_per_critic}")
    pooled = np.sort(atoms.reshape(atoms.shape[:-2] + (n * m,)), axis=-1)
    return pooled[..., : (m - drop_per_critic) * n]


def tqc_target_atoms(kept_atoms, reward, terminated, gamma, alpha, log_prob_next):
    """y_i = r + gamma (1 - d) (z_i - alpha log pi(a~'|s'))."""
    kept = np.asarray(kept_atoms, dtype=np.float64)
    r = np.asarray(reward, dtype=np.float64)[..., None]
    mask = _mask(terminated)[..., None]
    lp = np.asarray(log_prob_next, dtype=np.float64)[..., None]
    return r + gamma * mask * (kept - alpha * lp)


def huber(u):
    a = np.abs(u)
    return np.where(a <= 1.0, 0.5 * u * u, a - 0.5)


def huber_quantile_loss(predicted, targets, fractions):
    """Quantile Huber loss of one critic, averaged over atoms, targets and batch.

    ``predicted`` is ``(M,)`` or ``(B, M)``; ``targets`` is ``(K,)`` or ``(B, K)``.
    """
    loss, _ = huber_quantile_loss_and_grad(predicted, targets, fractions)
    return loss


def huber_quantile_loss_and_grad(predicted, targets, fractions):
    """Loss and its gradient w.r.t. ``predicted`` (same shape as ``predicted``)."""
    pred = np.atleast_2d(np.asarray(predicted, dtype=np.float64))
    targ = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    tau = np.asarray(fractions, dtype=np.float64)
    if pred.shape[0] != targ.shape[0] or pred.shape[1] != tau.shape[0]:
        raise ContractError("predicted atoms, targets and fractions disagree in shape")
    loss, grad = _quantile_huber_kernel(np.ascontiguousarray(pred), np.ascontiguousarray(targ), tau)
    return float(loss), grad.reshape(np.shape(predicted))


def quantile_huber_numpy(pred, targ, tau):
    """Vectorised reference used to cross-check the compiled kernel."""
    b, m = pred.shape
    k = targ.shape[1]
    u = targ[:, None, :] - pred[:, :, None]  # (B, M, K)
    weight = np.abs(tau[None, :, None] - (u < 0.0))
    scale = 1.0 / (b * m * k)
    loss = np.sum(weight * huber(u)) * scale
    # d/dpred of huber(targ - pred) = -clip(u, -1, 1)
    grad = -np.sum(weight * np.clip(u, -1.0, 1.0), axis=2) * scale
    return loss, grad


@numba.njit(cache=True)
def _quantile_huber_kernel(pred, targ, tau):
    b, m = pred.shape
    k = targ.shape[1]
    scale = 1.0 / (b * m * k)
    grad = np.empty((b, m))
    total = 0.0
    for r in range(b):
        for j in range(m):
            p = pred[r, j]
            t = tau[j]
            acc = 0.0
            g = 0.0
            for i in range(k):
                u = targ[r, i] - p
                w = t if u >= 0.0 else 1.0 - t
                if u > 1.0:
                    acc += w * (u - 0.5)
                    g -= w
                elif u < -1.0:
                    acc += w * (-u - 0.5)
                    g += w
                else:
                    acc += w * 0.5 * u * u
                    g -= w * u
            total += acc
            grad[r, j] = g * scale
    return total * scale, grad


class QuantileCriticBank:
    """N critics, each emitting M atom values for a (state, action) pair."""

    def __init__(self, nets, n_quantiles: int):
        self.nets = list(nets)
        self.n_quantiles = int(n_quantiles)
        for net in self.nets:
            if net.output_size != self.n_quantiles:
                raise ContractError("every critic must emit n_quantiles atoms")
        self.fractions = quantile_fractions(self.n_quantiles)

    @property
    def n_critics(self) -> int:
        return len(self.nets)

    def params(self):
        return [p for net in self.nets for p in net.params()]

    def copy(self) -> "QuantileCriticBank":
        return QuantileCriticBank([n.copy() for n in self.nets], self.n_quantiles)

    def forward(self, x):
        """Atoms with shape ``(B, N, M)``."""
        return np.stack([net.forward(x) for net in self.nets], axis=1)


def tqc_critic_targets(batch, target_bank: QuantileCriticBank, actor: MlpNetwork,
                       alpha: float, gamma: float, drop_per_critic: int, noise):
    nxt = batch.next_inputs
    sample, _ = policy_sample(actor, nxt, noise)
    atoms = target_bank.forward(_critic_input(nxt, sample.sampled_action))
    kept = tqc_pool_and_truncate(atoms, drop_per_critic)
    return tqc_target_atoms(kept, batch.reward, batch.terminated, gamma, alpha, sample.log_prob)


def tqc_critic_loss(batch, bank: QuantileCriticBank, targets):
    """Sum over critics of the quantile Huber loss against shared targets."""
    x = _critic_input(batch.inputs, batch.action)
    total = 0.0
    all_grads = []
    for net in bank.nets:
        atoms, cache = net.forward_cached(x)
        loss, d_atoms = huber_quantile_loss_and_grad(atoms, targets, bank.fractions)
        grads, _ = net.backward(cache, d_atoms, need_input_grad=False)
        total += loss
        all_grads.append(grads)
    return total, all_grads


def tqc_actor_loss(batch, actor: MlpNetwork, bank: QuantileCriticBank, alpha: float, noise):
    """mean(alpha log pi(a~|s) - mean over all (untruncated) atoms)."""
    states = batch.inputs
    sample, cache = policy_sample(actor, states, noise)
    x = _critic_input(states, sample.sampled_action)
    n = x.shape[0]
    scale = 1.0 / (n * bank.n_critics * bank.n_quantiles)
    q_mean = np.zeros(n)
    d_action = np.zeros_like(sample.sampled_action)
    for net in bank.nets:
        atoms, qc = net.forward_cached(x)
        q_mean += atoms.sum(axis=1)
        _, d_in = net.backward(qc, np.full_like(atoms, -scale), need_param_grads=False)
        d_action += d_in[:, states.shape[1]:]
    q_mean /= bank.n_critics * bank.n_quantiles
    d_logp = np.full(n, alpha / n)
    grads = policy_backward(actor, sample, cache, d_action, d_logp)
    loss = float(np.mean(alpha * sample.log_prob - q_mean))
    return loss, grads, sample.log_prob
