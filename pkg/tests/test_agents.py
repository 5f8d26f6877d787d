from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabletop_rl.agents import (
    AlgoHyperParams,
    QuantileCriticBank,
    TrainingDiverged,
    alpha_loss,
    ddpg_actor_loss,
    ddpg_critic_loss,
    ddpg_target,
    huber_quantile_loss,
    load_agent,
    make_agent,
    quantile_fractions,
    sac_actor_loss,
    sac_critic_loss,
    sac_target,
    save_agent,
    tqc_actor_loss,
    tqc_critic_loss,
    tqc_pool_and_truncate,
    tqc_target_atoms,
)
from tabletop_rl.agents import losses as L
from tabletop_rl.numerics import ContractError, MlpNetwork
from tabletop_rl.replay import Minibatch

S, A = 5, 2  # state (obs + goal) and action sizes of the small instances
INSTANCES = range(20)


def net(sizes, seed, out="identity"):
    return MlpNetwork(sizes, output_activation=out, rng=np.random.default_rng(seed))


def batch(seed, n=6):
    rng = np.random.default_rng(seed)
    return SimpleNamespace(
        inputs=rng.normal(size=(n, S)),
        next_inputs=rng.normal(size=(n, S)),
        action=rng.uniform(-1, 1, (n, A)),
        reward=-rng.integers(0, 2, n).astype(float),
        terminated=rng.integers(0, 2, n).astype(float),
    )


def fd_grads(params, f, h=1e-6):
    out = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            fp = f()
            p[idx] = old - h
            fm = f()
            p[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def rel_err(analytic, numeric):
    a = np.concatenate([np.ravel(x) for x in analytic])
    b = np.concatenate([np.ravel(x) for x in numeric])
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def actor_net(seed):
    a = net([S, 8, 8, 2 * A], seed)
    # keep raw log-std away from the clamp edges so the loss is smooth
    a.biases[-1][A:] = -0.5
    return a


# --- gradient fidelity -------------------------------------------------------

@pytest.mark.parametrize("seed", INSTANCES)
def test_ddpg_critic_gradient(seed):
    b = batch(seed)
    critic = net([S + A, 8, 7, 1], seed + 100)
    targets = np.random.default_rng(seed).normal(size=6)
    _, grads = ddpg_critic_loss(b, critic, targets)
    num = fd_grads(critic.params(), lambda: ddpg_critic_loss(b, critic, targets)[0])
    assert rel_err(grads, num) <= 1e-4


@pytest.mark.parametrize("seed", INSTANCES)
def test_ddpg_actor_gradient(seed):
    b = batch(seed)
    actor = net([S, 8, 7, A], seed + 200, "tanh")
    critic = net([S + A, 8, 7, 1], seed + 300)
    _, grads = ddpg_actor_loss(b, actor, critic)
    num = fd_grads(actor.params(), lambda: ddpg_actor_loss(b, actor, critic)[0])
    assert rel_err(grads, num) <= 1e-4


@pytest.mark.parametrize("seed", INSTANCES)
def test_sac_critic_gradient(seed):
    b = batch(seed)
    critics = [net([S + A, 8, 7, 1], seed + 400 + i) for i in range(2)]
    targets = np.random.default_rng(seed).normal(size=6)
    _, grads = sac_critic_loss(b, critics, targets)
    params = [p for c in critics for p in c.params()]
    num = fd_grads(params, lambda: sac_critic_loss(b, critics, targets)[0])
    assert rel_err([g for gs in grads for g in gs], num) <= 1e-4


@pytest.mark.parametrize("seed", INSTANCES)
def test_sac_actor_gradient(seed):
    b = batch(seed)
    actor = actor_net(seed + 500)
    critics = [net([S + A, 8, 7, 1], seed + 600 + i) for i in range(2)]
    noise = np.random.default_rng(seed + 1).normal(size=(6, A))
    _, grads, _ = sac_actor_loss(b, actor, critics, 0.3, noise)
    num = fd_grads(actor.params(), lambda: sac_actor_loss(b, actor, critics, 0.3, noise)[0])
    assert rel_err(grads, num) <= 1e-4


@pytest.mark.parametrize("seed", INSTANCES)
def test_alpha_gradient(seed):
    rng = np.random.default_rng(seed)
    log_probs = rng.normal(size=10)
    log_alpha = rng.normal()
    target = -float(rng.integers(1, 5))
    _, grad = alpha_loss(log_probs, log_alpha, target)
    h = 1e-6
    num = (alpha_loss(log_probs, log_alpha + h, target)[0]
           - alpha_loss(log_probs, log_alpha - h, target)[0]) / (2 * h)
    assert abs(grad - num) <= 1e-4 * max(abs(grad) + abs(num), 1e-12)


@pytest.mark.parametrize("seed", INSTANCES)
def test_tqc_critic_gradient(seed):
    b = batch(seed)
    bank = QuantileCriticBank([net([S + A, 8, 7, 5], seed + 700 + i) for i in range(2)], 5)
    targets = np.random.default_rng(seed).normal(scale=2.0, size=(6, 8))
    _, grads = tqc_critic_loss(b, bank, targets)
    num = fd_grads(bank.params(), lambda: tqc_critic_loss(b, bank, targets)[0])
    assert rel_err([g for gs in grads for g in gs], num) <= 1e-4


@pytest.mark.parametrize("seed", INSTANCES)
def test_tqc_actor_gradient(seed):
    b = batch(seed)
    actor = actor_net(seed + 800)
    bank = QuantileCriticBank([net([S + A, 8, 7, 5], seed + 900 + i) for i in range(2)], 5)
    noise = np.random.default_rng(seed + 2).normal(size=(6, A))
    _, grads, _ = tqc_actor_loss(b, actor, bank, 0.2, noise)
    num = fd_grads(actor.params(), lambda: tqc_actor_loss(b, actor, bank, 0.2, noise)[0])
    assert rel_err(grads, num) <= 1e-4


# --- truncation ----------------------------------------------------------------

def sort_and_slice(atoms, drop):
    n, m = len(atoms), len(atoms[0])
    pooled = sorted(v for row in atoms for v in row)
    return pooled[: (m - drop) * n]


def test_truncation_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n, m = int(rng.integers(1, 5)), int(rng.integers(1, 11))
        drop = int(rng.integers(0, m))
        atoms = rng.normal(size=(n, m))
        if rng.random() < 0.3:  # exercise ties
            atoms = np.round(atoms)
        kept = tqc_pool_and_truncate(atoms, drop)
        assert kept.tolist() == sort_and_slice(atoms.tolist(), drop)


def test_truncation_batched_and_examples():
    atoms = np.array([[1.0, 5.0, 3.0], [2.0, 9.0, 0.0]])
    assert tqc_pool_and_truncate(atoms, 1).tolist() == [0.0, 1.0, 2.0, 3.0]
    assert tqc_pool_and_truncate(atoms, 0).tolist() == [0.0, 1.0, 2.0, 3.0, 5.0, 9.0]
    stacked = np.stack([atoms, -atoms])
    out = tqc_pool_and_truncate(stacked, 1)
    assert out.shape == (2, 4)
    assert out[1].tolist() == sort_and_slice((-atoms).tolist(), 1)
    with pytest.raises(ContractError):
        tqc_pool_and_truncate(atoms, 3)


def test_target_size_for_defaults():
    atoms = np.random.default_rng(0).normal(size=(7, 2, 25))
    assert tqc_pool_and_truncate(atoms, 2).shape == (7, 46)


# --- quantile loss ---------------------------------------------------------------

def double_sum(pred, targ, tau):
    total = 0.0
    for m, p in enumerate(pred):
        for t in targ:
            u = t - p
            h = 0.5 * u * u if abs(u) <= 1.0 else abs(u) - 0.5
            total += abs(tau[m] - (1.0 if u < 0 else 0.0)) * h
    return total / (len(pred) * len(targ))


def test_quantile_loss_hand_cases():
    assert huber_quantile_loss([0.0], [0.5], [0.5]) == 0.0625
    assert huber_quantile_loss([2.0], [0.0], [0.25]) == 1.125


def test_quantile_loss_matches_double_sum():
    rng = np.random.default_rng(1)
    for _ in range(300):
        m, k = int(rng.integers(1, 12)), int(rng.integers(1, 30))
        pred = rng.normal(scale=3.0, size=m)
        targ = rng.normal(scale=3.0, size=k)
        tau = quantile_fractions(m)
        got = huber_quantile_loss(pred, targ, tau)
        ref = double_sum(pred, targ, tau)
        assert abs(got - ref) <= 1e-12 * max(abs(ref), 1e-300)


def test_batched_quantile_loss_is_mean_of_rows():
    rng = np.random.default_rng(2)
    pred, targ = rng.normal(size=(4, 5)), rng.normal(size=(4, 9))
    tau = quantile_fractions(5)
    rows = [double_sum(p, t, tau) for p, t in zip(pred, targ)]
    assert huber_quantile_loss(pred, targ, tau) == pytest.approx(np.mean(rows), rel=1e-12)


def test_compiled_kernel_agrees_with_vectorised_reference():
    rng = np.random.default_rng(3)
    pred, targ = rng.normal(size=(16, 25)), rng.normal(scale=2, size=(16, 46))
    tau = quantile_fractions(25)
    loss, grad = L.huber_quantile_loss_and_grad(pred, targ, tau)
    ref_loss, ref_grad = L.quantile_huber_numpy(pred, targ, tau)
    assert loss == pytest.approx(ref_loss, rel=1e-12)
    assert np.allclose(grad, ref_grad, rtol=1e-12, atol=1e-15)


def test_quantile_fractions():
    assert quantile_fractions(4).tolist() == [0.125, 0.375, 0.625, 0.875]
    tau = quantile_fractions(25)
    assert tau[0] == 0.02 and tau[-1] == 0.98


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8),
       st.lists(st.floats(-50, 50), min_size=1, max_size=8))
def test_quantile_loss_non_negative_and_zero_on_match(pred, targ):
    tau = quantile_fractions(len(pred))
    assert huber_quantile_loss(pred, targ, tau) >= 0.0
    same = [pred[0]] * len(pred)
    assert huber_quantile_loss(same, [pred[0]], tau) == 0.0


# --- targets --------------------------------------------------------------------

def test_terminal_targets_are_reward_only():
    b = batch(0)
    b.terminated = np.ones(6)
    actor = net([S, 8, A], 1, "tanh")
    critic = net([S + A, 8, 1], 2)
    assert np.array_equal(ddpg_target(b, actor, critic, 0.95), b.reward)
    sac_actor = actor_net(3)
    critics = [net([S + A, 8, 1], 4), net([S + A, 8, 1], 5)]
    noise = np.zeros((6, A))
    assert np.array_equal(sac_target(b, critics, sac_actor, 0.5, 0.95, noise), b.reward)
    kept = np.random.default_rng(0).normal(size=(6, 8))
    y = tqc_target_atoms(kept, b.reward, b.terminated, 0.95, 0.5, np.zeros(6))
    assert np.array_equal(y, np.repeat(b.reward[:, None], 8, axis=1))


def test_tqc_target_formula():
    kept = np.array([[1.0, 2.0]])
    y = tqc_target_atoms(kept, [-1.0], [0.0], 0.9, 0.5, [0.4])
    assert y == pytest.approx(np.array([[-1 + 0.9 * (1 - 0.2), -1 + 0.9 * (2 - 0.2)]]))


def test_sac_target_uses_minimum_critic():
    b = batch(1)
    b.terminated = np.zeros(6)
    actor = actor_net(6)
    c1, c2 = net([S + A, 8, 1], 7), net([S + A, 8, 1], 8)
    c2.biases[-1][:] += 100.0  # c2 always larger
    noise = np.random.default_rng(0).normal(size=(6, A))
    y = sac_target(b, [c1, c2], actor, 0.0, 0.95, noise)
    assert np.allclose(y, sac_target(b, [c1], actor, 0.0, 0.95, noise))


def test_alpha_loss_direction():
    # entropy above target (log pi small) -> gradient pushes log_alpha down
    _, g = alpha_loss(np.full(5, -10.0), 0.0, -2.0)
    assert g > 0
    _, g = alpha_loss(np.full(5, 5.0), 0.0, -2.0)
    assert g < 0


# --- agents ----------------------------------------------------------------------

def minibatch(seed, n=32, obs_dim=18, action_dim=3):
    rng = np.random.default_rng(seed)
    return Minibatch(
        obs=rng.normal(size=(n, obs_dim)), goal=rng.normal(size=(n, 3)),
        action=rng.uniform(-1, 1, (n, action_dim)), reward=-rng.integers(0, 2, n).astype(float),
        next_obs=rng.normal(size=(n, obs_dim)), terminated=np.zeros(n),
        next_achieved=rng.normal(size=(n, 3)),
    )


SMALL = AlgoHyperParams(hidden_sizes=(16, 16), batch_size=32)


@pytest.mark.parametrize("algo", ["ddpg", "sac", "tqc"])
def test_act_shapes_and_bounds(algo):
    agent = make_agent(algo, 18, 3, 3, SMALL, seed=0)
    rng = np.random.default_rng(0)
    for explore in (False, True):
        a = agent.act(rng.normal(size=18), rng.normal(size=3), explore, rng)
        assert a.shape == (3,) and np.all(np.abs(a) <= 1.0)
    with pytest.raises(ContractError):
        agent.act(np.zeros(19), np.zeros(3), False, None)


@pytest.mark.parametrize("algo", ["ddpg", "sac", "tqc"])
def test_greedy_action_is_deterministic(algo):
    agent = make_agent(algo, 18, 3, 3, SMALL, seed=0)
    x, g = np.ones(18), np.zeros(3)
    assert np.array_equal(agent.act(x, g, False, None), agent.act(x, g, False, None))


def test_ddpg_noise_is_clamped_after_tanh():
    agent = make_agent("ddpg", 18, 3, 1, SMALL, seed=0)
    agent.actor.forward = lambda x: np.array([0.95])
    fake = SimpleNamespace(standard_normal=lambda shape: np.ones(shape))
    assert agent.act(np.zeros(18), np.zeros(3), True, fake).tolist() == [1.0]


@pytest.mark.parametrize("algo", ["ddpg", "sac", "tqc"])
def test_update_is_deterministic_and_changes_weights(algo):
    def run():
        agent = make_agent(algo, 18, 3, 3, SMALL, seed=1)
        rng = np.random.default_rng(5)
        diags = [agent.update(minibatch(i), rng) for i in range(5)]
        return agent, diags

    a1, d1 = run()
    a2, d2 = run()
    assert d1 == d2
    fresh = make_agent(algo, 18, 3, 3, SMALL, seed=1)
    for name, n in a1.named_networks().items():
        for p, q, f in zip(n.params(), a2.named_networks()[name].params(),
                           fresh.named_networks()[name].params()):
            assert np.array_equal(p, q)
        assert any(not np.array_equal(p, f)
                   for p, f in zip(n.params(), fresh.named_networks()[name].params()))


@pytest.mark.parametrize("algo", ["sac", "tqc"])
def test_entropy_target_defaults_to_minus_action_dim(algo):
    agent = make_agent(algo, 19, 3, 4, SMALL)
    assert agent.entropy_target == -4.0
    assert agent.alpha == pytest.approx(1.0)


def test_diverged_update_raises():
    agent = make_agent("sac", 18, 3, 3, SMALL, seed=0)
    mb = minibatch(0)
    mb.reward[:] = np.nan
    with pytest.raises((TrainingDiverged, FloatingPointError)):
        agent.update(mb, np.random.default_rng(0))


def test_unknown_algorithm():
    with pytest.raises(ContractError):
        make_agent("td3", 18, 3, 3)


# --- checkpoints -------------------------------------------------------------------

@pytest.mark.parametrize("algo", ["ddpg", "sac", "tqc"])
def test_checkpoint_round_trip(tmp_path, algo):
    agent = make_agent(algo, 19, 3, 4, SMALL, seed=3)
    rng = np.random.default_rng(0)
    agent.observe(rng.normal(size=(50, 19)), rng.normal(size=(50, 3)))
    for i in range(3):
        agent.update(minibatch(i, obs_dim=19, action_dim=4), rng)
    path = tmp_path / "agent.bin"
    save_agent(agent, path)
    back = load_agent(path)
    assert back.algorithm == algo and back.updates == 3
    for name, n in agent.named_networks().items():
        for p, q in zip(n.params(), back.named_networks()[name].params()):
            assert np.array_equal(p, q)
    assert back.scalars() == agent.scalars()
    x, g = rng.normal(size=19), rng.normal(size=3)
    assert np.array_equal(agent.act(x, g, False, None), back.act(x, g, False, None))
    # training continues identically
    mb = minibatch(9, obs_dim=19, action_dim=4)
    assert agent.update(mb, np.random.default_rng(4)) == back.update(mb, np.random.default_rng(4))


def test_checkpoint_rejects_corruption(tmp_path):
    agent = make_agent("tqc", 18, 3, 3, SMALL)
    path = tmp_path / "a.bin"
    save_agent(agent, path)
    data = path.read_bytes()
    (tmp_path / "short.bin").write_bytes(data[:-8])
    (tmp_path / "long.bin").write_bytes(data + b"\0" * 8)
    (tmp_path / "magic.bin").write_bytes(b"NOTMAGIC" + data[8:])
    for name in ("short.bin", "long.bin", "magic.bin", "missing.bin"):
        with pytest.raises(ContractError):
            load_agent(tmp_path / name)
