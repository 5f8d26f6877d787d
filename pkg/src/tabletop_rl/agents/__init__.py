from .checkpoint import load_agent, save_agent
from .learners import (
    AGENTS,
    Agent,
    AlgoHyperParams,
    DdpgAgent,
    SacAgent,
    TqcAgent,
    TrainingDiverged,
    agent_update,
    make_agent,
    select_action,
)
from .losses import (
    QuantileCriticBank,
    alpha_loss,
    ddpg_actor_loss,
    ddpg_critic_loss,
    ddpg_target,
    huber_quantile_loss,
    quantile_fractions,
    sac_actor_loss,
    sac_critic_loss,
    sac_target,
    tqc_actor_loss,
    tqc_critic_loss,
    tqc_pool_and_truncate,
    tqc_target_atoms,
)
