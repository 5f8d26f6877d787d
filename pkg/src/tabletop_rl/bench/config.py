from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..agents import AlgoHyperParams
from ..envsim import RewardMode, TaskConfig, TaskKind, read_kv_file, task_config_from_mapping
from ..numerics import ContractError

ALGORITHMS = ("ddpg", "sac", "tqc")


@dataclass(frozen=True)
class RunConfig:
    """One (task, algorithm, seed) experiment. Defaults follow the benchmark table."""

    task_kind: TaskKind
    algorithm: str
    seed: int = 0
    total_steps: int = 500_000
    eval_interval: int = 2_000
    eval_episodes: int = 50
    hidden_sizes: tuple = (256, 256, 256)
    batch_size: int = 512
    reward_mode: RewardMode = RewardMode.SPARSE
    out_dir: Path = Path("runs")
    buffer_size: int = 1_000_000
    her_k: int = 4
    warmup_steps: int = 1_000
    gamma: float = 0.95
    learning_rate: float = 1e-3
    polyak_tau: float = 0.05
    action_noise_std: float = 0.2
    policy_delay: int = 1
    sac_extra_noise: bool = True
    n_critics: int = 2
    n_quantiles: int = 25
    drop_per_critic: int = 2
    task_overrides: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "task_kind", TaskKind.parse(self.task_kind))
        object.__setattr__(self, "reward_mode", RewardMode.parse(self.reward_mode))
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.algorithm not in ALGORITHMS:
            raise ContractError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        for name in ("total_steps", "eval_interval", "eval_episodes", "batch_size", "buffer_size"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive")
        if self.her_k < 0 or self.warmup_steps < 0:
            raise ContractError("her_k and warmup_steps must be non-negative")

    @classmethod
    def for_task(cls, task, algorithm: str, **overrides) -> "RunConfig":
        kind = TaskKind.parse(task)
        if kind is TaskKind.SLIDE:
            base = dict(total_steps=1_000_000, hidden_sizes=(512, 512, 512), batch_size=2048)
        else:
            base = {}
        base.update(overrides)
        return cls(task_kind=kind, algorithm=algorithm.lower(), **base)

    def task_config(self) -> TaskConfig:
        values = {k: str(v) for k, v in self.task_overrides.items()}
        values["reward_mode"] = self.reward_mode.value
        return task_config_from_mapping(values, task=self.task_kind)

    def hyperparams(self) -> AlgoHyperParams:
        return AlgoHyperParams(
            gamma=self.gamma, learning_rate=self.learning_rate, polyak_tau=self.polyak_tau,
            batch_size=self.batch_size, hidden_sizes=self.hidden_sizes,
            action_noise_std=self.action_noise_std, policy_delay=self.policy_delay,
            sac_extra_noise=self.sac_extra_noise, n_critics=self.n_critics,
            n_quantiles=self.n_quantiles, drop_per_critic=self.drop_per_critic,
        )

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed)


_RUN_KEYS = {f.name for f in fields(RunConfig)} - {"task_kind", "task_overrides"}
_ALIASES = {"task": "task_kind", "algo": "algorithm", "steps": "total_steps",
            "reward": "reward_mode", "out": "out_dir", "hidden": "hidden_sizes"}
_TASK_KEYS = ("success_threshold", "air_target_probability", "friction_coefficient",
              "ee_step_scale", "ee_home", "max_episode_steps",
              "workspace_low", "workspace_high", "object_region_low", "object_region_high",
              "goal_region_low", "goal_region_high")


def _coerce(name: str, text: str):
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    if name == "hidden_sizes":
        return tuple(int(v) for v in text.replace(",", " ").split())
    if name == "sac_extra_noise":
        return text.strip().lower() in ("1", "true", "yes", "on")
    if kind == "int":
        return int(float(text))
    if kind == "float":
        return float(text)
    return text


def run_config_from_file(path, **cli_overrides) -> RunConfig:
    """Build a RunConfig from a ``key = value`` file; CLI overrides win."""
    values = read_kv_file(path)
    settings = {}
    task_overrides = {}
    for key, text in values.items():
        name = _ALIASES.get(key, key)
        if name in _TASK_KEYS:
            task_overrides[name] = text
        elif name in _RUN_KEYS:
            settings[name] = _coerce(name, text)
        elif name != "task_kind":
            raise ContractError(f"{path}: unknown key {key!r}")
    task = cli_overrides.pop("task_kind", None) or values.get("task")
    algo = cli_overrides.pop("algorithm", None) or settings.pop("algorithm", None)
    settings.pop("algorithm", None)
    if task is None or algo is None:
        raise ContractError(f"{path}: both task and algo must be given")
    settings.update({k: v for k, v in cli_overrides.items() if v is not None})
    cfg = RunConfig.for_task(task, algo, task_overrides=task_overrides, **settings)
    cfg.task_config()  # validate the environment keys early
    return cfg
