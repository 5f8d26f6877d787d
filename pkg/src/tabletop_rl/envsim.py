"""Deterministic tabletop micro-simulator for the push, slide and
pick-and-place tasks.

The end effector (EE) is a position-controlled point carrying a small
contact disc; the object is a cube (or puck) of half-size
``OBJECT_HALF`` resting on a table whose top is the plane ``z = 0``.
Coordinates are metres with the table centre at the origin.

Observation layout (see :func:`extract_goal_layout`)::

    [ee_pos(3), ee_vel(3), obj_pos(3), obj_euler(3), obj_linvel(3), obj_angvel(3), (finger_width)]
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .numerics import ContractError

# Geometry and timing.
OBJECT_HALF = 0.02
REST_Z = OBJECT_HALF
EE_RADIUS = 0.01
CONTACT_DIST = 0.025 + EE_RADIUS
STEP_DT = 0.04
N_SUBSTEPS = 20
SUB_DT = STEP_DT / N_SUBSTEPS
GRAVITY = 9.81
MAX_EPISODE_STEPS = 50

# Gripper (pick-and-place only).
GRIPPER_MAX = 0.08
OBJECT_WIDTH = 2 * OBJECT_HALF
GRIPPER_STEP_SCALE = 0.04
GRASP_TOLERANCE = 0.01


class TaskKind(str, enum.Enum):
    PUSH = "push"
    SLIDE = "slide"
    PICK = "pick"

    @classmethod
    def parse(cls, value) -> "TaskKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        aliases = {"push": cls.PUSH, "slide": cls.SLIDE, "pick": cls.PICK,
                   "pickandplace": cls.PICK, "pickplace": cls.PICK}
        if key not in aliases:
            raise ContractError(f"unknown task {value!r}")
        return aliases[key]


class RewardMode(str, enum.Enum):
    SPARSE = "sparse"
    DENSE = "dense"

    @classmethod
    def parse(cls, value) -> "RewardMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ContractError(f"unknown reward mode {value!r}") from None


@dataclass(frozen=True)
class Box:
    low: tuple
    high: tuple

    def __post_init__(self):
        if len(self.low) != 3 or len(self.high) != 3:
            raise ContractError("region bounds must be 3-vectors")
        if any(lo > hi for lo, hi in zip(self.low, self.high)):
            raise ContractError(f"region low {self.low} exceeds high {self.high}")

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        lo = np.asarray(self.low, dtype=np.float64)
        hi = np.asarray(self.high, dtype=np.float64)
        return lo + (hi - lo) * rng.random(3)

    def clamp(self, p: np.ndarray) -> np.ndarray:
        return np.minimum(np.maximum(p, self.low), self.high)

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.high) - np.asarray(self.low)


@dataclass(frozen=True)
class TaskConfig:
    task_kind: TaskKind
    reward_mode: RewardMode = RewardMode.SPARSE
    success_threshold: float = 0.05
    air_target_probability: float = 0.5
    air_height_range: tuple = (0.01, 0.2)
    friction_coefficient: float = 1.0
    ee_step_scale: float = 0.05
    tool_reach: float = 0.0
    ee_home: tuple = (0.0, 0.0, 0.06)
    workspace: Box = Box((-0.25, -0.25, REST_Z), (0.25, 0.25, 0.25))
    object_region: Box = Box((-0.15, -0.15, REST_Z), (0.15, 0.15, REST_Z))
    goal_region: Box = Box((-0.15, -0.15, REST_Z), (0.15, 0.15, REST_Z))
    max_episode_steps: int = MAX_EPISODE_STEPS

    def __post_init__(self):
        object.__setattr__(self, "task_kind", TaskKind.parse(self.task_kind))
        object.__setattr__(self, "reward_mode", RewardMode.parse(self.reward_mode))
        if not self.success_threshold > 0:
            raise ContractError("success_threshold must be positive")
        if not 0.0 <= self.air_target_probability <= 1.0:
            raise ContractError("air_target_probability must lie in [0, 1]")
        if self.friction_coefficient < 0 or self.ee_step_scale <= 0:
            raise ContractError("friction and step scale must be positive")
        if self.tool_reach < 0:
            raise ContractError("tool_reach must be non-negative")
        if self.max_episode_steps < 1:
            raise ContractError("max_episode_steps must be positive")

    @classmethod
    def for_task(cls, task, **overrides) -> "TaskConfig":
        kind = TaskKind.parse(task)
        if kind is TaskKind.SLIDE:
            # goals lie beyond the EE's reach; the puck has to be struck
            base = dict(
                friction_coefficient=0.03,
                ee_home=(-0.25, 0.0, 0.06),
                workspace=Box((-0.35, -0.2, REST_Z), (0.05, 0.2, 0.2)),
                object_region=Box((-0.15, -0.1, REST_Z), (-0.05, 0.1, REST_Z)),
                goal_region=Box((0.25, -0.2, REST_Z), (0.55, 0.2, REST_Z)),
            )
        elif kind is TaskKind.PICK:
            base = dict(
                ee_home=(0.0, 0.0, 0.1),
                workspace=Box((-0.25, -0.25, REST_Z), (0.25, 0.25, 0.3)),
            )
        else:
            base = {}
        base.update(overrides)
        return cls(task_kind=kind, **base)

    @property
    def action_dim(self) -> int:
        return 4 if self.task_kind is TaskKind.PICK else 3

    @property
    def observation_dim(self) -> int:
        return 19 if self.task_kind is TaskKind.PICK else 18


@dataclass
class EnvState:
    ee_position: np.ndarray
    ee_velocity: np.ndarray
    gripper_width: float
    object_position: np.ndarray
    object_euler: np.ndarray
    object_lin_vel: np.ndarray
    object_ang_vel: np.ndarray
    desired_goal: np.ndarray
    step_index: int = 0
    grasped: bool = False
    grasp_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    done: bool = False

    def copy(self) -> "EnvState":
        return EnvState(
            self.ee_position.copy(), self.ee_velocity.copy(), self.gripper_width,
            self.object_position.copy(), self.object_euler.copy(),
            self.object_lin_vel.copy(), self.object_ang_vel.copy(),
            self.desired_goal.copy(), self.step_index, self.grasped,
            self.grasp_offset.copy(), self.done,
        )


@dataclass
class GoalObservation:
    observation: np.ndarray
    achieved_goal: np.ndarray
    desired_goal: np.ndarray


@dataclass
class StepResult:
    observation: GoalObservation
    reward: float
    terminated: bool
    truncated: bool
    info: dict


def extract_goal_layout(task_kind) -> dict[str, slice]:
    """Slices of the flat observation vector, in order."""
    kind = TaskKind.parse(task_kind)
    layout = {
        "ee_position": slice(0, 3),
        "ee_velocity": slice(3, 6),
        "object_position": slice(6, 9),
        "object_euler": slice(9, 12),
        "object_lin_vel": slice(12, 15),
        "object_ang_vel": slice(15, 18),
    }
    if kind is TaskKind.PICK:
        layout["finger_width"] = slice(18, 19)
    return layout


def compute_reward(achieved, desired, config: TaskConfig) -> float:
    """Sparse: 0 inside the success ball, -1 outside. Dense: minus the distance.

    Accepts batches (leading axes) and then returns an array.
    """
    d = np.linalg.norm(np.asarray(achieved, float) - np.asarray(desired, float), axis=-1)
    if config.reward_mode is RewardMode.DENSE:
        r = -d
    else:
        r = -(d > config.success_threshold).astype(np.float64)
    return float(r) if np.ndim(r) == 0 else r


def is_success(achieved, desired, config: TaskConfig):
    d = np.linalg.norm(np.asarray(achieved, float) - np.asarray(desired, float), axis=-1)
    ok = d <= config.success_threshold
    return bool(ok) if np.ndim(ok) == 0 else ok


def observe(state: EnvState, config: TaskConfig) -> GoalObservation:
    parts = [
        state.ee_position, state.ee_velocity, state.object_position,
        state.object_euler, state.object_lin_vel, state.object_ang_vel,
    ]
    if config.task_kind is TaskKind.PICK:
        parts.append([state.gripper_width])
    obs = np.concatenate(parts).astype(np.float64)
    return GoalObservation(obs, state.object_position.copy(), state.desired_goal.copy())


def _check_sampling_regions(config: TaskConfig):
    obj_ext = config.object_region.extent[:2]
    goal_ext = config.goal_region.extent[:2]
    if np.all(obj_ext == 0) and np.all(goal_ext == 0):
        gap = np.linalg.norm(np.subtract(config.object_region.low, config.goal_region.low)[:2])
        air_possible = (config.task_kind is TaskKind.PICK and config.air_target_probability > 0)
        if gap <= config.success_threshold and not air_possible:
            raise ContractError(
                "object and goal regions are degenerate points closer than the success threshold"
            )


def reset(config: TaskConfig, seed: int):
    """Fresh episode: EE at home, object and goal sampled from their regions."""
    _check_sampling_regions(config)
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        obj = config.object_region.sample(rng)
        goal = config.goal_region.sample(rng)
        if config.task_kind is TaskKind.PICK and rng.random() < config.air_target_probability:
            lo, hi = config.air_height_range
            goal[2] = REST_Z + lo + (hi - lo) * rng.random()
        if np.linalg.norm(obj - goal) > config.success_threshold:
            break
    else:
        raise ContractError("could not sample object and goal farther apart than the threshold")
    state = EnvState(
        ee_position=np.asarray(config.ee_home, dtype=np.float64).copy(),
        ee_velocity=np.zeros(3),
        gripper_width=GRIPPER_MAX if config.task_kind is TaskKind.PICK else 0.0,
        object_position=obj,
        object_euler=np.zeros(3),
        object_lin_vel=np.zeros(3),
        object_ang_vel=np.zeros(3),
        desired_goal=goal,
    )
    return state, observe(state, config)


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _contact_normal(ee, obj, fallback):
    delta = obj[:2] - ee[:2]
    dist = math.hypot(delta[0], delta[1])
    if dist > 1e-12:
        return delta / dist, dist
    fb = fallback[:2]
    norm = math.hypot(fb[0], fb[1])
    if norm > 1e-12:
        return fb / norm, 0.0
    return np.array([1.0, 0.0]), 0.0


def _advance(state: EnvState, action: np.ndarray, config: TaskConfig):
    kind = config.task_kind
    ws_low = np.asarray(config.workspace.low, dtype=np.float64)
    ws_high = np.asarray(config.workspace.high, dtype=np.float64)

    if kind is TaskKind.PICK:
        old_width = state.gripper_width
        width = min(max(old_width + GRIPPER_STEP_SCALE * action[3], 0.0), GRIPPER_MAX)
        if state.grasped:
            if width > OBJECT_WIDTH:
                state.grasped = False
            else:
                width = OBJECT_WIDTH
        elif (old_width > OBJECT_WIDTH >= width
              and np.linalg.norm(state.ee_position - state.object_position) <= GRASP_TOLERANCE):
            state.grasped = True
            state.grasp_offset = state.object_position - state.ee_position
            state.object_lin_vel[:] = 0.0
            width = OBJECT_WIDTH
        state.gripper_width = width
        pusher = width < OBJECT_WIDTH or (width == OBJECT_WIDTH and not state.grasped)
    else:
        pusher = True

    ee_start = state.ee_position.copy()
    obj_start = state.object_position.copy()
    yaw_start = state.object_euler[2]
    v_cmd = config.ee_step_scale * action[:3] / STEP_DT
    sliding = kind is TaskKind.SLIDE
    mu_g = config.friction_coefficient * GRAVITY
    tool_reach = config.tool_reach if pusher and kind is not TaskKind.PICK else 0.0
    ee = state.ee_position
    obj = state.object_position
    vel = state.object_lin_vel
    if not sliding:
        vel[:2] = 0.0
    spin = state.object_ang_vel[2] if sliding else 0.0

    for _ in range(N_SUBSTEPS):
        ee_prev = ee.copy()
        ee += v_cmd * SUB_DT
        np.minimum(np.maximum(ee, ws_low, out=ee), ws_high, out=ee)
        if state.grasped:
            floor = REST_Z - state.grasp_offset[2]
            if ee[2] < floor:
                ee[2] = floor
            obj[:] = ee + state.grasp_offset
            continue
        v_ee = (ee - ee_prev) / SUB_DT
        in_contact = False
        if (pusher and ee[2] - tool_reach - EE_RADIUS < obj[2] + OBJECT_HALF
                and ee[2] + EE_RADIUS > obj[2] - OBJECT_HALF):
            n, dist = _contact_normal(ee, obj, v_ee)
            if dist < CONTACT_DIST:
                in_contact = True
                obj[:2] = ee[:2] + CONTACT_DIST * n
                tangential = n[0] * v_ee[1] - n[1] * v_ee[0]
                spin = -tangential / CONTACT_DIST
                if sliding:
                    v_n = (v_ee[0] - vel[0]) * n[0] + (v_ee[1] - vel[1]) * n[1]
                    if v_n > 0.0:
                        vel[:2] += v_n * n
                else:
                    state.object_euler[2] = _wrap_angle(state.object_euler[2] + spin * SUB_DT)
        if sliding:
            speed = math.hypot(vel[0], vel[1])
            if speed > 0.0:
                new_speed = max(0.0, speed - mu_g * SUB_DT)
                scale = new_speed / speed
                vel[:2] *= scale
                spin *= scale
                obj[:2] += vel[:2] * SUB_DT
                state.object_euler[2] = _wrap_angle(state.object_euler[2] + spin * SUB_DT)
            else:
                spin = 0.0
        elif not in_contact:
            spin = 0.0
        # unsupported object falls back onto the table
        if obj[2] > REST_Z or vel[2] != 0.0:
            vel[2] -= GRAVITY * SUB_DT
            obj[2] += vel[2] * SUB_DT
            if obj[2] <= REST_Z:
                obj[2] = REST_Z
                vel[2] = 0.0

    state.ee_velocity = (ee - ee_start) / STEP_DT
    if sliding:
        state.object_ang_vel[:] = (0.0, 0.0, spin)
    else:
        state.object_lin_vel[:2] = (obj[:2] - obj_start[:2]) / STEP_DT
        if state.grasped:
            state.object_lin_vel[2] = (obj[2] - obj_start[2]) / STEP_DT
        state.object_ang_vel[:] = (0.0, 0.0, _wrap_angle(state.object_euler[2] - yaw_start) / STEP_DT)


def step(state: EnvState, action, config: TaskConfig) -> StepResult:
    """Advance ``state`` in place by one control step (``STEP_DT`` seconds)."""
    action = np.asarray(action, dtype=np.float64).reshape(-1)
    if action.shape[0] != config.action_dim:
        raise ContractError(
            f"{config.task_kind.value} expects a {config.action_dim}-dim action, got {action.shape[0]}"
        )
    if state.done:
        raise ContractError("episode already ended; call reset")
    action = np.clip(action, -1.0, 1.0)
    _advance(state, action, config)
    state.step_index += 1
    obs = observe(state, config)
    reward = compute_reward(obs.achieved_goal, obs.desired_goal, config)
    success = is_success(obs.achieved_goal, obs.desired_goal, config)
    terminated = success
    truncated = (not terminated) and state.step_index >= config.max_episode_steps
    state.done = terminated or truncated
    return StepResult(obs, reward, terminated, truncated, {"is_success": success})


class TabletopEnv:
    """Stateful convenience wrapper around :func:`reset` / :func:`step`."""

    def __init__(self, config: TaskConfig):
        self.config = config
        self.state: EnvState | None = None

    @property
    def observation_dim(self) -> int:
        return self.config.observation_dim

    @property
    def action_dim(self) -> int:
        return self.config.action_dim

    def reset(self, seed: int) -> GoalObservation:
        self.state, obs = reset(self.config, seed)
        return obs

    def step(self, action) -> StepResult:
        if self.state is None:
            raise ContractError("step called before reset")
        return step(self.state, action, self.config)

    def compute_reward(self, achieved, desired):
        return compute_reward(achieved, desired, self.config)


# ----------------------------------------------------------------------------
# key = value config files and trajectory dumps

def read_kv_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip().lower()] = value.strip()
    return out


def _triple(text: str) -> tuple:
    vals = tuple(float(v) for v in text.replace(",", " ").split())
    if len(vals) != 3:
        raise ContractError(f"expected three numbers, got {text!r}")
    return vals


_FLOAT_KEYS = ("success_threshold", "air_target_probability", "friction_coefficient", "ee_step_scale",
               "tool_reach")
_REGION_KEYS = ("workspace", "object_region", "goal_region")


def task_config_from_mapping(values: dict[str, str], task=None) -> TaskConfig:
    """Build a TaskConfig from parsed ``key = value`` pairs.

    Recognised keys: task, reward_mode, success_threshold,
    air_target_probability, friction_coefficient, ee_step_scale, ee_home,
    max_episode_steps and ``<region>_low`` / ``<region>_high`` for
    workspace, object_region and goal_region. Unknown keys are ignored so
    one file can also carry run settings.
    """
    kind = task if task is not None else values.get("task")
    if kind is None:
        raise ContractError("config does not name a task")
    overrides = {}
    if "reward_mode" in values:
        overrides["reward_mode"] = values["reward_mode"]
    for key in _FLOAT_KEYS:
        if key in values:
            overrides[key] = float(values[key])
    if "max_episode_steps" in values:
        overrides["max_episode_steps"] = int(values["max_episode_steps"])
    if "ee_home" in values:
        overrides["ee_home"] = _triple(values["ee_home"])
    base = TaskConfig.for_task(kind)
    for region in _REGION_KEYS:
        lo_key, hi_key = f"{region}_low", f"{region}_high"
        if lo_key in values or hi_key in values:
            current = getattr(base, region)
            lo = _triple(values[lo_key]) if lo_key in values else current.low
            hi = _triple(values[hi_key]) if hi_key in values else current.high
            overrides[region] = Box(lo, hi)
    return replace(base, **overrides)


def load_task_config(path, task=None) -> TaskConfig:
    return task_config_from_mapping(read_kv_file(path), task=task)


TRAJECTORY_HEADER = ["step", "ee_x", "ee_y", "ee_z", "obj_x", "obj_y", "obj_z",
                     "reward", "terminated", "truncated"]


def dump_trajectory(config: TaskConfig, seed: int, policy, path) -> int:
    """Roll out one episode with ``policy(obs) -> action`` and write it as CSV.

    Row 0 is the reset state. Returns the number of steps taken.
    """
    state, obs = reset(config, seed)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_HEADER)
        writer.writerow([0, *(repr(float(v)) for v in state.ee_position),
                         *(repr(float(v)) for v in state.object_position), "", 0, 0])
        n = 0
        while not state.done:
            res = step(state, policy(obs), config)
            obs = res.observation
            n += 1
            writer.writerow([n, *(repr(float(v)) for v in state.ee_position),
                             *(repr(float(v)) for v in state.object_position),
                             repr(res.reward), int(res.terminated), int(res.truncated)])
    return n
