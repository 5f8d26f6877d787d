"""Hand-written controllers that solve the reachable tasks.

They share the agents' ``act`` signature, so :func:`evaluate` can score
them; their job is to show the tasks are solvable independent of any
learner.
"""
from __future__ import annotations

import numpy as np

from ..envsim import CONTACT_DIST, OBJECT_HALF, OBJECT_WIDTH, TaskConfig, TaskKind, extract_goal_layout


def _to_action(delta, scale):
    return np.clip(np.asarray(delta) / scale, -1.0, 1.0)


class ScriptedPusher:
    """Go behind the object, lower to its height, push it along the goal line."""

    def __init__(self, config: TaskConfig):
        self.config = config
        self.layout = extract_goal_layout(config.task_kind)

    def act(self, observation, desired_goal, explore=False, rng=None):
        obs = np.asarray(observation)
        ee = obs[self.layout["ee_position"]]
        obj = obs[self.layout["object_position"]]
        goal = np.asarray(desired_goal)
        scale = self.config.ee_step_scale

        to_goal = goal[:2] - obj[:2]
        dist = np.linalg.norm(to_goal)
        if dist < 1e-9:
            return np.zeros(3)
        d = to_goal / dist
        rel = obj[:2] - ee[:2]
        along = rel @ d
        lateral = rel - along * d
        low = ee[2] < obj[2] + 0.01
        if along > 0.0 and np.linalg.norm(lateral) < 0.008 and low:
            # in contact stance: drive the object onto the goal, correcting drift
            step = d * min(dist, scale) + lateral
            return _to_action(np.array([step[0], step[1], obj[2] - ee[2]]), scale)
        behind = obj[:2] - d * (CONTACT_DIST + 0.01)
        gap = behind - ee[:2]
        if np.linalg.norm(gap) > 0.004:
            reach = self.config.tool_reach
            hover = obj[2] + OBJECT_HALF + reach + 0.02
            dz = hover - ee[2]
            if ee[2] < obj[2] + OBJECT_HALF + reach + 0.005:
                # clear the object before travelling sideways
                gap = gap * 0.0 if np.linalg.norm(rel) < CONTACT_DIST + 0.02 else gap
            return _to_action(np.array([gap[0], gap[1], dz]), scale)
        return _to_action(np.array([gap[0], gap[1], obj[2] - ee[2]]), scale)


class ScriptedPicker:
    """Open, hover over the object, descend, close, carry to the goal."""

    def __init__(self, config: TaskConfig):
        self.config = config
        self.layout = extract_goal_layout(config.task_kind)

    def act(self, observation, desired_goal, explore=False, rng=None):
        obs = np.asarray(observation)
        ee = obs[self.layout["ee_position"]]
        obj = obs[self.layout["object_position"]]
        width = obs[self.layout["finger_width"]][0]
        goal = np.asarray(desired_goal)
        scale = self.config.ee_step_scale

        held = width == OBJECT_WIDTH and np.linalg.norm(obj - ee) < 0.011
        if held:
            move = _to_action(goal - obj, scale)
            return np.append(move, -1.0)
        if width <= OBJECT_WIDTH:
            # reopen before approaching; fingers must straddle the object
            return np.array([0.0, 0.0, 0.05 / scale, 1.0]).clip(-1, 1)
        horiz = obj[:2] - ee[:2]
        if np.linalg.norm(obj - ee) <= 0.006:
            return np.array([0.0, 0.0, 0.0, -1.0])
        if np.linalg.norm(horiz) > 0.004:
            hover = obj[2] + 0.05
            return np.append(_to_action([horiz[0], horiz[1], hover - ee[2]], scale), 1.0)
        return np.append(_to_action(obj - ee, scale), 1.0)


def scripted_policy(config: TaskConfig):
    if config.task_kind is TaskKind.PICK:
        return ScriptedPicker(config)
    return ScriptedPusher(config)


class IdlePolicy:
    """Never moves; the reference for an agent that learned nothing."""

    def __init__(self, config: TaskConfig):
        self.dim = config.action_dim

    def act(self, observation, desired_goal, explore=False, rng=None):
        return np.zeros(self.dim)
