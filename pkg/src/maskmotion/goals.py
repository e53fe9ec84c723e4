"""Goal tasks: target location, box strike, and heading control.

Each task owns per-env goal state, produces an extra observation block
(appended unmasked after the mask flags), and a per-step reward. The reward
formulas are exposed as pure functions for direct testing; success predicates
operate on stacked per-step traces collected by the evaluator.

Frames: d/targets live in the world XY plane; observations are rotated into
the character's heading frame.
"""

from __future__ import annotations

import numpy as np

from .character import CharacterSpec
from .errors import ConfigError


def _rot2d(yaw: np.ndarray, vec_xy: np.ndarray) -> np.ndarray:
    """Rotate world-frame planar vectors by -yaw (into the heading frame)."""
    c, s = np.cos(yaw), np.sin(yaw)
    x = c * vec_xy[..., 0] + s * vec_xy[..., 1]
    y = -s * vec_xy[..., 0] + c * vec_xy[..., 1]
    return np.stack([x, y], axis=-1)


# -- pure reward functions -----------------------------------------------------

def location_reward(
    root_vel_xy: np.ndarray,
    rel_target_xy: np.ndarray,
    speed: float,
    radius: float,
) -> np.ndarray:
    """r = exp(-3 ||v - v*||^2 / ||v*||^2) with v* = speed toward the target;
    inside the arrival radius the reward saturates at 1."""
    root_vel_xy = np.asarray(root_vel_xy, dtype=np.float64)
    rel = np.asarray(rel_target_xy, dtype=np.float64)
    dist = np.linalg.norm(rel, axis=-1)
    safe = np.maximum(dist, 1e-9)
    v_star = rel / safe[..., None] * speed
    err = np.sum((root_vel_xy - v_star) ** 2, axis=-1)
    r = np.exp(-3.0 * err / (speed * speed))
    return np.where(dist < radius, 1.0, r)


def strike_reward(box_up: np.ndarray) -> np.ndarray:
    """r = 1 - u_world . u_box: 0 upright, 1 on its side, 2 inverted."""
    box_up = np.asarray(box_up, dtype=np.float64)
    return 1.0 - box_up[..., 2]


def strike_success(box_up: np.ndarray, threshold: float = 0.2) -> np.ndarray:
    return box_up[..., 2] < threshold


def heading_reward(
    root_vel_xy: np.ndarray,
    facing_xy: np.ndarray,
    dir_xy: np.ndarray,
    target_speed: np.ndarray | float,
) -> np.ndarray:
    """0.7 exp(-0.25 ((v_par - v_d)^2 + 0.1 ||v_perp||^2)) + 0.3 max(d.f, 0).

    v_par is the velocity component along the command direction d, v_perp the
    lateral remainder, f the planar facing direction.
    """
    v = np.asarray(root_vel_xy, dtype=np.float64)
    d = np.asarray(dir_xy, dtype=np.float64)
    f = np.asarray(facing_xy, dtype=np.float64)
    v_par = np.sum(v * d, axis=-1)
    v_perp = v - v_par[..., None] * d
    err = (v_par - target_speed) ** 2 + 0.1 * np.sum(v_perp**2, axis=-1)
    align = np.maximum(np.sum(d * f, axis=-1), 0.0)
    return 0.7 * np.exp(-0.25 * err) + 0.3 * align


# -- task objects -----------------------------------------------------------------

class GoalTask:
    """Base interface; trainers/evaluators only use these methods."""

    name = "task"
    obs_dim = 0

    def __init__(self, spec: CharacterSpec, num_envs: int) -> None:
        self.spec = spec
        self.num_envs = num_envs

    def reset(self, rng: np.random.Generator, indices: np.ndarray, info: dict) -> None:
        raise NotImplementedError

    def observe(self, info: dict) -> np.ndarray:
        raise NotImplementedError

    def reward(self, prev_info: dict, info: dict) -> np.ndarray:
        raise NotImplementedError

    def trace_values(self, info: dict) -> dict[str, np.ndarray]:
        """Per-step scalars the success predicate needs."""
        raise NotImplementedError

    def success_from_trace(self, trace: dict[str, np.ndarray], fps: float) -> np.ndarray:
        """trace arrays are (T, B); returns (B,) episode success flags."""
        raise NotImplementedError

    def describe(self) -> dict:
        return {"name": self.name}

    def snapshot(self) -> dict:
        return {}

    def restore(self, state: dict) -> None:
        pass


class LocationTask(GoalTask):
    """Reach a planar target point and stay there.

    Observation (4): relative target in the heading frame (2), distance (1),
    commanded speed (1). Success: within the arrival radius for the entire
    final second of the episode.
    """

    name = "location"
    obs_dim = 4

    def __init__(
        self,
        spec: CharacterSpec,
        num_envs: int,
        radius: float = 0.5,
        speed: float = 1.5,
        min_range: float = 2.0,
        max_range: float = 5.0,
    ) -> None:
        super().__init__(spec, num_envs)
        if radius <= 0 or speed <= 0 or not 0 < min_range <= max_range:
            raise ConfigError("location task parameters out of range")
        self.radius = radius
        self.speed = speed
        self.min_range = min_range
        self.max_range = max_range
        self.target_xy = np.zeros((num_envs, 2))

    def reset(self, rng, indices, info) -> None:
        for i in indices:
            r = rng.uniform(self.min_range, self.max_range)
            ang = rng.uniform(0.0, 2.0 * np.pi)
            self.target_xy[i] = info["world_pos"][i, 0, :2] + r * np.array(
                [np.cos(ang), np.sin(ang)]
            )

    def _rel(self, info) -> np.ndarray:
        return self.target_xy - info["world_pos"][:, 0, :2]

    def observe(self, info) -> np.ndarray:
        rel = self._rel(info)
        rel_h = _rot2d(info["yaw"], rel)
        dist = np.linalg.norm(rel, axis=-1, keepdims=True)
        speed = np.full((self.num_envs, 1), self.speed)
        return np.concatenate([rel_h, dist, speed], axis=-1)

    def reward(self, prev_info, info) -> np.ndarray:
        return location_reward(
            info["root_lin_vel"][:, :2], self._rel(info), self.speed, self.radius
        )

    def trace_values(self, info) -> dict[str, np.ndarray]:
        return {"dist": np.linalg.norm(self._rel(info), axis=-1)}

    def success_from_trace(self, trace, fps) -> np.ndarray:
        window = max(1, int(round(fps)))
        dist = trace["dist"][-window:]
        return np.all(dist < self.radius, axis=0)

    def describe(self) -> dict:
        return {
            "name": self.name,
            "radius": self.radius,
            "speed": self.speed,
            "min_range": self.min_range,
            "max_range": self.max_range,
        }

    def snapshot(self) -> dict:
        return {"target_xy": self.target_xy.copy()}

    def restore(self, state) -> None:
        self.target_xy[...] = state["target_xy"]


class StrikeTask(GoalTask):
    """Knock over a box placed ahead of the character.

    The box is an orientation-only body: a tilt angle about a horizontal axis
    with a restoring torque below the tipping angle and a toppling torque past
    it. Hits come from designated effector joints passing through the box
    volume; the impulse scales with the effector speed.

    Observation (15): relative box position (3), box up axis (3), box linear
    velocity (3, zero for this box model), box angular velocity (3), relative
    closest-effector position (3), everything in the heading frame.
    """

    name = "strike"
    obs_dim = 15

    def __init__(
        self,
        spec: CharacterSpec,
        num_envs: int,
        distance: float = 1.2,
        box_size: float = 0.35,
        box_height: float = 0.9,
        tip_angle: float = 0.5,
        restore_gain: float = 12.0,
        topple_gain: float = 14.0,
        damping: float = 2.0,
        impulse_gain: float = 6.0,
        effectors: tuple[str, ...] | None = None,
    ) -> None:
        super().__init__(spec, num_envs)
        self.distance = distance
        self.box_size = box_size
        self.box_height = box_height
        self.tip_angle = tip_angle
        self.restore_gain = restore_gain
        self.topple_gain = topple_gain
        self.damping = damping
        self.impulse_gain = impulse_gain
        if effectors is None:
            effectors = tuple(
                n for n in spec.joint_names if "hand" in n or "wrist" in n
            )
            if not effectors:
                effectors = tuple(spec.joint_names[e] for e in spec.end_effectors)
        if not effectors:
            raise ConfigError("strike task needs at least one effector joint")
        self.effector_idx = tuple(spec.joint_index(n) for n in effectors)
        self.box_pos = np.zeros((num_envs, 3))
        self.tilt = np.zeros(num_envs)
        self.tilt_rate = np.zeros(num_envs)
        self.tilt_axis = np.tile(np.array([0.0, 1.0, 0.0]), (num_envs, 1))

    def reset(self, rng, indices, info) -> None:
        for i in indices:
            yaw = info["yaw"][i] + rng.uniform(-0.3, 0.3)
            offset = self.distance * np.array([np.cos(yaw), np.sin(yaw), 0.0])
            self.box_pos[i] = info["world_pos"][i, 0] * [1, 1, 0] + offset
            self.box_pos[i, 2] = self.box_height / 2.0
            self.tilt[i] = 0.0
            self.tilt_rate[i] = 0.0
            self.tilt_axis[i] = [0.0, 1.0, 0.0]

    def box_up(self) -> np.ndarray:
        # rotate z by tilt about the per-env horizontal axis
        axis = self.tilt_axis
        ct = np.cos(self.tilt)[:, None]
        st = np.sin(self.tilt)[:, None]
        z = np.broadcast_to([0.0, 0.0, 1.0], axis.shape)
        # Rodrigues for v = z: axis is horizontal so axis.z = 0
        return ct * z + st * np.cross(axis, z)

    def _step_box(self, prev_info: dict, info: dict) -> None:
        dt = 1.0 / 30.0
        pos = info["world_pos"]
        prev_pos = prev_info["world_pos"]
        for e in self.effector_idx:
            rel = pos[:, e] - self.box_pos
            inside = np.linalg.norm(rel, axis=-1) < self.box_size
            if np.any(inside):
                vel = (pos[:, e] - prev_pos[:, e]) * 30.0
                speed = np.linalg.norm(vel[:, :2], axis=-1)
                fresh = inside & (np.abs(self.tilt) < 1e-6)
                if np.any(fresh):
                    # tilt axis: horizontal, perpendicular to the hit direction
                    d = vel[:, :2]
                    nrm = np.maximum(np.linalg.norm(d, axis=-1, keepdims=True), 1e-9)
                    dirs = d / nrm
                    axis = np.stack([-dirs[:, 1], dirs[:, 0]], axis=-1)
                    self.tilt_axis[fresh] = np.concatenate(
                        [axis, np.zeros((self.num_envs, 1))], axis=-1
                    )[fresh]
                self.tilt_rate[inside] += self.impulse_gain * speed[inside] * dt
        below = self.tilt < self.tip_angle
        acc = np.where(
            below,
            -self.restore_gain * np.sin(self.tilt),
            self.topple_gain * np.sin(np.minimum(self.tilt, np.pi / 2)),
        )
        acc -= self.damping * self.tilt_rate
        self.tilt_rate += acc * dt
        self.tilt = np.clip(self.tilt + self.tilt_rate * dt, 0.0, np.pi / 2)
        flat = self.tilt >= np.pi / 2 - 1e-9
        self.tilt_rate[flat] = 0.0

    def observe(self, info) -> np.ndarray:
        yaw = info["yaw"]
        root = info["world_pos"][:, 0]
        rel_box = self.box_pos - root
        rel_h = np.concatenate([_rot2d(yaw, rel_box[:, :2]), rel_box[:, 2:]], axis=-1)
        up = self.box_up()
        up_h = np.concatenate([_rot2d(yaw, up[:, :2]), up[:, 2:]], axis=-1)
        ang = self.tilt_rate[:, None] * self.tilt_axis
        ang_h = np.concatenate([_rot2d(yaw, ang[:, :2]), ang[:, 2:]], axis=-1)
        e = self.effector_idx[0]
        rel_eff = info["world_pos"][:, e] - self.box_pos
        eff_h = np.concatenate([_rot2d(yaw, rel_eff[:, :2]), rel_eff[:, 2:]], axis=-1)
        zeros = np.zeros((self.num_envs, 3))
        return np.concatenate([rel_h, up_h, zeros, ang_h, eff_h], axis=-1)

    def reward(self, prev_info, info) -> np.ndarray:
        self._step_box(prev_info, info)
        return strike_reward(self.box_up())

    def trace_values(self, info) -> dict[str, np.ndarray]:
        return {"up_z": self.box_up()[:, 2]}

    def success_from_trace(self, trace, fps) -> np.ndarray:
        return np.any(trace["up_z"] < 0.2, axis=0)

    def describe(self) -> dict:
        return {"name": self.name, "distance": self.distance, "box_size": self.box_size}

    def snapshot(self) -> dict:
        return {
            "box_pos": self.box_pos.copy(),
            "tilt": self.tilt.copy(),
            "tilt_rate": self.tilt_rate.copy(),
            "tilt_axis": self.tilt_axis.copy(),
        }

    def restore(self, state) -> None:
        for k, v in state.items():
            getattr(self, k)[...] = v


class HeadingTask(GoalTask):
    """Move along a commanded planar direction at a commanded speed.

    Observation (3): command direction in the heading frame (2) and speed (1).
    Success: |v_par - v_d| < 0.5 m/s at every step of the final second.
    """

    name = "heading"
    obs_dim = 3

    def __init__(
        self,
        spec: CharacterSpec,
        num_envs: int,
        min_speed: float = 1.0,
        max_speed: float = 1.5,
        tolerance: float = 0.5,
    ) -> None:
        super().__init__(spec, num_envs)
        if not 0 < min_speed <= max_speed:
            raise ConfigError("heading speeds out of range")
        self.min_speed = min_speed
        self.max_speed = max_speed
        self.tolerance = tolerance
        self.dir_xy = np.tile(np.array([1.0, 0.0]), (num_envs, 1))
        self.target_speed = np.full(num_envs, min_speed)

    def reset(self, rng, indices, info) -> None:
        for i in indices:
            ang = rng.uniform(0.0, 2.0 * np.pi)
            self.dir_xy[i] = [np.cos(ang), np.sin(ang)]
            self.target_speed[i] = rng.uniform(self.min_speed, self.max_speed)

    def observe(self, info) -> np.ndarray:
        d_h = _rot2d(info["yaw"], self.dir_xy)
        return np.concatenate([d_h, self.target_speed[:, None]], axis=-1)

    def _facing(self, info) -> np.ndarray:
        yaw = info["yaw"]
        return np.stack([np.cos(yaw), np.sin(yaw)], axis=-1)

    def reward(self, prev_info, info) -> np.ndarray:
        return heading_reward(
            info["root_lin_vel"][:, :2], self._facing(info), self.dir_xy, self.target_speed
        )

    def trace_values(self, info) -> dict[str, np.ndarray]:
        v_par = np.sum(info["root_lin_vel"][:, :2] * self.dir_xy, axis=-1)
        return {"speed_err": np.abs(v_par - self.target_speed)}

    def success_from_trace(self, trace, fps) -> np.ndarray:
        window = max(1, int(round(fps)))
        return np.all(trace["speed_err"][-window:] < self.tolerance, axis=0)

    def describe(self) -> dict:
        return {
            "name": self.name,
            "min_speed": self.min_speed,
            "max_speed": self.max_speed,
            "tolerance": self.tolerance,
        }

    def snapshot(self) -> dict:
        return {"dir_xy": self.dir_xy.copy(), "target_speed": self.target_speed.copy()}

    def restore(self, state) -> None:
        for k, v in state.items():
            getattr(self, k)[...] = v


TASKS = {"location": LocationTask, "strike": StrikeTask, "heading": HeadingTask}


def make_task(name: str, spec: CharacterSpec, num_envs: int, **params) -> GoalTask:
    try:
        cls = TASKS[name]
    except KeyError:
        raise ConfigError(f"unknown task {name!r}; choose from {sorted(TASKS)}") from None
    try:
        return cls(spec, num_envs, **params)
    except TypeError as e:
        raise ConfigError(f"bad parameters for task {name!r}: {e}") from None
