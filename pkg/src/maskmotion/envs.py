"""Batched motion environments.

Two backends share one observation/termination contract:

* SurrogateEnv: deterministic kinematic integrator. Each control step moves
  every actuated joint halfway (slerp 0.5) toward its PD target rotation; the
  root stays pinned. No gravity, no contacts. Cheap, exact, CPU-friendly.
* PhysicsEnv: simplified dynamics at sim_hz with control at control_hz.
  Actuated joints follow decoupled PD rotational dynamics; the root is a
  point mass under gravity with foot contact springs and an upright
  stabilizer. Falls are real here.

Actions are per-joint exponential-map rotation vectors (clamped to norm pi)
interpreted as absolute PD target rotations. Observation velocities are
backward differences across one control tick in the world frame, matching the
reference-clip convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .character import CharacterSpec, MotionClip
from .errors import ConfigError, InvalidInputError
from .kinematics import StateLayout, assemble_state, forward_kinematics, heading_yaw
from .rotations import (
    axis_angle_to_matrix,
    matrix_to_axis_angle,
    slerp_matrices,
)

REASON_NONE = 0
REASON_FALL = 1
REASON_TIMEOUT = 2
REASON_NAN_ACTION = 3
REASON_LOW_REWARD = 4

REASON_NAMES = {
    REASON_NONE: "none",
    REASON_FALL: "fall",
    REASON_TIMEOUT: "timeout",
    REASON_NAN_ACTION: "nan_action",
    REASON_LOW_REWARD: "low_reward",
}


@dataclass(frozen=True)
class EnvConfig:
    sim_hz: int = 60
    control_hz: int = 30
    kp: float = 60.0
    kd: float = 5.0
    gravity: float = 9.81
    fall_height: float = 0.15
    max_steps: int = 300
    joint_limit: float = float(np.pi)
    root_mass: float = 12.0
    contact_stiffness: float = 2400.0
    contact_damping: float = 300.0
    contact_friction: float = 8.0
    root_kp: float = 50.0
    root_kd: float = 10.0
    max_joint_speed: float = 50.0

    def __post_init__(self) -> None:
        if self.sim_hz <= 0 or self.control_hz <= 0:
            raise ConfigError("rates must be positive")
        if self.sim_hz % self.control_hz != 0:
            raise ConfigError(
                f"sim_hz ({self.sim_hz}) must be a multiple of control_hz ({self.control_hz})"
            )
        if self.kp <= 0 or self.kd < 0:
            raise ConfigError("PD gains must be positive")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")

    @property
    def substeps(self) -> int:
        return self.sim_hz // self.control_hz

    @property
    def control_dt(self) -> float:
        return 1.0 / self.control_hz


def action_dim(spec: CharacterSpec) -> int:
    return spec.total_dof


def actuated_joints(spec: CharacterSpec) -> list[int]:
    out = []
    for j, d in enumerate(spec.dof_per_joint):
        if d == 0:
            continue
        if d != 3:
            raise ConfigError(
                f"simulators support spherical joints only; joint {j} has dof {d}"
            )
        out.append(j)
    return out


def decode_pd_targets(spec: CharacterSpec, actions: np.ndarray, joint_limit: float) -> np.ndarray:
    """Actions (B, 3*A) -> local target rotations (B, J, 3, 3); root gets identity.

    Rotation vectors beyond joint_limit in norm are rescaled onto the limit.
    """
    joints = actuated_joints(spec)
    B = actions.shape[0]
    if actions.shape != (B, 3 * len(joints)):
        raise InvalidInputError(
            f"expected actions ({B}, {3 * len(joints)}), got {actions.shape}"
        )
    rotvec = actions.reshape(B, len(joints), 3)
    norm = np.linalg.norm(rotvec, axis=-1, keepdims=True)
    scale = np.where(norm > joint_limit, joint_limit / np.maximum(norm, 1e-12), 1.0)
    rotvec = rotvec * scale
    targets = np.tile(np.eye(3), (B, spec.num_joints, 1, 1))
    targets[:, joints] = axis_angle_to_matrix(rotvec)
    return targets


def check_termination(
    world_pos: np.ndarray,
    steps: np.ndarray,
    config: EnvConfig,
    end_effectors: tuple[int, ...],
) -> tuple[np.ndarray, np.ndarray]:
    """(fall, timeout) flags. A fall is any non-end-effector joint below
    config.fall_height; timeout is steps >= config.max_steps."""
    J = world_pos.shape[-2]
    keep = np.ones(J, dtype=bool)
    keep[list(end_effectors)] = False
    fall = np.any(world_pos[..., keep, 2] < config.fall_height, axis=-1)
    timeout = steps >= config.max_steps
    return fall, timeout


@dataclass
class EnvSnapshot:
    """Everything mutable about a batch of envs; enough to resume exactly."""

    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "EnvSnapshot":
        return EnvSnapshot({k: v.copy() for k, v in self.arrays.items()})


class MotionEnv:
    """Shared reset/step plumbing for both backends."""

    def __init__(
        self,
        spec: CharacterSpec,
        config: EnvConfig,
        clips: list[MotionClip],
        num_envs: int,
    ) -> None:
        if num_envs < 1:
            raise ConfigError("num_envs must be >= 1")
        if not clips:
            raise ConfigError("reference clip pool must be non-empty")
        for clip in clips:
            if not clip.spec.matches(spec):
                raise ConfigError(f"clip {clip.name!r} uses a different skeleton")
            if abs(clip.fps - config.control_hz) > 1e-9:
                raise ConfigError(
                    f"clip {clip.name!r} is {clip.fps} fps; envs require control_hz "
                    f"({config.control_hz}) reference clips"
                )
        actuated_joints(spec)  # validates dof pattern
        self.spec = spec
        self.config = config
        self.clips = clips
        self.num_envs = num_envs
        self.layout = StateLayout(spec.num_joints)
        self._clip_rot = [c.rotation_matrices() for c in clips]
        B, J = num_envs, spec.num_joints
        self.root_pos = np.zeros((B, 3))
        self.local_rot = np.tile(np.eye(3), (B, J, 1, 1))
        self.prev_world_pos = np.zeros((B, J, 3))
        self.prev_world_rot = np.tile(np.eye(3), (B, J, 1, 1))
        self.steps = np.zeros(B, dtype=np.int64)
        self.done = np.ones(B, dtype=bool)
        self.reason = np.full(B, REASON_NONE, dtype=np.int64)
        self.clip_idx = np.zeros(B, dtype=np.int64)
        self.frame_idx = np.zeros(B, dtype=np.int64)

    # -- reference state init ------------------------------------------------
    def reset(
        self, rng: np.random.Generator, indices: np.ndarray | None = None
    ) -> tuple[np.ndarray, dict]:
        """Reference-state init: uniform clip, uniform interior frame."""
        if indices is None:
            indices = np.arange(self.num_envs)
        indices = np.asarray(indices, dtype=np.int64)
        for i in indices:
            c = int(rng.integers(len(self.clips)))
            clip = self.clips[c]
            t = int(rng.integers(1, len(clip) - 1))
            self._place(int(i), c, t)
        self._post_reset(indices)
        states = self.current_states()
        return states, self._info()

    def reset_to(
        self, clip_index: int, frame: int, indices: np.ndarray | None = None
    ) -> tuple[np.ndarray, dict]:
        """Deterministic reset: the given envs all start at one clip frame.

        frame must be interior (>= 1, the previous frame seeds velocities).
        """
        if not 0 <= clip_index < len(self.clips):
            raise InvalidInputError(f"clip index {clip_index} out of range")
        if not 1 <= frame < len(self.clips[clip_index]):
            raise InvalidInputError(
                f"frame {frame} out of range for clip of length {len(self.clips[clip_index])}"
            )
        if indices is None:
            indices = np.arange(self.num_envs)
        indices = np.asarray(indices, dtype=np.int64)
        for i in indices:
            self._place(int(i), clip_index, frame)
        self._post_reset(indices)
        return self.current_states(), self._info()

    def _place(self, i: int, clip_index: int, frame: int) -> None:
        clip = self.clips[clip_index]
        rot = self._clip_rot[clip_index]
        self.root_pos[i] = clip.root_pos[frame]
        self.local_rot[i] = rot[frame]
        prev_pos, prev_rot = forward_kinematics(
            self.spec, clip.root_pos[frame - 1], rot[frame - 1]
        )
        self.prev_world_pos[i] = prev_pos
        self.prev_world_rot[i] = prev_rot
        self.steps[i] = 0
        self.done[i] = False
        self.reason[i] = REASON_NONE
        self.clip_idx[i] = clip_index
        self.frame_idx[i] = frame

    def _post_reset(self, indices: np.ndarray) -> None:
        """Backend hook for extra per-env state."""

    # -- stepping --------------------------------------------------------------
    def step(self, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray, dict]:
        actions = np.asarray(actions, dtype=np.float64)
        bad = ~np.all(np.isfinite(actions), axis=-1)
        active = ~self.done & ~bad
        newly_bad = ~self.done & bad
        self.done[newly_bad] = True
        self.reason[newly_bad] = REASON_NAN_ACTION

        if np.any(active):
            safe = np.where(np.isfinite(actions), actions, 0.0)
            targets = decode_pd_targets(self.spec, safe, self.config.joint_limit)
            prev_pos, prev_rot = forward_kinematics(self.spec, self.root_pos, self.local_rot)
            self._integrate(targets, active)
            self.prev_world_pos[active] = prev_pos[active]
            self.prev_world_rot[active] = prev_rot[active]
            self.steps[active] += 1

        world_pos, _ = forward_kinematics(self.spec, self.root_pos, self.local_rot)
        fall, timeout = check_termination(
            world_pos, self.steps, self.config, self.spec.end_effectors
        )
        newly_fall = active & fall
        newly_time = active & ~fall & timeout
        self.done[newly_fall | newly_time] = True
        self.reason[newly_fall] = REASON_FALL
        self.reason[newly_time] = REASON_TIMEOUT

        return self.current_states(), self.done.copy(), self._info()

    def _integrate(self, targets: np.ndarray, active: np.ndarray) -> None:
        raise NotImplementedError

    def force_done(self, indices: np.ndarray, reason: int = REASON_LOW_REWARD) -> None:
        indices = np.asarray(indices, dtype=np.int64)
        fresh = indices[~self.done[indices]]
        self.done[fresh] = True
        self.reason[fresh] = reason

    # -- observation -----------------------------------------------------------
    def current_states(self) -> np.ndarray:
        pos, rot = forward_kinematics(self.spec, self.root_pos, self.local_rot)
        hz = float(self.config.control_hz)
        lin = (pos - self.prev_world_pos) * hz
        rel = rot @ np.swapaxes(self.prev_world_rot, -1, -2)
        ang = matrix_to_axis_angle(rel) * hz
        return assemble_state(self.spec, self.root_pos, self.local_rot, lin, ang)

    def _info(self) -> dict:
        pos, rot = forward_kinematics(self.spec, self.root_pos, self.local_rot)
        hz = float(self.config.control_hz)
        yaw, _ = heading_yaw(self.local_rot[:, 0])
        return {
            "world_pos": pos,
            "world_rot": rot,
            "root_lin_vel": (pos[:, 0] - self.prev_world_pos[:, 0]) * hz,
            "yaw": yaw,
            "steps": self.steps.copy(),
            "done": self.done.copy(),
            "reason": self.reason.copy(),
            "clip_idx": self.clip_idx.copy(),
            "frame_idx": self.frame_idx.copy(),
        }

    # -- snapshots ---------------------------------------------------------------
    _SNAP_KEYS = (
        "root_pos", "local_rot", "prev_world_pos", "prev_world_rot",
        "steps", "done", "reason", "clip_idx", "frame_idx",
    )

    def snapshot(self) -> EnvSnapshot:
        return EnvSnapshot({k: getattr(self, k).copy() for k in self._snap_keys()})

    def restore(self, snap: EnvSnapshot) -> None:
        for k in self._snap_keys():
            if k not in snap.arrays:
                raise InvalidInputError(f"snapshot missing field {k!r}")
            getattr(self, k)[...] = snap.arrays[k]

    def _snap_keys(self) -> tuple[str, ...]:
        return self._SNAP_KEYS


class SurrogateEnv(MotionEnv):
    """Kinematic backend: joints slerp halfway to their targets each control
    step; the root never moves. Deterministic and fall-free by construction."""

    BLEND = 0.5

    def _integrate(self, targets: np.ndarray, active: np.ndarray) -> None:
        joints = actuated_joints(self.spec)
        cur = self.local_rot[active][:, joints]
        tgt = targets[active][:, joints]
        blended = slerp_matrices(cur, tgt, self.BLEND)
        block = self.local_rot[active]
        block[:, joints] = blended
        self.local_rot[active] = block


class PhysicsEnv(MotionEnv):
    """Simplified dynamic backend: decoupled joint PD dynamics, point-mass root
    with gravity, foot contact springs, and an upright stabilizer."""

    def __init__(self, spec, config, clips, num_envs) -> None:
        super().__init__(spec, config, clips, num_envs)
        B, J = num_envs, spec.num_joints
        self.joint_omega = np.zeros((B, J, 3))  # local rotation rates
        self.root_vel = np.zeros((B, 3))
        self.root_omega = np.zeros((B, 3))

    def _snap_keys(self) -> tuple[str, ...]:
        return self._SNAP_KEYS + ("joint_omega", "root_vel", "root_omega")

    def _post_reset(self, indices: np.ndarray) -> None:
        # seed integrator rates from the clip's own frame-to-frame motion
        hz = float(self.config.control_hz)
        for i in indices:
            c = int(self.clip_idx[i])
            t = int(self.frame_idx[i])
            clip, rot = self.clips[c], self._clip_rot[c]
            rel = np.swapaxes(rot[t - 1], -1, -2) @ rot[t]
            self.joint_omega[i] = matrix_to_axis_angle(rel) * hz
            self.root_vel[i] = (clip.root_pos[t] - clip.root_pos[t - 1]) * hz
            self.root_omega[i] = 0.0

    def _integrate(self, targets: np.ndarray, active: np.ndarray) -> None:
        cfg = self.config
        dt = 1.0 / cfg.sim_hz
        joints = actuated_joints(self.spec)
        idx = np.flatnonzero(active)
        rot = self.local_rot[idx]
        omega = self.joint_omega[idx]
        root_pos = self.root_pos[idx]
        root_vel = self.root_vel[idx]
        root_omega = self.root_omega[idx]
        tgt = targets[idx]

        ee = list(self.spec.end_effectors)
        for _ in range(cfg.substeps):
            # joint PD: unit-inertia rotational dynamics in the local frame
            err = matrix_to_axis_angle(np.swapaxes(rot[:, joints], -1, -2) @ tgt[:, joints])
            acc = cfg.kp * err - cfg.kd * omega[:, joints]
            w = omega[:, joints] + acc * dt
            speed = np.linalg.norm(w, axis=-1, keepdims=True)
            w *= np.where(
                speed > cfg.max_joint_speed,
                cfg.max_joint_speed / np.maximum(speed, 1e-12),
                1.0,
            )
            omega[:, joints] = w
            rot[:, joints] = rot[:, joints] @ axis_angle_to_matrix(w * dt)

            # root translation: gravity + foot contact springs
            world_pos, _ = forward_kinematics(self.spec, root_pos, rot)
            force = np.zeros_like(root_vel)
            force[:, 2] -= cfg.gravity * cfg.root_mass
            contact = np.zeros(len(idx), dtype=bool)
            for e in ee:
                pen = -world_pos[:, e, 2]
                touching = pen > 0.0
                contact |= touching
                fz = np.where(
                    touching,
                    cfg.contact_stiffness * pen - cfg.contact_damping * root_vel[:, 2],
                    0.0,
                )
                force[:, 2] += np.maximum(fz, 0.0)
            force[:, :2] -= (
                cfg.contact_friction * cfg.root_mass * root_vel[:, :2] * contact[:, None]
            )
            root_vel = root_vel + force / cfg.root_mass * dt
            root_pos = root_pos + root_vel * dt

            # root orientation: PD toward upright, yaw damped only
            up = rot[:, 0, :, 2]
            tilt = np.cross(up, np.broadcast_to([0.0, 0.0, 1.0], up.shape))
            root_acc = cfg.root_kp * tilt - cfg.root_kd * root_omega
            root_omega = root_omega + root_acc * dt
            rot[:, 0] = axis_angle_to_matrix(root_omega * dt) @ rot[:, 0]

        self.local_rot[idx] = rot
        self.joint_omega[idx] = omega
        self.root_pos[idx] = root_pos
        self.root_vel[idx] = root_vel
        self.root_omega[idx] = root_omega


ENV_BACKENDS = {"surrogate": SurrogateEnv, "physics": PhysicsEnv}


def make_env(
    backend: str,
    spec: CharacterSpec,
    config: EnvConfig,
    clips: list[MotionClip],
    num_envs: int,
) -> MotionEnv:
    try:
        cls = ENV_BACKENDS[backend]
    except KeyError:
        raise ConfigError(
            f"unknown env backend {backend!r}; choose from {sorted(ENV_BACKENDS)}"
        ) from None
    return cls(spec, config, clips, num_envs)
