"""Forward kinematics, the observation layout, and kinematic clip blending.

The observation vector for a J-joint character has 15J-2 entries:

    [root height (1)]
    [non-root joint positions relative to the root, heading frame (3(J-1))]
    [per-joint local rotations, 6D; the root's is heading-relative (6J)]
    [per-joint linear velocities, heading frame (3J)]
    [per-joint angular velocities, heading frame (3J)]

The heading frame removes root yaw and horizontal position: X is the
character's facing direction projected to the ground, Z stays up.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .character import CharacterSpec, MotionClip
from .errors import IncompatibleClipsError, InvalidInputError
from .rotations import (
    decode_rotation_6d,
    encode_rotation_6d,
    matrix_to_axis_angle,
    rotz,
)

HEADING_EPS = 1e-6


def state_dim(num_joints: int) -> int:
    return 15 * num_joints - 2


@dataclass(frozen=True)
class StateLayout:
    """Index bookkeeping for the observation vector of one skeleton."""

    num_joints: int

    @property
    def dim(self) -> int:
        return state_dim(self.num_joints)

    @property
    def root_height(self) -> slice:
        return slice(0, 1)

    @property
    def positions(self) -> slice:
        return slice(1, 1 + 3 * (self.num_joints - 1))

    @property
    def rotations(self) -> slice:
        start = 1 + 3 * (self.num_joints - 1)
        return slice(start, start + 6 * self.num_joints)

    @property
    def linear_velocities(self) -> slice:
        start = self.rotations.stop
        return slice(start, start + 3 * self.num_joints)

    @property
    def angular_velocities(self) -> slice:
        start = self.linear_velocities.stop
        return slice(start, start + 3 * self.num_joints)

    def position_slice(self, joint: int) -> slice:
        # non-root joints only; joint j occupies block j-1
        if joint < 1 or joint >= self.num_joints:
            raise InvalidInputError(f"position block exists for joints 1..J-1, got {joint}")
        start = 1 + 3 * (joint - 1)
        return slice(start, start + 3)

    def rotation_slice(self, joint: int) -> slice:
        start = self.rotations.start + 6 * joint
        return slice(start, start + 6)

    def linear_velocity_slice(self, joint: int) -> slice:
        start = self.linear_velocities.start + 3 * joint
        return slice(start, start + 3)

    def angular_velocity_slice(self, joint: int) -> slice:
        start = self.angular_velocities.start + 3 * joint
        return slice(start, start + 3)

    def entry_joints(self) -> np.ndarray:
        """Owning joint index for every entry of the state vector."""
        J = self.num_joints
        owner = np.zeros(self.dim, dtype=np.int64)
        owner[0] = 0
        for j in range(1, J):
            owner[self.position_slice(j)] = j
        for j in range(J):
            owner[self.rotation_slice(j)] = j
            owner[self.linear_velocity_slice(j)] = j
            owner[self.angular_velocity_slice(j)] = j
        return owner


def forward_kinematics(
    spec: CharacterSpec, root_pos: np.ndarray, local_rot: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """World joint positions and rotations.

    root_pos: (..., 3); local_rot: (..., J, 3, 3). Returns (..., J, 3) and
    (..., J, 3, 3).
    """
    root_pos = np.asarray(root_pos, dtype=np.float64)
    local_rot = np.asarray(local_rot, dtype=np.float64)
    J = spec.num_joints
    if local_rot.shape[-3:] != (J, 3, 3):
        raise InvalidInputError(f"local_rot must be (..., {J}, 3, 3), got {local_rot.shape}")
    batch = local_rot.shape[:-3]
    if root_pos.shape != batch + (3,):
        raise InvalidInputError(f"root_pos must be {batch + (3,)}, got {root_pos.shape}")
    pos = np.zeros(batch + (J, 3))
    rot = np.zeros(batch + (J, 3, 3))
    pos[..., 0, :] = root_pos
    rot[..., 0, :, :] = local_rot[..., 0, :, :]
    for j in range(1, J):
        p = spec.parents[j]
        rot[..., j, :, :] = rot[..., p, :, :] @ local_rot[..., j, :, :]
        off = spec.offsets[j]
        pos[..., j, :] = pos[..., p, :] + np.einsum("...ij,j->...i", rot[..., p, :, :], off)
    return pos, rot


def heading_yaw(root_rot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Yaw of the root's facing (local +X) projected to the ground.

    Returns (yaw, degenerate) where degenerate flags roots facing straight
    up/down; those fall back to yaw 0 (world X).
    """
    root_rot = np.asarray(root_rot, dtype=np.float64)
    fwd = root_rot[..., :, 0]  # first column: local +X in world coords
    fx, fy = fwd[..., 0], fwd[..., 1]
    norm = np.hypot(fx, fy)
    degenerate = norm < HEADING_EPS
    yaw = np.where(degenerate, 0.0, np.arctan2(fy, fx))
    return yaw, degenerate


def assemble_state(
    spec: CharacterSpec,
    root_pos: np.ndarray,
    local_rot: np.ndarray,
    lin_vel: np.ndarray,
    ang_vel: np.ndarray,
) -> np.ndarray:
    """Build heading-normalized observation vectors (..., 15J-2).

    lin_vel/ang_vel are per-joint world-frame velocities (..., J, 3).
    """
    J = spec.num_joints
    pos, rot = forward_kinematics(spec, root_pos, local_rot)
    lin_vel = np.asarray(lin_vel, dtype=np.float64)
    ang_vel = np.asarray(ang_vel, dtype=np.float64)
    batch = local_rot.shape[:-3]
    if lin_vel.shape != batch + (J, 3) or ang_vel.shape != batch + (J, 3):
        raise InvalidInputError("velocities must be (..., J, 3) matching the batch")

    yaw, _ = heading_yaw(local_rot[..., 0, :, :])
    H = rotz(-yaw)  # (..., 3, 3)

    rel = pos[..., 1:, :] - pos[..., :1, :]
    rel_h = np.einsum("...ij,...kj->...ki", H, rel)
    lin_h = np.einsum("...ij,...kj->...ki", H, lin_vel)
    ang_h = np.einsum("...ij,...kj->...ki", H, ang_vel)

    rot_out = local_rot.copy()
    rot_out[..., 0, :, :] = H @ local_rot[..., 0, :, :]
    rot6 = encode_rotation_6d(rot_out)

    parts = [
        root_pos[..., 2:3],
        rel_h.reshape(batch + (3 * (J - 1),)),
        rot6.reshape(batch + (6 * J,)),
        lin_h.reshape(batch + (3 * J,)),
        ang_h.reshape(batch + (3 * J,)),
    ]
    return np.concatenate(parts, axis=-1)


def finite_diff_velocities(clip: MotionClip) -> tuple[np.ndarray, np.ndarray]:
    """Backward-difference world velocities per frame: (T, J, 3) linear and angular.

    v[t] = (p[t] - p[t-1]) * fps with v[0] copied from v[1]; angular rates come
    from the relative world rotation over one frame. Matches the simulators'
    causal convention.
    """
    rot = clip.rotation_matrices()
    pos, world_rot = forward_kinematics(clip.spec, clip.root_pos, rot)
    fps = clip.fps
    lin = np.zeros_like(pos)
    lin[1:] = (pos[1:] - pos[:-1]) * fps
    lin[0] = lin[1]
    rel = world_rot[1:] @ np.swapaxes(world_rot[:-1], -1, -2)
    ang = np.zeros_like(pos)
    ang[1:] = matrix_to_axis_angle(rel) * fps
    ang[0] = ang[1]
    return lin, ang


def clip_states(clip: MotionClip) -> np.ndarray:
    """Observation vectors (T, 15J-2) for every frame of a clip."""
    rot = clip.rotation_matrices()
    lin, ang = finite_diff_velocities(clip)
    return assemble_state(clip.spec, clip.root_pos, rot, lin, ang)


def blend_compose(
    clip_a: MotionClip, clip_b: MotionClip, partition, parts: tuple[int | str, ...]
) -> MotionClip:
    """Frame-wise kinematic splice: joints in `parts` groups take clip_b's local
    rotations, everything else (and the root translation) stays clip_a's.

    Clips must share a skeleton and fps; output length is min(len(a), len(b)).
    `partition` provides .groups (per-group joint index tuples); parts may be
    group indices or group names.
    """
    if not clip_a.spec.matches(clip_b.spec):
        raise IncompatibleClipsError(
            f"clips {clip_a.name!r} and {clip_b.name!r} have different skeletons"
        )
    if abs(clip_a.fps - clip_b.fps) > 1e-9:
        raise IncompatibleClipsError(
            f"fps mismatch: {clip_a.fps} vs {clip_b.fps}"
        )
    groups = partition.groups
    parts = tuple(partition.group_index(g) if isinstance(g, str) else g for g in parts)
    for g in parts:
        if not 0 <= g < len(groups):
            raise InvalidInputError(f"part index {g} out of range for {len(groups)} groups")
    T = min(len(clip_a), len(clip_b))
    rotations = clip_a.rotations[:T].copy()
    for g in sorted(set(parts)):
        for j in groups[g]:
            rotations[:, j] = clip_b.rotations[:T, j]
    return MotionClip(
        spec=clip_a.spec,
        fps=clip_a.fps,
        root_pos=clip_a.root_pos[:T].copy(),
        rotations=rotations,
        name=f"{clip_a.name}+{clip_b.name}",
    )
