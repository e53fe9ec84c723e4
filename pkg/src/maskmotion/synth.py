"""Deterministic synthetic motion clips for tests, demos, and desk-scale runs.

Two full-body styles with different frequencies, axes, and limb phase locking:

* style A ("gait"): limbs swing fore/aft at 1 Hz, left/right antiphase, arms
  counter to same-side legs. Hands and feet lag their parent joint.
* style B ("sway"): arms sweep laterally at 1.5 Hz in mirror symmetry, legs
  sway gently at the same frequency.

Within a style every limb's phase is locked to every other limb, so a masked
limb's configuration is inferable from the visible ones; across styles the
relation differs. The root stays pinned (static position, identity heading),
matching the kinematic surrogate simulator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .character import CharacterSpec, MotionClip, Pose, desk_character, DESK_ROOT_HEIGHT
from .masking import BodyPartition, build_index_map, desk_partition
from .rotations import axis_angle_to_matrix, encode_rotation_6d

X = np.array([1.0, 0.0, 0.0])
Y = np.array([0.0, 1.0, 0.0])
Z = np.array([0.0, 0.0, 1.0])


def oscillator_clip(
    spec: CharacterSpec,
    channels: list[tuple[str, np.ndarray, float, float, float]],
    name: str,
    fps: float = 30.0,
    frames: int = 90,
    root_height: float = DESK_ROOT_HEIGHT,
) -> MotionClip:
    """Build a clip from per-joint sinusoid channels (joint, axis, amp, hz, phase)."""
    t = np.arange(frames) / fps
    J = spec.num_joints
    rotvecs = np.zeros((frames, J, 3))
    for joint, axis, amp, hz, phase in channels:
        j = spec.joint_index(joint)
        angle = amp * np.sin(2.0 * np.pi * hz * t + phase)
        rotvecs[:, j, :] += angle[:, None] * np.asarray(axis, dtype=np.float64)
    rotations = encode_rotation_6d(axis_angle_to_matrix(rotvecs))
    root_pos = np.tile(np.array([0.0, 0.0, root_height]), (frames, 1))
    return MotionClip(spec=spec, fps=fps, root_pos=root_pos, rotations=rotations, name=name)


def style_a_clip(spec: CharacterSpec, fps: float = 30.0, frames: int = 90) -> MotionClip:
    pi = np.pi
    channels = [
        ("l_shoulder", Y, 0.50, 1.0, 0.0),
        ("l_hand", Y, 0.30, 1.0, 0.5),
        ("r_shoulder", Y, 0.50, 1.0, pi),
        ("r_hand", Y, 0.30, 1.0, pi + 0.5),
        ("l_hip", Y, 0.40, 1.0, pi),
        ("l_foot", Y, 0.25, 1.0, pi - 0.6),
        ("r_hip", Y, 0.40, 1.0, 0.0),
        ("r_foot", Y, 0.25, 1.0, -0.6),
    ]
    return oscillator_clip(spec, channels, name="style_a", fps=fps, frames=frames)


def style_b_clip(spec: CharacterSpec, fps: float = 30.0, frames: int = 90) -> MotionClip:
    channels = [
        ("l_shoulder", X, 0.80, 1.5, 0.0),
        ("l_hand", X, 0.35, 1.5, 0.4),
        ("r_shoulder", X, -0.80, 1.5, 0.0),
        ("r_hand", X, -0.35, 1.5, 0.4),
        ("l_hip", X, 0.12, 1.5, 0.0),
        ("l_foot", X, 0.08, 1.5, 0.3),
        ("r_hip", X, -0.12, 1.5, 0.0),
        ("r_foot", X, -0.08, 1.5, 0.3),
    ]
    return oscillator_clip(spec, channels, name="style_b", fps=fps, frames=frames)


def arm_overlay_clip(spec: CharacterSpec, fps: float = 30.0, frames: int = 90) -> MotionClip:
    """Arm content for composition: slow wide lateral sweeps over style-A legs."""
    pi = np.pi
    channels = [
        ("l_shoulder", X, 1.00, 0.75, 0.0),
        ("l_hand", X, 0.45, 0.75, 0.6),
        ("r_shoulder", X, -1.00, 0.75, 0.0),
        ("r_hand", X, -0.45, 0.75, 0.6),
        ("l_hip", Y, 0.40, 1.0, pi),
        ("l_foot", Y, 0.25, 1.0, pi - 0.6),
        ("r_hip", Y, 0.40, 1.0, 0.0),
        ("r_foot", Y, 0.25, 1.0, -0.6),
    ]
    return oscillator_clip(spec, channels, name="arm_overlay", fps=fps, frames=frames)


def constant_pose_clip(
    spec: CharacterSpec, pose: Pose, frames: int = 30, fps: float = 30.0, name: str = "hold"
) -> MotionClip:
    return MotionClip(
        spec=spec,
        fps=fps,
        root_pos=np.tile(pose.root_pos, (frames, 1)),
        rotations=np.tile(pose.rotations[None], (frames, 1, 1)),
        name=name,
    )


@dataclass(frozen=True)
class DeskBundle:
    """The standard desk-scale setup used across tests and experiments."""

    spec: CharacterSpec
    root_height: float
    partition: BodyPartition
    index_map: np.ndarray
    style_a: MotionClip
    style_b: MotionClip
    overlay: MotionClip

    @property
    def clips(self) -> list[MotionClip]:
        return [self.style_a, self.style_b]


def desk_bundle(frames: int = 90) -> DeskBundle:
    spec = desk_character()
    partition = desk_partition(spec)
    return DeskBundle(
        spec=spec,
        root_height=DESK_ROOT_HEIGHT,
        partition=partition,
        index_map=build_index_map(spec, partition),
        style_a=style_a_clip(spec, frames=frames),
        style_b=style_b_clip(spec, frames=frames),
        overlay=arm_overlay_clip(spec, frames=frames),
    )
