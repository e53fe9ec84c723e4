"""Skeleton description, poses, motion clips, and clip file I/O.

A character is a joint tree: parents[i] < i with exactly one root at index 0.
Joint rotations are stored in the 6D representation (first two columns of the
local rotation matrix). Clip files are JSON with the skeleton embedded, so a
clip is self-describing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ClipFormatError, InvalidInputError
from .rotations import decode_rotation_6d, encode_rotation_6d


@dataclass(frozen=True, eq=False)
class CharacterSpec:
    """Static skeleton description.

    dof_per_joint is the actuation width per joint (0 for the passive root,
    3 for spherical joints). The bundled simulators require dof in {0, 3}.
    """

    joint_names: tuple[str, ...]
    parents: tuple[int, ...]
    offsets: np.ndarray  # (J, 3) parent-local, float64
    dof_per_joint: tuple[int, ...]
    end_effectors: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        J = len(self.joint_names)
        if J < 2:
            raise InvalidInputError("a character needs at least 2 joints")
        if len(set(self.joint_names)) != J or any(not n for n in self.joint_names):
            raise InvalidInputError("joint names must be unique and non-empty")
        if len(self.parents) != J:
            raise InvalidInputError("parents length must match joint count")
        if self.parents[0] != -1:
            raise InvalidInputError("joint 0 must be the root (parent -1)")
        for i, p in enumerate(self.parents[1:], start=1):
            if not 0 <= p < i:
                raise InvalidInputError(
                    f"parents must be topologically ordered; parents[{i}]={p}"
                )
        offsets = np.asarray(self.offsets, dtype=np.float64)
        if offsets.shape != (J, 3) or not np.all(np.isfinite(offsets)):
            raise InvalidInputError(f"offsets must be finite with shape ({J}, 3)")
        object.__setattr__(self, "offsets", offsets)
        if len(self.dof_per_joint) != J:
            raise InvalidInputError("dof_per_joint length must match joint count")
        if any(d not in (0, 1, 2, 3) for d in self.dof_per_joint):
            raise InvalidInputError("dof_per_joint entries must be in 0..3")
        if self.dof_per_joint[0] != 0:
            raise InvalidInputError("the root joint is unactuated (dof 0)")
        for e in self.end_effectors:
            if not 0 <= e < J:
                raise InvalidInputError(f"end effector index {e} out of range")

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    @property
    def total_dof(self) -> int:
        return sum(self.dof_per_joint)

    def joint_index(self, name: str) -> int:
        try:
            return self.joint_names.index(name)
        except ValueError:
            raise InvalidInputError(f"unknown joint name {name!r}") from None

    def matches(self, other: "CharacterSpec") -> bool:
        """Structural equality: same tree, names, and offsets (within 1e-9)."""
        return (
            self.joint_names == other.joint_names
            and self.parents == other.parents
            and self.dof_per_joint == other.dof_per_joint
            and self.end_effectors == other.end_effectors
            and np.allclose(self.offsets, other.offsets, atol=1e-9)
        )

    def to_dict(self) -> dict:
        return {
            "joint_names": list(self.joint_names),
            "parents": list(self.parents),
            "offsets": self.offsets.tolist(),
            "dof_per_joint": list(self.dof_per_joint),
            "end_effectors": list(self.end_effectors),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CharacterSpec":
        return cls(
            joint_names=tuple(d["joint_names"]),
            parents=tuple(int(p) for p in d["parents"]),
            offsets=np.asarray(d["offsets"], dtype=np.float64),
            dof_per_joint=tuple(int(x) for x in d["dof_per_joint"]),
            end_effectors=tuple(int(x) for x in d.get("end_effectors", ())),
        )


@dataclass
class Pose:
    """One character posture: world root position + per-joint local 6D rotations."""

    root_pos: np.ndarray  # (3,)
    rotations: np.ndarray  # (J, 6)

    def __post_init__(self) -> None:
        self.root_pos = np.asarray(self.root_pos, dtype=np.float64)
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        if self.root_pos.shape != (3,):
            raise InvalidInputError(f"root_pos must be (3,), got {self.root_pos.shape}")
        if self.rotations.ndim != 2 or self.rotations.shape[1] != 6:
            raise InvalidInputError(f"rotations must be (J, 6), got {self.rotations.shape}")
        if not (np.all(np.isfinite(self.root_pos)) and np.all(np.isfinite(self.rotations))):
            raise InvalidInputError("pose contains non-finite values")

    def rotation_matrices(self) -> np.ndarray:
        return decode_rotation_6d(self.rotations)

    @classmethod
    def from_matrices(cls, root_pos: np.ndarray, rot: np.ndarray) -> "Pose":
        return cls(root_pos=root_pos, rotations=encode_rotation_6d(rot))


@dataclass
class MotionClip:
    """A fixed-rate sequence of poses on one skeleton.

    Frames are stored as arrays (root_pos (T, 3), rotations (T, J, 6)) for
    vectorized access; frame(t) materializes a Pose view.
    """

    spec: CharacterSpec
    fps: float
    root_pos: np.ndarray  # (T, 3)
    rotations: np.ndarray  # (T, J, 6)
    name: str = "clip"

    def __post_init__(self) -> None:
        if self.fps <= 0 or not np.isfinite(self.fps):
            raise InvalidInputError(f"fps must be positive, got {self.fps}")
        self.root_pos = np.asarray(self.root_pos, dtype=np.float64)
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        J = self.spec.num_joints
        T = self.root_pos.shape[0]
        if T < 2:
            raise InvalidInputError("a clip needs at least 2 frames")
        if self.root_pos.shape != (T, 3):
            raise InvalidInputError(f"root_pos must be (T, 3), got {self.root_pos.shape}")
        if self.rotations.shape != (T, J, 6):
            raise InvalidInputError(
                f"rotations must be (T, {J}, 6), got {self.rotations.shape}"
            )
        if not (np.all(np.isfinite(self.root_pos)) and np.all(np.isfinite(self.rotations))):
            raise InvalidInputError("clip contains non-finite values")

    def __len__(self) -> int:
        return self.root_pos.shape[0]

    @property
    def duration(self) -> float:
        return (len(self) - 1) / self.fps

    def frame(self, t: int) -> Pose:
        if not 0 <= t < len(self):
            raise InvalidInputError(f"frame index {t} out of range [0, {len(self)})")
        return Pose(root_pos=self.root_pos[t], rotations=self.rotations[t])

    def rotation_matrices(self) -> np.ndarray:
        """(T, J, 3, 3) decoded local rotations."""
        return decode_rotation_6d(self.rotations)


# ---------------------------------------------------------------------------
# presets

def desk_character() -> CharacterSpec:
    """Small 9-joint humanoid for desk-scale runs: state dim 15*9-2 = 133.

    Root pelvis plus one proximal and one distal joint per limb, all spherical
    (24 actuated DoF). Feet sit at z=0 with the root at 0.9 in the rest pose.
    """
    names = (
        "pelvis",
        "l_shoulder", "l_hand",
        "r_shoulder", "r_hand",
        "l_hip", "l_foot",
        "r_hip", "r_foot",
    )
    parents = (-1, 0, 1, 0, 3, 0, 5, 0, 7)
    offsets = np.array(
        [
            [0.0, 0.0, 0.0],
            [0.0, 0.25, 0.45], [0.0, 0.0, -0.55],
            [0.0, -0.25, 0.45], [0.0, 0.0, -0.55],
            [0.0, 0.12, -0.05], [0.0, 0.0, -0.85],
            [0.0, -0.12, -0.05], [0.0, 0.0, -0.85],
        ]
    )
    dof = (0, 3, 3, 3, 3, 3, 3, 3, 3)
    ee = (names.index("l_foot"), names.index("r_foot"))
    return CharacterSpec(names, parents, offsets, dof, ee)


DESK_ROOT_HEIGHT = 0.9


def smpl22_character() -> CharacterSpec:
    """22-joint humanoid (SMPL-style topology): state dim 15*22-2 = 328, 63 DoF."""
    names = (
        "pelvis",
        "l_hip", "r_hip", "spine1",
        "l_knee", "r_knee", "spine2",
        "l_ankle", "r_ankle", "spine3",
        "l_foot", "r_foot", "neck",
        "l_collar", "r_collar", "head",
        "l_shoulder", "r_shoulder",
        "l_elbow", "r_elbow",
        "l_wrist", "r_wrist",
    )
    parents = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19)
    offsets = np.array(
        [
            [0.0, 0.0, 0.0],
            [0.0, 0.09, -0.05], [0.0, -0.09, -0.05], [0.0, 0.0, 0.11],
            [0.0, 0.0, -0.42], [0.0, 0.0, -0.42], [0.0, 0.0, 0.13],
            [0.0, 0.0, -0.40], [0.0, 0.0, -0.40], [0.0, 0.0, 0.13],
            [0.13, 0.0, -0.08], [0.13, 0.0, -0.08], [0.0, 0.0, 0.16],
            [0.0, 0.08, 0.12], [0.0, -0.08, 0.12], [0.0, 0.0, 0.12],
            [0.0, 0.10, 0.02], [0.0, -0.10, 0.02],
            [0.0, 0.26, 0.0], [0.0, -0.26, 0.0],
            [0.0, 0.25, 0.0], [0.0, -0.25, 0.0],
        ]
    )
    dof = (0,) + (3,) * 21
    ee = tuple(names.index(n) for n in ("l_ankle", "r_ankle", "l_foot", "r_foot", "l_wrist", "r_wrist"))
    return CharacterSpec(names, parents, offsets, dof, ee)


SMPL22_ROOT_HEIGHT = 1.0

CHARACTER_PRESETS = {
    "desk": (desk_character, DESK_ROOT_HEIGHT),
    "smpl22": (smpl22_character, SMPL22_ROOT_HEIGHT),
}


def character_preset(name: str) -> tuple[CharacterSpec, float]:
    """Return (spec, rest root height) for a named preset."""
    try:
        build, height = CHARACTER_PRESETS[name]
    except KeyError:
        raise InvalidInputError(
            f"unknown character preset {name!r}; choose from {sorted(CHARACTER_PRESETS)}"
        ) from None
    return build(), height


def rest_pose(spec: CharacterSpec, root_height: float) -> Pose:
    """Identity rotations with the root raised to root_height."""
    ident = np.tile(np.array([1.0, 0, 0, 0, 1.0, 0]), (spec.num_joints, 1))
    return Pose(root_pos=np.array([0.0, 0.0, root_height]), rotations=ident)


# ---------------------------------------------------------------------------
# clip files

def _fail(path: str | Path, field_name: str, msg: str) -> ClipFormatError:
    return ClipFormatError(f"{path}: {field_name}: {msg}")


def load_clip(path: str | Path) -> MotionClip:
    """Load a clip JSON file, validating structure with field-level diagnostics.

    The file embeds the skeleton; actuation defaults to spherical joints with a
    passive root since clip files carry no control metadata.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ClipFormatError(f"{path}: file not found") from None
    except json.JSONDecodeError as e:
        raise ClipFormatError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None
    if not isinstance(raw, dict):
        raise _fail(path, "$", "top level must be an object")
    for key in ("fps", "joint_names", "parents", "offsets", "frames"):
        if key not in raw:
            raise _fail(path, key, "missing required key")

    fps = raw["fps"]
    if not isinstance(fps, (int, float)) or fps <= 0:
        raise _fail(path, "fps", f"must be a positive number, got {fps!r}")
    names = raw["joint_names"]
    if not isinstance(names, list) or not names or not all(isinstance(n, str) for n in names):
        raise _fail(path, "joint_names", "must be a non-empty list of strings")
    J = len(names)
    parents = raw["parents"]
    if not isinstance(parents, list) or len(parents) != J:
        raise _fail(path, "parents", f"must list {J} parent indices")
    offsets = raw["offsets"]
    if not isinstance(offsets, list) or len(offsets) != J:
        raise _fail(path, "offsets", f"must list {J} offset triples")
    for j, off in enumerate(offsets):
        if not isinstance(off, list) or len(off) != 3:
            raise _fail(path, f"offsets[{j}]", "must be a 3-vector")
    ee = raw.get("end_effectors", [])
    if not isinstance(ee, list) or not all(isinstance(e, int) and 0 <= e < J for e in ee):
        raise _fail(path, "end_effectors", "must be a list of valid joint indices")
    try:
        spec = CharacterSpec(
            joint_names=tuple(names),
            parents=tuple(int(p) for p in parents),
            offsets=np.asarray(offsets, dtype=np.float64),
            dof_per_joint=(0,) + (3,) * (J - 1),
            end_effectors=tuple(ee),
        )
    except (InvalidInputError, TypeError, ValueError) as e:
        raise _fail(path, "skeleton", str(e)) from None

    frames = raw["frames"]
    if not isinstance(frames, list) or len(frames) < 2:
        raise _fail(path, "frames", "must be a list with at least 2 frames")
    root_pos = np.zeros((len(frames), 3))
    rotations = np.zeros((len(frames), J, 6))
    for t, fr in enumerate(frames):
        if not isinstance(fr, dict):
            raise _fail(path, f"frames[{t}]", "must be an object")
        rp = fr.get("root_pos")
        if not isinstance(rp, list) or len(rp) != 3:
            raise _fail(path, f"frames[{t}].root_pos", "must be a 3-vector")
        rots = fr.get("rotations_6d")
        if not isinstance(rots, list) or len(rots) != J:
            raise _fail(path, f"frames[{t}].rotations_6d", f"must list {J} entries")
        for j, r in enumerate(rots):
            if not isinstance(r, list) or len(r) != 6:
                raise _fail(path, f"frames[{t}].rotations_6d[{j}]", "must be a 6-vector")
        root_pos[t] = rp
        rotations[t] = rots
    if not (np.all(np.isfinite(root_pos)) and np.all(np.isfinite(rotations))):
        raise _fail(path, "frames", "contain non-finite values")
    try:
        decode_rotation_6d(rotations)
    except InvalidInputError as e:
        raise _fail(path, "frames[*].rotations_6d", str(e)) from None
    return MotionClip(spec=spec, fps=float(fps), root_pos=root_pos,
                      rotations=rotations, name=path.stem)


def save_clip(clip: MotionClip, path: str | Path) -> None:
    """Write a clip to JSON; load_clip(save_clip(c)) round-trips exactly."""
    path = Path(path)
    doc = {
        "fps": clip.fps,
        "joint_names": list(clip.spec.joint_names),
        "parents": list(clip.spec.parents),
        "offsets": clip.spec.offsets.tolist(),
        "end_effectors": list(clip.spec.end_effectors),
        "frames": [
            {
                "root_pos": clip.root_pos[t].tolist(),
                "rotations_6d": clip.rotations[t].tolist(),
            }
            for t in range(len(clip))
        ],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc))
