"""Body partitions, state-entry group maps, and stochastic mask sampling.

A mask selects body-part groups; its dense form has one entry per state
dimension (1 = blanked). Masked observations are s * (1 - dense), and the
policy additionally sees the per-group flag vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .character import CharacterSpec
from .errors import InvalidInputError, InvalidPartitionError
from .kinematics import StateLayout

PART_NAMES = ("Trunk", "LeftArm", "RightArm", "LeftLeg", "RightLeg")


@dataclass(frozen=True)
class BodyPartition:
    """Named, disjoint joint groups covering the skeleton."""

    names: tuple[str, ...]
    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        if len(self.names) != len(self.groups):
            raise InvalidPartitionError("names and groups must align")
        if len(self.names) < 2:
            raise InvalidPartitionError("a partition needs at least 2 groups")
        if len(set(self.names)) != len(self.names):
            raise InvalidPartitionError("group names must be unique")

    @property
    def num_groups(self) -> int:
        return len(self.names)

    def validate_for(self, spec: CharacterSpec) -> None:
        seen: set[int] = set()
        for name, group in zip(self.names, self.groups):
            if not group:
                raise InvalidPartitionError(f"group {name!r} is empty")
            for j in group:
                if not 0 <= j < spec.num_joints:
                    raise InvalidPartitionError(f"group {name!r}: joint {j} out of range")
                if j in seen:
                    raise InvalidPartitionError(f"joint {j} appears in two groups")
                seen.add(j)
        if len(seen) != spec.num_joints:
            missing = sorted(set(range(spec.num_joints)) - seen)
            raise InvalidPartitionError(f"joints {missing} are not covered by any group")

    def group_of_joint(self, spec: CharacterSpec) -> np.ndarray:
        self.validate_for(spec)
        out = np.zeros(spec.num_joints, dtype=np.int64)
        for g, group in enumerate(self.groups):
            for j in group:
                out[j] = g
        return out

    def group_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise InvalidInputError(f"unknown group {name!r}") from None

    def to_dict(self) -> dict:
        return {"names": list(self.names), "groups": [list(g) for g in self.groups]}

    @classmethod
    def from_dict(cls, d: dict) -> "BodyPartition":
        return cls(
            names=tuple(d["names"]),
            groups=tuple(tuple(int(j) for j in g) for g in d["groups"]),
        )


def desk_partition(spec: CharacterSpec) -> BodyPartition:
    idx = spec.joint_index
    return BodyPartition(
        names=PART_NAMES,
        groups=(
            (idx("pelvis"),),
            (idx("l_shoulder"), idx("l_hand")),
            (idx("r_shoulder"), idx("r_hand")),
            (idx("l_hip"), idx("l_foot")),
            (idx("r_hip"), idx("r_foot")),
        ),
    )


def smpl22_partition(spec: CharacterSpec) -> BodyPartition:
    idx = spec.joint_index
    return BodyPartition(
        names=PART_NAMES,
        groups=(
            tuple(idx(n) for n in ("pelvis", "spine1", "spine2", "spine3", "neck", "head")),
            tuple(idx(n) for n in ("l_collar", "l_shoulder", "l_elbow", "l_wrist")),
            tuple(idx(n) for n in ("r_collar", "r_shoulder", "r_elbow", "r_wrist")),
            tuple(idx(n) for n in ("l_hip", "l_knee", "l_ankle", "l_foot")),
            tuple(idx(n) for n in ("r_hip", "r_knee", "r_ankle", "r_foot")),
        ),
    )


PARTITION_PRESETS = {"desk": desk_partition, "smpl22": smpl22_partition}


def build_index_map(spec: CharacterSpec, partition: BodyPartition) -> np.ndarray:
    """Group id for every state entry. Root-owned entries (height, root rotation
    and velocities) belong to the root joint's group."""
    owner = StateLayout(spec.num_joints).entry_joints()
    return partition.group_of_joint(spec)[owner]


@dataclass(frozen=True)
class Mask:
    """A body-part mask: per-group flags plus the dense per-entry form."""

    flags: np.ndarray  # (N,) bool
    dense: np.ndarray  # (S,) float64 in {0, 1}

    @classmethod
    def from_flags(cls, flags: np.ndarray, index_map: np.ndarray) -> "Mask":
        flags = np.asarray(flags, dtype=bool)
        if flags.ndim != 1:
            raise InvalidInputError("flags must be a 1-d bool vector")
        if index_map.min() < 0 or index_map.max() >= flags.shape[0]:
            raise InvalidInputError("index map references groups outside the flag vector")
        dense = flags[index_map].astype(np.float64)
        return cls(flags=flags, dense=dense)

    @classmethod
    def from_parts(cls, parts, num_groups: int, index_map: np.ndarray) -> "Mask":
        flags = np.zeros(num_groups, dtype=bool)
        for g in parts:
            if not 0 <= g < num_groups:
                raise InvalidInputError(f"part index {g} out of range")
            flags[g] = True
        return cls.from_flags(flags, index_map)

    @classmethod
    def null(cls, num_groups: int, index_map: np.ndarray) -> "Mask":
        return cls.from_flags(np.zeros(num_groups, dtype=bool), index_map)

    @property
    def popcount(self) -> int:
        return int(self.flags.sum())

    @property
    def is_null(self) -> bool:
        return self.popcount == 0

    def parts(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.flags))


def sample_mask(
    rng: np.random.Generator,
    num_groups: int,
    index_map: np.ndarray,
    rho: float = 0.8,
    max_parts: int = 3,
    subsets: tuple[tuple[int, ...], ...] | None = None,
) -> Mask:
    """Draw a mask: null with probability 1-rho, otherwise a uniform non-empty
    part subset of size k ~ U{1..max_parts}.

    When `subsets` is given the masked draw picks uniformly among those fixed
    part subsets instead (used by residual training, which only has blend data
    for configured subsets).
    """
    if not 0.0 <= rho <= 1.0:
        raise InvalidInputError(f"rho must be in [0, 1], got {rho}")
    if subsets is None and not 1 <= max_parts < num_groups:
        raise InvalidInputError(
            f"max_parts must be in [1, {num_groups - 1}], got {max_parts}"
        )
    if rng.random() >= rho:
        return Mask.null(num_groups, index_map)
    if subsets is not None:
        if not subsets:
            raise InvalidInputError("subsets must be non-empty when provided")
        pick = subsets[int(rng.integers(len(subsets)))]
        return Mask.from_parts(pick, num_groups, index_map)
    k = int(rng.integers(1, max_parts + 1))
    chosen = rng.choice(num_groups, size=k, replace=False)
    return Mask.from_parts(chosen.tolist(), num_groups, index_map)


def apply_mask(state: np.ndarray, mask: Mask) -> np.ndarray:
    """Blank masked entries: s * (1 - dense)."""
    state = np.asarray(state, dtype=np.float64)
    if state.shape[-1] != mask.dense.shape[0]:
        raise InvalidInputError(
            f"state dim {state.shape[-1]} does not match mask dim {mask.dense.shape[0]}"
        )
    return state * (1.0 - mask.dense)


def apply_mask_dense(states: np.ndarray, dense: np.ndarray) -> np.ndarray:
    """Batched masking with per-row dense masks (B, S)."""
    states = np.asarray(states, dtype=np.float64)
    if states.shape != dense.shape:
        raise InvalidInputError(f"shape mismatch: {states.shape} vs {dense.shape}")
    return states * (1.0 - dense)


def policy_observation(state: np.ndarray, mask: Mask) -> np.ndarray:
    """Masked state concatenated with the group flag vector."""
    masked = apply_mask(state, mask)
    flags = mask.flags.astype(np.float64)
    if state.ndim == 2:
        flags = np.broadcast_to(flags, (state.shape[0], flags.shape[0]))
    return np.concatenate([masked, flags], axis=-1)
