"""Evaluation metrics for motion quality and goal adherence.

Coverage of a reference motion is measured by frame visitation: each generated
frame votes for every reference frame within an L2 feature threshold, and the
normalized Shannon entropy of the resulting histogram says how evenly the
reference was covered (1 = uniform, 0 = a single frame). The visitation
feature is the concatenated 6D local joint rotations of the relevant parts;
root translation is excluded. Pose error against a reference uses dynamic time
warping so that speed differences are not penalized; tracking error compares
simulated joint positions with targets placed by forward kinematics over the
simulated root and untracked pose.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .character import CharacterSpec
from .errors import InvalidInputError
from .kinematics import StateLayout, forward_kinematics
from .masking import BodyPartition
from .rotations import decode_rotation_6d

FEATURE_TAG = "local_rotations_6d"


def rotation_features(
    states: np.ndarray, layout: StateLayout, joints: tuple[int, ...]
) -> np.ndarray:
    """Slice (T, S) states down to the 6D rotation entries of `joints`: (T, 6k)."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[1] != layout.dim:
        raise InvalidInputError(
            f"states must be (T, {layout.dim}), got {states.shape}"
        )
    if not joints:
        raise InvalidInputError("rotation_features needs at least one joint")
    cols = np.concatenate(
        [np.arange(layout.rotation_slice(j).start, layout.rotation_slice(j).stop)
         for j in joints]
    )
    return states[:, cols]


def auto_epsilon(ref_features: np.ndarray, scale: float = 1.5) -> float:
    """Default visitation threshold: `scale` x median inter-frame distance."""
    ref_features = np.asarray(ref_features, dtype=np.float64)
    if ref_features.ndim != 2 or ref_features.shape[0] < 2:
        raise InvalidInputError("auto_epsilon needs at least 2 reference frames")
    steps = np.linalg.norm(np.diff(ref_features, axis=0), axis=1)
    eps = scale * float(np.median(steps))
    if eps <= 0.0:
        raise InvalidInputError(
            "reference has no inter-frame motion; pass epsilon explicitly"
        )
    return eps


@dataclass
class VisitationHistogram:
    """Hits per reference frame plus the threshold that produced them."""

    counts: np.ndarray
    epsilon: float
    feature_tag: str = FEATURE_TAG

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1:
            raise InvalidInputError("counts must be 1-D")
        if np.any(self.counts < 0):
            raise InvalidInputError("counts must be non-negative")
        if self.epsilon <= 0.0:
            raise InvalidInputError("epsilon must be positive")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "VisitationHistogram") -> "VisitationHistogram":
        if other.counts.shape != self.counts.shape:
            raise InvalidInputError("cannot merge histograms of different sizes")
        if abs(other.epsilon - self.epsilon) > 1e-12:
            raise InvalidInputError("cannot merge histograms with different epsilon")
        return VisitationHistogram(
            self.counts + other.counts, self.epsilon, self.feature_tag
        )


def frame_visitation(
    gen: np.ndarray, ref: np.ndarray, epsilon: float
) -> VisitationHistogram:
    """Count, per reference frame, the generated frames within `epsilon` (L2)."""
    gen = np.asarray(gen, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if gen.ndim != 2 or ref.ndim != 2 or gen.shape[0] == 0 or ref.shape[0] == 0:
        raise InvalidInputError("gen and ref must be non-empty (T, d) arrays")
    if gen.shape[1] != ref.shape[1]:
        raise InvalidInputError(
            f"feature dims differ: gen {gen.shape[1]} vs ref {ref.shape[1]}"
        )
    if epsilon <= 0.0:
        raise InvalidInputError("epsilon must be positive")
    counts = np.zeros(ref.shape[0], dtype=np.int64)
    # chunk the generated side to keep the (chunk, n) distance block small
    for start in range(0, gen.shape[0], 512):
        block = gen[start : start + 512]
        d = np.linalg.norm(block[:, None, :] - ref[None, :, :], axis=-1)
        counts += (d < epsilon).sum(axis=0)
    return VisitationHistogram(counts, epsilon)


def nearest_reference_distance(gen: np.ndarray, ref: np.ndarray) -> float:
    """Mean over generated frames of the L2 distance to the closest reference frame."""
    gen = np.asarray(gen, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if gen.ndim != 2 or ref.ndim != 2 or gen.shape[0] == 0 or ref.shape[0] == 0:
        raise InvalidInputError("gen and ref must be non-empty (T, d) arrays")
    if gen.shape[1] != ref.shape[1]:
        raise InvalidInputError(
            f"feature dims differ: gen {gen.shape[1]} vs ref {ref.shape[1]}"
        )
    mins = np.empty(gen.shape[0], dtype=np.float64)
    for start in range(0, gen.shape[0], 512):
        block = gen[start : start + 512]
        d = np.linalg.norm(block[:, None, :] - ref[None, :, :], axis=-1)
        mins[start : start + block.shape[0]] = d.min(axis=1)
    return float(mins.mean())


def normalized_entropy(hist: VisitationHistogram | np.ndarray) -> float:
    """H_norm = -sum p log p / log n over the visitation distribution."""
    counts = hist.counts if isinstance(hist, VisitationHistogram) else np.asarray(hist)
    counts = counts.astype(np.float64)
    n = counts.shape[0]
    if counts.ndim != 1 or n < 2:
        raise InvalidInputError("entropy needs at least 2 bins")
    if np.any(counts < 0):
        raise InvalidInputError("counts must be non-negative")
    total = counts.sum()
    if total <= 0:
        raise InvalidInputError("entropy of an empty histogram is undefined")
    p = counts / total
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum() / np.log(n))


@dataclass
class PartEntropyReport:
    """Coverage split by body region after adapting `parts`."""

    complement_entropy: float  # untouched joints vs the carrier reference
    adapted_entropy: float  # adapted joints vs the style reference
    epsilon_complement: float
    epsilon_adapted: float
    adapted_joints: tuple[int, ...] = field(default=())
    complement_joints: tuple[int, ...] = field(default=())


def part_joints(
    partition: BodyPartition, parts: tuple[int | str, ...]
) -> tuple[int, ...]:
    """Joint indices covered by the given partition groups, in index order."""
    idx = tuple(
        partition.group_index(g) if isinstance(g, str) else int(g) for g in parts
    )
    for g in idx:
        if not 0 <= g < partition.num_groups:
            raise InvalidInputError(f"part index {g} out of range")
    joints = sorted({j for g in set(idx) for j in partition.groups[g]})
    return tuple(joints)


def per_part_entropy(
    gen_states: np.ndarray,
    ref_a_states: np.ndarray,
    ref_b_states: np.ndarray,
    spec: CharacterSpec,
    partition: BodyPartition,
    adapted_parts: tuple[int | str, ...],
    epsilon: float | None = None,
) -> PartEntropyReport:
    """Coverage entropies for adapted vs untouched regions of a composed motion.

    Adapted-part rotation features are scored against ref_b, the complement
    against ref_a. With epsilon=None each side auto-computes its threshold
    from its own reference.
    """
    if not adapted_parts:
        raise InvalidInputError("per_part_entropy needs at least one adapted part")
    layout = StateLayout(spec.num_joints)
    adapted = part_joints(partition, adapted_parts)
    complement = tuple(j for j in range(spec.num_joints) if j not in adapted)
    if not complement:
        raise InvalidInputError("adapted parts cover the whole body")

    def side(joints: tuple[int, ...], ref: np.ndarray) -> tuple[float, float]:
        ref_f = rotation_features(ref, layout, joints)
        gen_f = rotation_features(gen_states, layout, joints)
        eps = auto_epsilon(ref_f) if epsilon is None else float(epsilon)
        return normalized_entropy(frame_visitation(gen_f, ref_f, eps)), eps

    h_b, eps_b = side(adapted, ref_b_states)
    h_a, eps_a = side(complement, ref_a_states)
    return PartEntropyReport(
        complement_entropy=h_a,
        adapted_entropy=h_b,
        epsilon_complement=eps_a,
        epsilon_adapted=eps_b,
        adapted_joints=adapted,
        complement_joints=complement,
    )


def dtw_alignment(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Optimal monotone alignment path through a (T, n) cost matrix.

    Standard dynamic program, no band constraint. Returns the backtracked
    path as a (K, 2) index array and the total cost along it. Ties prefer
    the diagonal step.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] == 0 or cost.shape[1] == 0:
        raise InvalidInputError("cost must be a non-empty 2-D matrix")
    T, n = cost.shape
    D = np.full((T + 1, n + 1), np.inf)
    D[0, 0] = 0.0
    for t in range(1, T + 1):
        for i in range(1, n + 1):
            D[t, i] = cost[t - 1, i - 1] + min(
                D[t - 1, i - 1], D[t - 1, i], D[t, i - 1]
            )
    # backtrack; the inf border keeps the walk inside the matrix
    t, i = T, n
    path = [(t - 1, i - 1)]
    while (t, i) != (1, 1):
        diag, up, left = D[t - 1, i - 1], D[t - 1, i], D[t, i - 1]
        best = min(diag, up, left)
        if diag == best:
            t, i = t - 1, i - 1
        elif up == best:
            t -= 1
        else:
            i -= 1
        path.append((t - 1, i - 1))
    path.reverse()
    return np.asarray(path, dtype=np.int64), float(D[T, n])


def dtw_pose_error(gen_pos: np.ndarray, ref_pos: np.ndarray) -> float:
    """Mean joint-position distance (meters) along the optimal time warp.

    gen_pos and ref_pos are (T, J, 3) joint position sequences; the per-frame
    cost is the mean over joints of the L2 distance.
    """
    gen_pos = np.asarray(gen_pos, dtype=np.float64)
    ref_pos = np.asarray(ref_pos, dtype=np.float64)
    if gen_pos.ndim != 3 or ref_pos.ndim != 3 or gen_pos.shape[1:] != ref_pos.shape[1:]:
        raise InvalidInputError("pose sequences must be (T, J, 3) with matching J")
    diff = gen_pos[:, None, :, :] - ref_pos[None, :, :, :]
    cost = np.linalg.norm(diff, axis=-1).mean(axis=-1)
    path, total = dtw_alignment(cost)
    return total / path.shape[0]


def tracking_error(
    spec: CharacterSpec,
    rotations: np.ndarray,
    goal_rotations: np.ndarray,
    joints: tuple[int, ...],
    root_pos: np.ndarray | None = None,
) -> float:
    """Mean position error (meters) of tracked joints against their targets.

    Targets are placed by forward kinematics with the goal 6D rotations
    substituted at the tracked joints while the root and every other joint
    keep the simulated pose; root translation cancels in the difference, so
    it defaults to zero.
    """
    rotations = np.asarray(rotations, dtype=np.float64)
    goal_rotations = np.asarray(goal_rotations, dtype=np.float64)
    if rotations.ndim != 3 or rotations.shape[1:] != (spec.num_joints, 6):
        raise InvalidInputError(
            f"rotations must be (T, {spec.num_joints}, 6), got {rotations.shape}"
        )
    if not joints:
        raise InvalidInputError("tracking_error needs at least one tracked joint")
    if goal_rotations.shape != (rotations.shape[0], len(joints), 6):
        raise InvalidInputError(
            "goal_rotations must be (T, k, 6) aligned with rotations"
        )
    T = rotations.shape[0]
    if root_pos is None:
        root_pos = np.zeros((T, 3))
    target_rot = rotations.copy()
    target_rot[:, list(joints)] = goal_rotations
    pos_sim, _ = forward_kinematics(spec, root_pos, decode_rotation_6d(rotations))
    pos_tgt, _ = forward_kinematics(spec, root_pos, decode_rotation_6d(target_rot))
    err = np.linalg.norm(pos_sim[:, list(joints)] - pos_tgt[:, list(joints)], axis=-1)
    return float(err.mean())
