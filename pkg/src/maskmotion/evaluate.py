"""Deterministic evaluation of trained checkpoints.

Loads any stage's checkpoint into a uniform handle, rolls it out with mean
actions under a fixed mask, and reports visitation entropy, goal-task
success, or tracking accuracy.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .character import CharacterSpec, MotionClip
from .checkpoint import load_manifest, load_params_into
from .envs import EnvConfig, MotionEnv, make_env
from .errors import CheckpointError, ConfigError, InvalidInputError
from .goals import make_task
from .kinematics import StateLayout, clip_states
from .masking import BodyPartition, Mask, build_index_map
from .metrics import (
    auto_epsilon,
    frame_visitation,
    normalized_entropy,
    rotation_features,
    tracking_error,
)
from .nets import GaussianPolicy
from .ppo import TrainConfig
from .rotations import encode_rotation_6d
from .train_composition import CompositePolicy, compose_rollout_action
from .train_tracking import ScriptedGenerator, extract_goal, tracking_reward

INIT_MODES = ("random", "same")


@dataclass(frozen=True)
class EvalSettings:
    """Shared rollout knobs: `init` picks reference-state starts ("random")
    or one fixed clip frame for every episode ("same")."""

    episodes: int = 8
    steps: int = 90
    init: str = "random"
    seed: int = 0
    epsilon: float | None = None
    backend: str = "surrogate"

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.init not in INIT_MODES:
            raise ConfigError(f"init must be one of {INIT_MODES}, got {self.init!r}")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")


@dataclass
class PolicyHandle:
    """A frozen, stage-agnostic view of one checkpoint."""

    stage: str
    spec: CharacterSpec
    partition: BodyPartition
    policy: GaussianPolicy | CompositePolicy
    base_policy: GaussianPolicy | None
    env_config: EnvConfig
    manifest: dict

    @property
    def layout(self) -> StateLayout:
        return StateLayout(self.spec.num_joints)

    @property
    def index_map(self) -> np.ndarray:
        return build_index_map(self.spec, self.partition)

    @property
    def task_dim(self) -> int:
        return int(self.manifest["dims"].get("task_obs", 0))


def load_stage_policy(ckpt_dir: str | Path) -> PolicyHandle:
    """Rebuild the policy (and frozen base, for residual stages) from a
    checkpoint directory, ready for deterministic rollouts."""
    manifest = load_manifest(ckpt_dir)
    stage = manifest.get("stage")
    spec = CharacterSpec.from_dict(manifest["character"])
    partition = BodyPartition.from_dict(manifest["partition"])
    cfg = TrainConfig.from_dict(manifest["train_config"])
    dims = manifest["dims"]
    if manifest.get("env_config") is not None:
        env_config = EnvConfig(**manifest["env_config"])
    else:
        env_config = EnvConfig(max_steps=cfg.max_steps)

    if stage == "base":
        policy = GaussianPolicy(
            dims["obs"], dims["action"], cfg.hidden_dims, cfg.activation,
            cfg.log_std_init,
        )
        modules = {"policy": policy}
        base_policy = None
    elif stage in ("compose", "track"):
        policy = CompositePolicy(
            dims["obs"], dims["action"], cfg.hidden_dims, cfg.activation,
            cfg.log_std_init,
        )
        bp = manifest["base_policy"]
        base_policy = GaussianPolicy(
            bp["obs"], dims["action"], tuple(bp["hidden_dims"]),
            bp["activation"], bp["log_std_init"],
        )
        modules = {"policy": policy, "base_policy": base_policy}
    else:
        raise CheckpointError(f"{ckpt_dir}: unknown stage {stage!r}")

    load_params_into(ckpt_dir, modules)
    for module in modules.values():
        module.eval()
        module.requires_grad_(False)
    return PolicyHandle(stage, spec, partition, policy, base_policy, env_config, manifest)


# ------------------------------------------------------------------- rollouts
def _part_indices(partition: BodyPartition, parts) -> tuple[int, ...]:
    out = []
    for p in parts:
        if isinstance(p, str):
            out.append(partition.group_index(p))
        else:
            i = int(p)
            if not 0 <= i < partition.num_groups:
                raise InvalidInputError(f"part index {i} out of range")
            out.append(i)
    return tuple(out)


def mask_label(partition: BodyPartition, parts) -> str:
    if not parts:
        return "null"
    idx = _part_indices(partition, parts)
    return "+".join(partition.names[i] for i in idx)


def _make_eval_env(
    handle: PolicyHandle, clips: list[MotionClip], settings: EvalSettings
) -> MotionEnv:
    # +1 so the env's own timeout never truncates an eval horizon
    config = dataclasses.replace(handle.env_config, max_steps=settings.steps + 1)
    return make_env(settings.backend, handle.spec, config, clips, settings.episodes)


def _reset(
    env: MotionEnv, settings: EvalSettings, rng: np.random.Generator
) -> tuple[np.ndarray, dict]:
    if settings.init == "same":
        frame = max(1, len(env.clips[0]) // 2)
        return env.reset_to(0, frame)
    return env.reset(rng)


def _base_action(
    policy: GaussianPolicy,
    states: np.ndarray,
    flags: np.ndarray,
    dense: np.ndarray,
    task_obs: np.ndarray | None = None,
) -> np.ndarray:
    masked = states * (1.0 - dense)
    parts = [masked, flags]
    if task_obs is not None:
        parts.append(task_obs)
    obs = np.concatenate(parts, axis=-1)
    with torch.no_grad():
        a = policy.act_deterministic(torch.as_tensor(obs, dtype=torch.float32))
    return a.numpy().astype(np.float64)


def rollout_states(
    handle: PolicyHandle,
    clips: list[MotionClip],
    parts,
    settings: EvalSettings,
    zero_residual: bool = False,
) -> list[np.ndarray]:
    """Mean-action rollouts under one fixed mask.  Returns one (T_i, S) state
    sequence per episode, cut at the first termination.  zero_residual drops
    a compose checkpoint down to its frozen base (the no-adaptation baseline)."""
    if handle.stage not in ("base", "compose"):
        raise ConfigError("state rollouts support base/compose stages; use tracking_eval for track")
    if handle.stage == "base" and handle.task_dim > 0:
        raise ConfigError("checkpoint was trained with a goal task; use task_eval")

    env = _make_eval_env(handle, clips, settings)
    rng = np.random.default_rng(settings.seed)
    states, _ = _reset(env, settings, rng)

    idx = _part_indices(handle.partition, parts)
    mask = Mask.from_parts(idx, handle.partition.num_groups, handle.index_map)
    B = settings.episodes
    flags = np.tile(mask.flags.astype(np.float64), (B, 1))
    dense = np.tile(mask.dense, (B, 1))

    seqs: list[list[np.ndarray]] = [[states[i].copy()] for i in range(B)]
    alive = np.ones(B, dtype=bool)
    for _ in range(settings.steps):
        if handle.stage == "base":
            actions = _base_action(handle.policy, states, flags, dense)
        elif zero_residual:
            actions = _base_action(handle.base_policy, states, flags, dense)
        else:
            actions = compose_rollout_action(
                handle.base_policy, handle.policy, states, flags, dense
            )
        states, done, _ = env.step(actions)
        for i in range(B):
            if alive[i]:
                seqs[i].append(states[i].copy())
        alive &= ~done
        if not alive.any():
            break
    return [np.asarray(s) for s in seqs]


def record_rollout(
    handle: PolicyHandle,
    clips: list[MotionClip],
    parts=(),
    settings: EvalSettings | None = None,
    command: str | None = None,
) -> MotionClip:
    """One deterministic episode packed as a clip at the env control rate.

    The clip embeds the checkpoint's skeleton, so it round-trips as reference
    motion for later runs.  Track checkpoints follow a scripted command
    (default: the first one they were trained on); cut at termination."""
    settings = dataclasses.replace(settings or EvalSettings(), episodes=1)
    if handle.stage == "base" and handle.task_dim > 0:
        raise ConfigError("checkpoint was trained with a goal task; use task_eval")

    if handle.stage == "track":
        generator = ScriptedGenerator(handle.spec)
        command = command or str(handle.manifest["commands"][0])
        parts = generator.tracked_parts(command)
        trained = tuple(handle.manifest["tracked_parts"])
        if parts != trained:
            raise ConfigError(
                f"command {command!r} tracks {list(parts)} but the checkpoint"
                f" was trained on {list(trained)}"
            )

    env = _make_eval_env(handle, clips, settings)
    rng = np.random.default_rng(settings.seed)
    states, _ = _reset(env, settings, rng)

    idx = _part_indices(handle.partition, parts)
    mask = Mask.from_parts(idx, handle.partition.num_groups, handle.index_map)
    flags = mask.flags.astype(np.float64)[None]
    dense = mask.dense[None]

    if handle.stage == "track":
        fps = float(handle.env_config.control_hz)
        tracked_joints = tuple(j for g in idx for j in handle.partition.groups[g])
        goals_full = generator.generate(command, 0.0, settings.steps + 2, fps=fps)
        goal_seq = extract_goal(goals_full, tracked_joints)
        gate = torch.ones(1, dtype=torch.float32)

    poses = [(env.root_pos[0].copy(), encode_rotation_6d(env.local_rot[0]))]
    for t in range(settings.steps):
        if handle.stage == "base":
            actions = _base_action(handle.policy, states, flags, dense)
        elif handle.stage == "compose":
            actions = compose_rollout_action(
                handle.base_policy, handle.policy, states, flags, dense
            )
        else:
            masked = states * (1.0 - dense)
            base_obs = np.concatenate([masked, flags], axis=-1)
            with torch.no_grad():
                a_base = handle.base_policy.act_deterministic(
                    torch.as_tensor(base_obs, dtype=torch.float32)
                )
                goal_obs = np.concatenate([goal_seq[t], goal_seq[t + 1]])[None]
                obs = np.concatenate([states, flags, a_base.numpy(), goal_obs], axis=-1)
                actions = handle.policy.act_deterministic(
                    torch.as_tensor(obs, dtype=torch.float32), a_base, gate
                ).numpy().astype(np.float64)
        states, done, _ = env.step(actions)
        poses.append((env.root_pos[0].copy(), encode_rotation_6d(env.local_rot[0])))
        if done[0]:
            break
    return MotionClip(
        spec=handle.spec,
        fps=float(handle.env_config.control_hz),
        root_pos=np.asarray([p for p, _ in poses]),
        rotations=np.asarray([r for _, r in poses]),
        name=f"{handle.stage}_rollout",
    )


# -------------------------------------------------------------------- entropy
def entropy_eval(
    handle: PolicyHandle,
    clips: list[MotionClip],
    masks,
    settings: EvalSettings,
) -> dict:
    """Normalized visitation entropy over the reference frames, one entry per
    mask configuration.  Shared epsilon comes from the reference motion."""
    layout = handle.layout
    joints = tuple(range(handle.spec.num_joints))
    ref = np.concatenate([clip_states(c) for c in clips], axis=0)
    ref_feats = rotation_features(ref, layout, joints)
    eps = settings.epsilon if settings.epsilon is not None else auto_epsilon(ref_feats)

    report = {
        "epsilon": float(eps),
        "init": settings.init,
        "episodes": settings.episodes,
        "steps": settings.steps,
        "masks": {},
    }
    for parts in masks:
        seqs = rollout_states(handle, clips, parts, settings)
        gen = np.concatenate(seqs, axis=0)
        gen_feats = rotation_features(gen, layout, joints)
        hist = frame_visitation(gen_feats, ref_feats, eps)
        report["masks"][mask_label(handle.partition, parts)] = {
            "h_norm": normalized_entropy(hist),
            "visited": int((hist.counts > 0).sum()),
            "frames": int(gen.shape[0]),
        }
    return report


# ---------------------------------------------------------------- goal tasks
def task_eval(
    handle: PolicyHandle,
    clips: list[MotionClip],
    task_name: str,
    settings: EvalSettings,
    params: dict | None = None,
) -> dict:
    """Success rate of a goal task under the null mask, judged from the
    task's own trace over a fixed horizon."""
    if handle.stage != "base":
        raise ConfigError("goal tasks evaluate base-stage checkpoints")
    if handle.task_dim == 0:
        raise ConfigError("checkpoint was trained without a goal task")

    env = _make_eval_env(handle, clips, settings)
    rng = np.random.default_rng(settings.seed)
    states, info = _reset(env, settings, rng)
    B = settings.episodes
    task = make_task(task_name, handle.spec, B, **(params or {}))
    task.reset(rng, np.arange(B), info)
    task_obs = task.observe(info)
    if task_obs.shape[-1] != handle.task_dim:
        raise ConfigError(
            f"task obs dim {task_obs.shape[-1]} does not match checkpoint"
            f" ({handle.task_dim})"
        )

    null = Mask.null(handle.partition.num_groups, handle.index_map)
    flags = np.tile(null.flags.astype(np.float64), (B, 1))
    dense = np.tile(null.dense, (B, 1))

    traces: dict[str, list[np.ndarray]] = {}
    rewards = np.zeros((settings.steps, B))
    for t in range(settings.steps):
        actions = _base_action(handle.policy, states, flags, dense, task_obs)
        prev_info = info
        states, _, info = env.step(actions)
        rewards[t] = task.reward(prev_info, info)
        for k, v in task.trace_values(info).items():
            traces.setdefault(k, []).append(np.asarray(v))
        task_obs = task.observe(info)

    trace = {k: np.stack(v) for k, v in traces.items()}
    fps = float(handle.env_config.control_hz)
    success = np.asarray(task.success_from_trace(trace, fps), dtype=bool)
    return {
        "task": task_name,
        "success_rate": float(success.mean()),
        "success": success.tolist(),
        "reward_mean": float(rewards.mean()),
    }


# ------------------------------------------------------------------ tracking
def tracking_eval(
    handle: PolicyHandle,
    clips: list[MotionClip],
    command: str,
    settings: EvalSettings,
    zero_residual: bool = False,
) -> dict:
    """Tracking reward and pose error against a scripted command.  With
    zero_residual the frozen base acts alone (the no-adaptation baseline)."""
    if handle.stage != "track":
        raise ConfigError("tracking evaluation needs a tracking-stage checkpoint")

    generator = ScriptedGenerator(handle.spec)
    parts = generator.tracked_parts(command)
    trained = tuple(handle.manifest["tracked_parts"])
    if parts != trained:
        raise ConfigError(
            f"command {command!r} tracks {list(parts)} but the checkpoint"
            f" was trained on {list(trained)}"
        )

    partition = handle.partition
    idx = _part_indices(partition, parts)
    mask = Mask.from_parts(idx, partition.num_groups, handle.index_map)
    tracked_joints = tuple(j for g in idx for j in partition.groups[g])
    layout = handle.layout
    rot_idx = np.concatenate(
        [np.arange(layout.rotation_slice(j).start, layout.rotation_slice(j).stop)
         for j in tracked_joints]
    )

    env = _make_eval_env(handle, clips, settings)
    rng = np.random.default_rng(settings.seed)
    states, _ = _reset(env, settings, rng)

    fps = float(handle.env_config.control_hz)
    T = settings.steps
    goals_full = generator.generate(command, 0.0, T + 2, fps=fps)
    goal_seq = extract_goal(goals_full, tracked_joints)

    B = settings.episodes
    flags = np.tile(mask.flags.astype(np.float64), (B, 1))
    dense = np.tile(mask.dense, (B, 1))
    gate = torch.ones(B, dtype=torch.float32)

    rots = np.zeros((T, B, handle.spec.num_joints, 6))
    rewards = np.zeros((T, B))
    for t in range(T):
        masked = states * (1.0 - dense)
        base_obs = np.concatenate([masked, flags], axis=-1)
        with torch.no_grad():
            a_base = handle.base_policy.act_deterministic(
                torch.as_tensor(base_obs, dtype=torch.float32)
            )
            if zero_residual:
                actions = a_base.numpy().astype(np.float64)
            else:
                goal_obs = np.tile(
                    np.concatenate([goal_seq[t], goal_seq[t + 1]]), (B, 1)
                )
                obs = np.concatenate(
                    [states, flags, a_base.numpy(), goal_obs], axis=-1
                )
                actions = handle.policy.act_deterministic(
                    torch.as_tensor(obs, dtype=torch.float32), a_base, gate
                ).numpy().astype(np.float64)
        states, _, _ = env.step(actions)
        rewards[t] = tracking_reward(states, goal_seq[t + 1], rot_idx)
        rots[t] = encode_rotation_6d(env.local_rot)

    goal_rot = goals_full[1 : T + 1][:, list(tracked_joints)]
    errors = [
        tracking_error(handle.spec, rots[:, i], goal_rot, tracked_joints)
        for i in range(B)
    ]
    return {
        "command": command,
        "zero_residual": bool(zero_residual),
        "track_reward_mean": float(rewards.mean()),
        "tracking_error_m": float(np.mean(errors)),
    }
