"""Stage-two residual training for command-driven partial tracking.

A command (a short text token such as "raise_arms") selects a kinematic
target trajectory for a fixed subset of body parts. The frozen stage-one
policy keeps animating the rest of the body from the blanked observation
(the tracked parts are always masked for it), while a residual policy,
conditioned on the full state, the base action, the mask flags, and the
current and next target frames, drives the tracked joints.

Rewards come in two streams:
  - imitation: adversarial window reward, computed on states sliced to the
    untracked entries ("complement" mode) so the discriminator cannot punish
    the commanded deviation, or on full states ("full" mode);
  - tracking: exp(-||q_target - q||^2) over the tracked joints' 6D rotations.

Each stream gets its own output-normalized critic head; advantages are
estimated per stream and averaged with the same weights as the reward mix.
Episodes that hold a mean tracking reward below a threshold over a trailing
window are cut short.

Target trajectories are drawn from a small buffer that is refreshed every few
iterations by the generator (scripted curve tables here; the interface takes
a command string, a phase offset, and a frame count, so a learned generator
can slot in unchanged).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from .character import CharacterSpec, MotionClip
from .checkpoint import load_manifest, load_params_into, load_train_state, params_digest
from .envs import EnvConfig
from .errors import CheckpointError, ConfigError, InvalidInputError
from .kinematics import state_dim
from .masking import BodyPartition, Mask, build_index_map
from .nets import Discriminator, GaussianPolicy, PopArtCritic
from .ppo import (
    RolloutBuffer,
    TrainConfig,
    compute_gae,
    normalize_advantages,
    clipped_surrogate_loss,
    reference_windows,
    style_reward,
)
from .rotations import axis_angle_to_matrix, encode_rotation_6d
from .train_base import BaseTrainer, discriminator_update
from .train_composition import CompositePolicy, load_frozen_policy

AXIS_X = np.array([1.0, 0.0, 0.0])
AXIS_Y = np.array([0.0, 1.0, 0.0])
AXIS_Z = np.array([0.0, 0.0, 1.0])


def _ramp(t: np.ndarray, duration: float = 1.0) -> np.ndarray:
    return np.minimum(t / duration, 1.0)


@dataclass(frozen=True)
class Command:
    """One scripted command: tracked parts plus per-joint angle curves.

    Each curve maps (t, tp) -> angle, where t is seconds since the segment
    start and tp is the phase-shifted time for periodic terms.
    """

    parts: tuple[str, ...]
    curves: dict[str, tuple[np.ndarray, Callable]]
    periodic: bool = False


SCRIPTED_COMMANDS: dict[str, Command] = {
    "rest": Command(parts=("LeftArm", "RightArm"), curves={}),
    "raise_arms": Command(
        parts=("LeftArm", "RightArm"),
        curves={
            "l_shoulder": (AXIS_Y, lambda t, tp: -0.5 * np.pi * _ramp(t)),
            "r_shoulder": (AXIS_Y, lambda t, tp: -0.5 * np.pi * _ramp(t)),
        },
    ),
    "wave_right": Command(
        parts=("RightArm",),
        curves={
            "r_shoulder": (AXIS_Y, lambda t, tp: -0.5 * np.pi * _ramp(t)),
            "r_hand": (AXIS_X, lambda t, tp: 0.5 * np.sin(2.0 * np.pi * 1.5 * tp)),
        },
        periodic=True,
    ),
    "swing_both": Command(
        parts=("LeftArm", "RightArm"),
        curves={
            "l_shoulder": (AXIS_Y, lambda t, tp: 0.8 * np.sin(2.0 * np.pi * tp)),
            "r_shoulder": (AXIS_Y, lambda t, tp: 0.8 * np.sin(2.0 * np.pi * tp + np.pi)),
        },
        periodic=True,
    ),
}


class ScriptedGenerator:
    """Curve-table goal generator over a fixed command vocabulary."""

    def __init__(self, spec: CharacterSpec, commands: dict[str, Command] | None = None):
        self.spec = spec
        self.commands = dict(commands or SCRIPTED_COMMANDS)
        for name, cmd in self.commands.items():
            for joint in cmd.curves:
                spec.joint_index(joint)  # raises on unknown joints

    def command_names(self) -> tuple[str, ...]:
        return tuple(sorted(self.commands))

    def tracked_parts(self, command: str) -> tuple[str, ...]:
        return self._get(command).parts

    def _get(self, command: str) -> Command:
        try:
            return self.commands[command]
        except KeyError:
            raise ConfigError(
                f"unknown command {command!r}; choose from {sorted(self.commands)}"
            ) from None

    def generate(
        self, command: str, phase: float, frames: int, fps: float = 30.0
    ) -> np.ndarray:
        """Full-skeleton target rotations (frames, J, 6); identity outside the
        command's curves."""
        cmd = self._get(command)
        J = self.spec.num_joints
        ident = encode_rotation_6d(np.eye(3))
        out = np.tile(ident, (frames, J, 1))
        t = np.arange(frames, dtype=np.float64) / fps
        tp = t + (phase if cmd.periodic else 0.0)
        for joint, (axis, fn) in cmd.curves.items():
            j = self.spec.joint_index(joint)
            angles = np.asarray(fn(t, tp), dtype=np.float64)
            mats = axis_angle_to_matrix(angles[:, None] * axis)
            out[:, j] = encode_rotation_6d(mats)
        return out


def extract_goal(rotations: np.ndarray, joints: tuple[int, ...]) -> np.ndarray:
    """Slice (T, J, 6) target rotations down to (T, 6 * len(joints))."""
    return rotations[:, list(joints)].reshape(rotations.shape[0], -1)


def tracking_reward(
    states: np.ndarray, goals: np.ndarray, rot_idx: np.ndarray
) -> np.ndarray:
    """exp(-||q_target - q||^2) over the tracked joints' 6D entries."""
    q = states[..., rot_idx]
    err = np.sum((goals - q) ** 2, axis=-1)
    return np.exp(-err)


class GoalBuffer:
    """A pool of pre-generated goal trajectories, refreshed periodically."""

    def __init__(
        self,
        generator: ScriptedGenerator,
        commands: tuple[str, ...],
        joints: tuple[int, ...],
        length: int,
        size: int = 16,
        fps: float = 30.0,
        max_phase: float = 4.0,
    ) -> None:
        if not commands:
            raise ConfigError("goal buffer needs at least one command")
        if size < 1 or length < 2:
            raise ConfigError("goal buffer size/length out of range")
        self.generator = generator
        self.commands = tuple(commands)
        self.joints = tuple(joints)
        self.length = length
        self.size = size
        self.fps = fps
        self.max_phase = max_phase
        self.cmd_ids = np.zeros(size, dtype=np.int64)
        self.goals = np.zeros((size, length, 6 * len(joints)))
        self.filled = False

    def refresh(self, rng: np.random.Generator) -> None:
        for i in range(self.size):
            ci = int(rng.integers(len(self.commands)))
            phase = float(rng.uniform(0.0, self.max_phase))
            full = self.generator.generate(self.commands[ci], phase, self.length, self.fps)
            self.cmd_ids[i] = ci
            self.goals[i] = extract_goal(full, self.joints)
        self.filled = True

    def sample(self, rng: np.random.Generator) -> tuple[int, np.ndarray]:
        if not self.filled:
            raise InvalidInputError("goal buffer sampled before refresh")
        i = int(rng.integers(self.size))
        return int(self.cmd_ids[i]), self.goals[i]

    def state(self) -> dict:
        return {
            "cmd_ids": self.cmd_ids.copy(),
            "goals": self.goals.copy(),
            "filled": self.filled,
        }

    def load_state(self, st: dict) -> None:
        self.cmd_ids[...] = st["cmd_ids"]
        self.goals[...] = st["goals"]
        self.filled = bool(st["filled"])


PHI_K_MODES = ("complement", "full")


class TrackingTrainer(BaseTrainer):
    """Residual training against scripted part-trajectory commands."""

    STAGE = "track"

    def __init__(
        self,
        base_ckpt: str | Path | tuple,
        clips: list[MotionClip],
        commands: tuple[str, ...],
        cfg: TrainConfig,
        generator: ScriptedGenerator | None = None,
        phi_k_mode: str = "complement",
        track_weight: float = 0.5,
        goal_refresh_every: int = 10,
        goal_buffer_size: int = 16,
        low_reward_window: int = 30,
        low_reward_threshold: float = 0.1,
        env_config: EnvConfig | None = None,
    ) -> None:
        if phi_k_mode not in PHI_K_MODES:
            raise ConfigError(f"phi_k_mode must be one of {PHI_K_MODES}")
        if not 0.0 <= track_weight <= 1.0:
            raise ConfigError("track_weight must be in [0, 1]")
        if isinstance(base_ckpt, tuple):
            # internal path used by load(): an already-rebuilt frozen policy
            self.base_policy, base_manifest = base_ckpt
        else:
            self.base_policy, base_manifest = load_frozen_policy(base_ckpt)
        base_cfg = TrainConfig.from_dict(base_manifest["train_config"])
        self.base_arch = {
            "obs": base_manifest["dims"]["obs"],
            "hidden_dims": list(base_cfg.hidden_dims),
            "activation": base_cfg.activation,
            "log_std_init": base_cfg.log_std_init,
        }
        spec = CharacterSpec.from_dict(base_manifest["character"])
        partition = BodyPartition.from_dict(base_manifest["partition"])
        for clip in clips:
            if not clip.spec.matches(spec):
                raise ConfigError("tracking clips must use the base policy's skeleton")
        if base_manifest["dims"]["state"] != state_dim(len(spec.joint_names)):
            raise CheckpointError("base checkpoint state dim mismatch")

        self.generator = generator or ScriptedGenerator(spec)
        if not commands:
            raise ConfigError("tracking needs at least one command")
        self.commands = tuple(commands)
        parts = self.generator.tracked_parts(self.commands[0])
        for c in self.commands[1:]:
            if self.generator.tracked_parts(c) != parts:
                raise ConfigError(
                    "all commands in one run must track the same part subset"
                )
        self.tracked_parts = parts
        self.phi_k_mode = phi_k_mode
        self.track_weight = float(track_weight)
        self.goal_refresh_every = int(goal_refresh_every)
        self.low_reward_window = int(low_reward_window)
        self.low_reward_threshold = float(low_reward_threshold)

        # pre-super: mask and slicing geometry (needed by _resample_masks)
        index_map = build_index_map(spec, partition)
        part_idx = tuple(partition.group_index(p) for p in parts)
        mask = Mask.from_parts(part_idx, partition.num_groups, index_map)
        self._tracked_mask = mask
        self.tracked_joints = tuple(
            j for g in part_idx for j in partition.groups[g]
        )

        super().__init__(spec, partition, clips, cfg, env_config=env_config)
        if base_manifest["dims"]["action"] != self.D:
            raise CheckpointError("base checkpoint action dim mismatch")

        layout = self.env.layout
        self.rot_idx = np.concatenate(
            [np.arange(layout.rotation_slice(j).start, layout.rotation_slice(j).stop)
             for j in self.tracked_joints]
        )
        if phi_k_mode == "complement":
            self.feat_idx = np.flatnonzero(mask.dense == 0.0)
        else:
            self.feat_idx = np.arange(self.S)
        # rebuild the reference pool and the discriminator on sliced features
        self.real_windows = torch.as_tensor(
            reference_windows(
                [s[:, self.feat_idx] for s in self._clip_states], cfg.disc_window
            ),
            dtype=torch.float32,
        )

        self.goal_dim = 6 * len(self.tracked_joints)
        traj_len = self.env_config.max_steps + 2
        self.goal_buffer = GoalBuffer(
            self.generator, self.commands, self.tracked_joints, traj_len,
            size=goal_buffer_size, fps=float(self.env_config.control_hz),
        )
        self.goal_buffer.refresh(self.np_rng)
        B = cfg.num_envs
        self.goal_traj = np.zeros((B, traj_len, self.goal_dim))
        self.goal_step = np.zeros(B, dtype=np.int64)
        self.cmd_ids = np.zeros(B, dtype=np.int64)
        self.recent_track = np.ones((B, self.low_reward_window))
        self._reset_goals(np.arange(B))
        self.base_digest = params_digest({"policy": self.base_policy})

    # -------------------------------------------------------------- net shapes
    def _policy_obs_dim(self) -> int:
        # full state + flags + base action + current and next goal frames
        joints = len(self.tracked_joints)
        return self.S + self.N + self.D + 2 * 6 * joints

    def _critic_obs_dim(self) -> int:
        joints = len(self.tracked_joints)
        return self.S + self.N + 2 * 6 * joints

    def _build_policy(self):
        cfg = self.cfg
        return CompositePolicy(
            self.obs_dim, self.D, cfg.hidden_dims, cfg.activation, cfg.log_std_init
        )

    def _build_critic(self):
        cfg = self.cfg
        return PopArtCritic(
            self._critic_obs_dim(), cfg.hidden_dims, num_streams=2,
            activation=cfg.activation,
        )

    def _build_disc(self) -> Discriminator:
        cfg = self.cfg
        if self.phi_k_mode == "full":
            feat = self.S
        else:
            feat = int(np.sum(self._tracked_mask.dense == 0.0))
        return Discriminator(
            feat, cfg.disc_window, cfg.disc_hidden_dims, activation=cfg.activation
        )

    # ----------------------------------------------------------------- masking
    def _resample_masks(self, indices: np.ndarray) -> None:
        # the tracked parts are always masked for the base policy
        self.mask_flags[indices] = self._tracked_mask.flags.astype(np.float64)
        self.mask_dense[indices] = self._tracked_mask.dense

    # ------------------------------------------------------------------- goals
    def _reset_goals(self, indices: np.ndarray) -> None:
        for i in indices:
            ci, goals = self.goal_buffer.sample(self.np_rng)
            self.cmd_ids[i] = ci
            self.goal_traj[i] = goals
            self.goal_step[i] = 0
            self.recent_track[i] = 1.0

    def _goal_now(self) -> np.ndarray:
        return self.goal_traj[np.arange(self.cfg.num_envs), self.goal_step]

    def _goal_obs(self) -> np.ndarray:
        B = self.cfg.num_envs
        rows = np.arange(B)
        nxt = np.minimum(self.goal_step + 1, self.goal_traj.shape[1] - 1)
        return np.concatenate(
            [self.goal_traj[rows, self.goal_step], self.goal_traj[rows, nxt]], axis=-1
        )

    # ----------------------------------------------------------------- rollout
    def _act(self, states: np.ndarray) -> tuple[np.ndarray, dict]:
        goal_obs = self._goal_obs()
        masked = states * (1.0 - self.mask_dense)
        base_obs = np.concatenate([masked, self.mask_flags], axis=-1)
        with torch.no_grad():
            a_base = self.base_policy.act_deterministic(
                torch.as_tensor(base_obs, dtype=torch.float32)
            )
        base_actions = a_base.numpy().astype(np.float64)
        obs = np.concatenate([states, self.mask_flags, base_actions, goal_obs], axis=-1)
        gate = np.ones(self.cfg.num_envs)
        with torch.no_grad():
            actions_t, logp_t = self.policy.sample(
                torch.as_tensor(obs, dtype=torch.float32),
                a_base,
                torch.as_tensor(gate, dtype=torch.float32),
                self.torch_gen,
            )
        actions = actions_t.numpy().astype(np.float64)
        return actions, {
            "obs": obs,
            "actions": actions,
            "logp": logp_t.numpy().astype(np.float64),
            "base_actions": base_actions,
            "gate": gate,
            "goal_obs": goal_obs,
        }

    def collect(self) -> tuple[RolloutBuffer, np.ndarray, np.ndarray, np.ndarray]:
        cfg = self.cfg
        B = cfg.num_envs
        buf = RolloutBuffer(cfg.horizon, B)
        buf.allocate("states", (self.S,))
        buf.allocate("flags", (self.N,))
        buf.allocate("rewards", ())
        buf.allocate("track_rewards", ())
        buf.allocate("dones", ())
        buf.allocate("windows", ((cfg.disc_window + 1) * self.S,))

        states = self._states
        stored: dict = {}
        episodes = 0
        for t in range(cfg.horizon):
            env_actions, stored = self._act(states)
            next_states, done, info = self.env.step(env_actions)
            self.tracker.push(next_states)

            self.goal_step = np.minimum(self.goal_step + 1, self.goal_traj.shape[1] - 1)
            r_track = tracking_reward(next_states, self._goal_now(), self.rot_idx)
            self.recent_track = np.roll(self.recent_track, -1, axis=1)
            self.recent_track[:, -1] = r_track

            eligible = self.goal_step >= self.low_reward_window
            low = (
                (~done)
                & eligible
                & (self.recent_track.mean(axis=1) < self.low_reward_threshold)
            )
            if np.any(low):
                self.env.force_done(np.flatnonzero(low))
                done = done | low

            buf.set("states", t, states)
            buf.set("flags", t, self.mask_flags)
            if t == 0:
                for k, v in stored.items():
                    buf.allocate(k, np.shape(v)[1:])
            for k, v in stored.items():
                buf.set(k, t, v)
            buf.set("track_rewards", t, r_track)
            buf.set("dones", t, done.astype(np.float64))
            buf.set("windows", t, self.tracker.windows())

            if np.any(done):
                idx = np.flatnonzero(done)
                episodes += len(idx)
                reset_states, reset_info = self.env.reset(self.np_rng, idx)
                next_states = next_states.copy()
                next_states[idx] = reset_states[idx]
                self._seed_tracker(idx, reset_info)
                self._reset_goals(idx)
            states = next_states

        self._states = states
        final_obs = np.concatenate(
            [states, self.mask_flags, self._goal_obs()], axis=-1
        )
        return buf, final_obs, np.float64(episodes), stored["obs"]

    # ------------------------------------------------------------------- update
    def _slice_windows(self, windows: np.ndarray) -> np.ndarray:
        W1 = self.cfg.disc_window + 1
        n = windows.shape[0]
        return windows.reshape(n, W1, self.S)[:, :, self.feat_idx].reshape(n, -1)

    def train_iteration(self) -> dict:
        cfg = self.cfg
        if self.iteration > 0 and self.goal_refresh_every > 0 \
                and self.iteration % self.goal_refresh_every == 0:
            self.goal_buffer.refresh(self.np_rng)
        buf, final_critic_obs, episodes, _ = self.collect()

        fake_all = self._slice_windows(buf.flat("windows"))
        disc_stats: dict = {}
        for _ in range(cfg.disc_updates):
            real_b, _ = self._sample_real(cfg.disc_batch)
            fidx = self.np_rng.integers(0, fake_all.shape[0], size=cfg.disc_batch)
            fake_b = torch.as_tensor(fake_all[fidx], dtype=torch.float32)
            disc_stats = discriminator_update(
                self.disc, self.disc_opt, real_b, fake_b, cfg.gp_weight
            )

        with torch.no_grad():
            scores = self.disc.score(torch.as_tensor(fake_all, dtype=torch.float32))
        r_imit = style_reward(scores.numpy()).reshape(cfg.horizon, cfg.num_envs)
        r_track = buf.get("track_rewards")
        rewards = (1.0 - self.track_weight) * r_imit + self.track_weight * r_track
        buf.data["rewards"][...] = rewards

        critic_obs = np.concatenate(
            [buf.flat("states"), buf.flat("flags"), buf.flat("goal_obs")], axis=-1
        )
        critic_obs_t = torch.as_tensor(critic_obs, dtype=torch.float32)
        with torch.no_grad():
            v_all = self.critic.values(critic_obs_t).numpy().astype(np.float64)
            boot = self.critic.values(
                torch.as_tensor(final_critic_obs, dtype=torch.float32)
            ).numpy().astype(np.float64)
        v_all = v_all.reshape(cfg.horizon, cfg.num_envs, 2)
        dones = buf.get("dones")
        adv_i, ret_i = compute_gae(
            r_imit, v_all[..., 0], dones, boot[:, 0], cfg.gamma, cfg.gae_tau
        )
        adv_t, ret_t = compute_gae(
            r_track, v_all[..., 1], dones, boot[:, 1], cfg.gamma, cfg.gae_tau
        )
        adv = (1.0 - self.track_weight) * adv_i + self.track_weight * adv_t
        if cfg.normalize_advantages:
            adv = normalize_advantages(adv)
        returns = np.stack([ret_i, ret_t], axis=-1).reshape(-1, 2)
        self.critic.update_stats(torch.as_tensor(returns, dtype=torch.float32))

        tensors = {
            "obs": torch.as_tensor(buf.flat("obs"), dtype=torch.float32),
            "actions": torch.as_tensor(buf.flat("actions"), dtype=torch.float32),
            "base_actions": torch.as_tensor(buf.flat("base_actions"), dtype=torch.float32),
            "gate": torch.as_tensor(buf.flat("gate"), dtype=torch.float32),
        }
        logp_old_t = torch.as_tensor(buf.flat("logp"), dtype=torch.float32)
        adv_flat = torch.as_tensor(adv.reshape(-1), dtype=torch.float32)
        ret_flat = torch.as_tensor(returns, dtype=torch.float32)

        policy_losses, value_losses = [], []
        for _ in range(cfg.policy_epochs):
            for idx in buf.minibatch_indices(self.np_rng, cfg.minibatch_size):
                sel = torch.as_tensor(idx, dtype=torch.long)
                logp_new = self.policy.log_prob(
                    tensors["obs"][sel],
                    tensors["base_actions"][sel],
                    tensors["gate"][sel],
                    tensors["actions"][sel],
                )
                l_ppo = clipped_surrogate_loss(
                    logp_new, logp_old_t[sel], adv_flat[sel], cfg.clip_eps
                )
                self.actor_opt.zero_grad()
                l_ppo.backward()
                self.actor_opt.step()

                v_norm = self.critic.normalized_values(critic_obs_t[sel])
                targets = self.critic.normalize_targets(ret_flat[sel])
                v_loss = cfg.critic_weight * F.mse_loss(v_norm, targets)
                self.critic_opt.zero_grad()
                v_loss.backward()
                self.critic_opt.step()

                policy_losses.append(float(l_ppo.detach()))
                value_losses.append(float(v_loss.detach()))

        self.iteration += 1
        entry = {
            "iter": self.iteration,
            "reward_mean": float(rewards.mean()),
            "imit_reward_mean": float(r_imit.mean()),
            "track_reward_mean": float(r_track.mean()),
            "policy_loss": float(np.mean(policy_losses)),
            "mi_loss": 0.0,
            "value_loss": float(np.mean(value_losses)),
            "episodes": float(episodes),
            "masked_frac": float((self.mask_flags.sum(axis=1) > 0).mean()),
            **disc_stats,
        }
        self.log.append(entry)
        return entry

    # ---------------------------------------------------------------- checkpoints
    def _modules(self) -> dict:
        mods = super()._modules()
        mods["base_policy"] = self.base_policy
        return mods

    def _manifest(self, parent: str | None) -> dict:
        m = super()._manifest(parent)
        m["commands"] = list(self.commands)
        m["tracked_parts"] = list(self.tracked_parts)
        m["phi_k_mode"] = self.phi_k_mode
        m["track_weight"] = self.track_weight
        m["goal"] = {
            "refresh_every": self.goal_refresh_every,
            "buffer_size": self.goal_buffer.size,
            "low_reward_window": self.low_reward_window,
            "low_reward_threshold": self.low_reward_threshold,
        }
        m["base_digest"] = self.base_digest
        m["base_policy"] = dict(self.base_arch)
        return m

    def _train_state(self) -> dict:
        ts = super()._train_state()
        ts["goal_traj"] = self.goal_traj.copy()
        ts["goal_step"] = self.goal_step.copy()
        ts["cmd_ids"] = self.cmd_ids.copy()
        ts["recent_track"] = self.recent_track.copy()
        ts["goal_buffer"] = self.goal_buffer.state()
        return ts

    def _restore_train_state(self, ts: dict) -> None:
        super()._restore_train_state(ts)
        self.goal_traj[...] = ts["goal_traj"]
        self.goal_step[...] = ts["goal_step"]
        self.cmd_ids[...] = ts["cmd_ids"]
        self.recent_track[...] = ts["recent_track"]
        self.goal_buffer.load_state(ts["goal_buffer"])

    def verify_base_frozen(self) -> bool:
        return params_digest({"policy": self.base_policy}) == self.base_digest

    @classmethod
    def load(
        cls,
        ckpt_dir: str | Path,
        clips: list[MotionClip],
        resume: bool = True,
    ) -> "TrackingTrainer":
        manifest = load_manifest(ckpt_dir)
        if manifest.get("stage") != cls.STAGE:
            raise CheckpointError(
                f"{ckpt_dir}: stage {manifest.get('stage')!r}, expected {cls.STAGE!r}"
            )
        cfg = TrainConfig.from_dict(manifest["train_config"])
        bp = manifest["base_policy"]
        env_config = None
        if manifest.get("env_config") is not None:
            env_config = EnvConfig(**manifest["env_config"])

        base_policy = GaussianPolicy(
            bp["obs"], manifest["dims"]["action"], tuple(bp["hidden_dims"]),
            bp["activation"], bp["log_std_init"],
        )
        base_manifest = {
            "character": manifest["character"],
            "partition": manifest["partition"],
            "train_config": manifest["train_config"],
            "dims": {
                "state": manifest["dims"]["state"],
                "obs": bp["obs"],
                "action": manifest["dims"]["action"],
            },
        }
        goal = manifest["goal"]
        trainer = cls(
            (base_policy, base_manifest),
            clips,
            tuple(manifest["commands"]),
            cfg,
            phi_k_mode=manifest["phi_k_mode"],
            track_weight=manifest["track_weight"],
            goal_refresh_every=goal["refresh_every"],
            goal_buffer_size=goal["buffer_size"],
            low_reward_window=goal["low_reward_window"],
            low_reward_threshold=goal["low_reward_threshold"],
            env_config=env_config,
        )
        trainer.base_arch = {
            "obs": bp["obs"],
            "hidden_dims": list(bp["hidden_dims"]),
            "activation": bp["activation"],
            "log_std_init": bp["log_std_init"],
        }
        load_params_into(ckpt_dir, trainer._modules())
        trainer.base_policy.requires_grad_(False)
        trainer.base_policy.eval()
        trainer.base_digest = manifest["base_digest"]
        if trainer.base_digest != params_digest({"policy": trainer.base_policy}):
            raise CheckpointError(f"{ckpt_dir}: stored base parameters do not match digest")
        if resume:
            ts = load_train_state(ckpt_dir)
            if ts is not None:
                trainer._restore_train_state(ts)
        return trainer
