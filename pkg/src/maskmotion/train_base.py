"""Stage-one training: a mask-conditioned motion policy against an adversarial
transition discriminator, with a mask-invariance regularizer.

Per iteration (in order): collect a horizon of experience under stochastic
part masking, update the discriminator on reference vs policy windows (with a
gradient penalty on reference samples), derive style rewards from the updated
discriminator, then run clipped-PPO epochs where the policy loss adds
mi_weight * KL(pi(.|s, null) || pi(.|s_masked, m)) with the full-state branch
detached. The discriminator only ever sees unmasked states.

The critic reads the full state plus the mask flags (value depends on the
active mask, the actor only sees the blanked observation). An optional goal
task mixes its reward in as (1 - task_weight) * style + task_weight * task and
appends its observation, unmasked, to the policy/critic inputs.
"""

from __future__ import annotations

import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .character import CharacterSpec, MotionClip
from .checkpoint import (
    load_manifest,
    load_params_into,
    load_train_state,
    save_checkpoint,
)
from .envs import EnvConfig, action_dim, make_env
from .errors import CheckpointError, ConfigError
from .kinematics import clip_states
from .masking import BodyPartition, build_index_map, sample_mask
from .nets import Discriminator, GaussianPolicy, MLPSpec, build_mlp, gaussian_kl, gradient_penalty
from .ppo import (
    RolloutBuffer,
    TrainConfig,
    WindowTracker,
    clipped_surrogate_loss,
    compute_gae,
    normalize_advantages,
    reference_windows,
    style_reward,
)


def mi_loss(policy: GaussianPolicy, full_obs: torch.Tensor, masked_obs: torch.Tensor) -> torch.Tensor:
    """KL(pi(.|full, null mask) || pi(.|masked, m)), full branch detached.

    Exactly zero (bitwise) on rows where masked_obs equals full_obs, i.e. for
    null masks.
    """
    with torch.no_grad():
        mean_p, std_p = policy(full_obs)
    mean_q, std_q = policy(masked_obs)
    return gaussian_kl(mean_p, std_p, mean_q, std_q).mean()


def discriminator_update(
    disc: Discriminator,
    opt: torch.optim.Optimizer,
    real: torch.Tensor,
    fake: torch.Tensor,
    gp_weight: float,
    condition_real: torch.Tensor | None = None,
    condition_fake: torch.Tensor | None = None,
) -> dict:
    """One BCE step: real -> 1, fake -> 0, gradient penalty on real samples."""
    logits_real = disc.logits(real, condition_real)
    logits_fake = disc.logits(fake, condition_fake)
    loss_real = F.binary_cross_entropy_with_logits(logits_real, torch.ones_like(logits_real))
    loss_fake = F.binary_cross_entropy_with_logits(logits_fake, torch.zeros_like(logits_fake))
    gp = gradient_penalty(disc, real, condition_real)
    loss = loss_real + loss_fake + gp_weight * gp
    opt.zero_grad()
    loss.backward()
    opt.step()
    return {
        "disc_loss": float(loss.detach()),
        "disc_gp": float(gp.detach()),
        "disc_real_acc": float((logits_real.detach() > 0).float().mean()),
        "disc_fake_acc": float((logits_fake.detach() < 0).float().mean()),
    }


class BaseTrainer:
    """Owns the nets, env, masks, and RNG for stage-one training."""

    STAGE = "base"

    def __init__(
        self,
        spec: CharacterSpec,
        partition: BodyPartition,
        clips: list[MotionClip],
        cfg: TrainConfig,
        task=None,
        task_weight: float = 0.5,
        env_config: EnvConfig | None = None,
    ) -> None:
        torch.set_num_threads(1)
        partition.validate_for(spec)
        self.spec = spec
        self.partition = partition
        self.clips = clips
        self.cfg = cfg
        self.task = task
        self.task_weight = float(task_weight)
        if task is not None and not 0.0 <= self.task_weight <= 1.0:
            raise ConfigError("task_weight must be in [0, 1]")
        self.index_map = build_index_map(spec, partition)

        self.env_config = env_config or EnvConfig(max_steps=cfg.max_steps)
        self.env = make_env(cfg.env_backend, spec, self.env_config, clips, cfg.num_envs)
        self.S = self.env.layout.dim
        self.N = partition.num_groups
        self.D = action_dim(spec)
        self.task_dim = 0 if task is None else task.obs_dim
        self.obs_dim = self._policy_obs_dim()

        torch.manual_seed(cfg.seed)
        self.policy = self._build_policy()
        self.critic = self._build_critic()
        self.disc = self._build_disc()
        self.actor_opt = torch.optim.Adam(self.policy.parameters(), lr=cfg.actor_lr)
        self.critic_opt = torch.optim.Adam(self.critic.parameters(), lr=cfg.critic_lr)
        self.disc_opt = torch.optim.Adam(self.disc.parameters(), lr=cfg.disc_lr)

        self.np_rng = np.random.default_rng(cfg.seed)
        self.torch_gen = torch.Generator().manual_seed(cfg.seed + 1)

        self._clip_states = [clip_states(c) for c in clips]
        self.real_windows = torch.as_tensor(
            reference_windows(self._clip_states, cfg.disc_window), dtype=torch.float32
        )
        self.tracker = WindowTracker(cfg.num_envs, self.S, cfg.disc_window)
        self.mask_flags = np.zeros((cfg.num_envs, self.N), dtype=np.float64)
        self.mask_dense = np.zeros((cfg.num_envs, self.S), dtype=np.float64)
        self.task_obs = np.zeros((cfg.num_envs, self.task_dim), dtype=np.float64)

        self.iteration = 0
        self.log: list[dict] = []
        self._states = self._full_reset()

    # ------------------------------------------------------------------ setup
    def _policy_obs_dim(self) -> int:
        return self.S + self.N + self.task_dim

    def _critic_obs_dim(self) -> int:
        return self.S + self.N + self.task_dim

    def _build_policy(self):
        cfg = self.cfg
        return GaussianPolicy(
            self.obs_dim, self.D, cfg.hidden_dims, cfg.activation, cfg.log_std_init
        )

    def _build_critic(self):
        cfg = self.cfg
        return build_mlp(MLPSpec(self._critic_obs_dim(), cfg.hidden_dims, 1, cfg.activation))

    def _build_disc(self) -> Discriminator:
        cfg = self.cfg
        return Discriminator(
            self.S, cfg.disc_window, cfg.disc_hidden_dims, activation=cfg.activation
        )

    def _full_reset(self) -> np.ndarray:
        states, info = self.env.reset(self.np_rng)
        idx = np.arange(self.cfg.num_envs)
        self._resample_masks(idx)
        self._seed_tracker(idx, info)
        if self.task is not None:
            self.task.reset(self.np_rng, idx, info)
            self.task_obs[idx] = self.task.observe(info)[idx]
        return states

    def _resample_masks(self, indices: np.ndarray) -> None:
        for i in indices:
            m = self._draw_mask()
            self.mask_flags[i] = m.flags.astype(np.float64)
            self.mask_dense[i] = m.dense

    def _draw_mask(self):
        return sample_mask(
            self.np_rng, self.N, self.index_map, rho=self.cfg.rho, max_parts=self.cfg.max_parts
        )

    def _seed_tracker(self, indices: np.ndarray, info: dict) -> None:
        W = self.cfg.disc_window
        hist = np.zeros((len(indices), W + 1, self.S))
        for row, i in enumerate(indices):
            c = int(info["clip_idx"][i])
            t = int(info["frame_idx"][i])
            seq = self._clip_states[c]
            frames = np.clip(np.arange(t - W, t + 1), 0, len(seq) - 1)
            hist[row] = seq[frames]
        self.tracker.seed_rows(np.asarray(indices, dtype=np.int64), hist)

    # ---------------------------------------------------------------- rollout
    def _policy_obs(self, states: np.ndarray) -> np.ndarray:
        masked = states * (1.0 - self.mask_dense)
        parts = [masked, self.mask_flags]
        if self.task is not None:
            parts.append(self.task_obs)
        return np.concatenate(parts, axis=-1)

    def _critic_obs(self, states: np.ndarray, flags: np.ndarray, task_obs: np.ndarray | None) -> np.ndarray:
        parts = [states, flags]
        if self.task is not None:
            parts.append(task_obs)
        return np.concatenate(parts, axis=-1)

    def _act(self, states: np.ndarray) -> tuple[np.ndarray, dict]:
        """One policy step: returns (actions for the env, arrays to store).

        Stored arrays must include 'obs', 'actions', 'logp'; subclasses may
        add extras (picked up by _extra_epoch_tensors).
        """
        obs = self._policy_obs(states)
        with torch.no_grad():
            actions_t, logp_t = self.policy.sample(
                torch.as_tensor(obs, dtype=torch.float32), self.torch_gen
            )
        actions = actions_t.numpy().astype(np.float64)
        return actions, {
            "obs": obs,
            "actions": actions,
            "logp": logp_t.numpy().astype(np.float64),
        }

    def collect(self) -> tuple[RolloutBuffer, np.ndarray, np.ndarray, np.ndarray]:
        cfg = self.cfg
        B = cfg.num_envs
        buf = RolloutBuffer(cfg.horizon, B)
        buf.allocate("states", (self.S,))
        buf.allocate("flags", (self.N,))
        buf.allocate("task_obs", (self.task_dim,))
        buf.allocate("rewards", ())
        buf.allocate("task_rewards", ())
        buf.allocate("dones", ())
        buf.allocate("windows", ((cfg.disc_window + 1) * self.S,))

        states = self._states
        stored: dict = {}
        episodes = 0
        for t in range(cfg.horizon):
            if cfg.mask_mode == "step":
                self._resample_masks(np.arange(B))
            env_actions, stored = self._act(states)
            prev_info = self.env._info() if self.task is not None else None
            next_states, done, info = self.env.step(env_actions)
            self.tracker.push(next_states)

            buf.set("states", t, states)
            buf.set("flags", t, self.mask_flags)
            if self.task is not None:
                buf.set("task_obs", t, self.task_obs)
                buf.set("task_rewards", t, self.task.reward(prev_info, info))
            if t == 0:
                for k, v in stored.items():
                    buf.allocate(k, np.shape(v)[1:])
            for k, v in stored.items():
                buf.set(k, t, v)
            buf.set("dones", t, done.astype(np.float64))
            buf.set("windows", t, self.tracker.windows())

            if np.any(done):
                idx = np.flatnonzero(done)
                episodes += len(idx)
                reset_states, reset_info = self.env.reset(self.np_rng, idx)
                next_states = next_states.copy()
                next_states[idx] = reset_states[idx]
                if cfg.mask_mode == "episode":
                    self._resample_masks(idx)
                self._seed_tracker(idx, reset_info)
                if self.task is not None:
                    self.task.reset(self.np_rng, idx, reset_info)
            if self.task is not None:
                self.task_obs = self.task.observe(self.env._info())
            states = next_states

        self._states = states
        final_obs = self._critic_obs(states, self.mask_flags, self.task_obs)
        return buf, final_obs, np.float64(episodes), stored["obs"]

    # ----------------------------------------------------------------- update
    def _value(self, obs: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            v = self.critic(torch.as_tensor(obs, dtype=torch.float32))
        return v.squeeze(-1).numpy().astype(np.float64)

    def _sample_real(self, n: int) -> tuple[torch.Tensor, torch.Tensor | None]:
        """Draw n reference windows (and their condition, if any)."""
        ridx = self.np_rng.integers(0, self.real_windows.shape[0], size=n)
        return self.real_windows[torch.as_tensor(ridx, dtype=torch.long)], None

    def _fake_conditions(self, buf: RolloutBuffer) -> np.ndarray | None:
        """Per-row condition for policy windows; None when unconditional."""
        return None

    def _extra_epoch_tensors(self, buf: RolloutBuffer) -> dict:
        """Additional flattened tensors the epoch hooks need."""
        return {}

    def _logp_new(self, tensors: dict, sel: torch.Tensor) -> torch.Tensor:
        return self.policy.log_prob(tensors["obs"][sel], tensors["actions"][sel])

    def _mi_term(self, tensors: dict, sel: torch.Tensor) -> torch.Tensor:
        if self.cfg.mi_weight <= 0.0:
            return torch.zeros(())
        return mi_loss(self.policy, tensors["full_obs"][sel], tensors["obs"][sel])

    def _critic_values(self, critic_obs: torch.Tensor) -> torch.Tensor:
        return self.critic(critic_obs).squeeze(-1)

    def train_iteration(self) -> dict:
        cfg = self.cfg
        buf, final_critic_obs, episodes, _ = self.collect()

        # discriminator updates on reference vs fresh policy windows
        fake_all = buf.flat("windows")
        fake_cond = self._fake_conditions(buf)
        disc_stats: dict = {}
        for _ in range(cfg.disc_updates):
            real_b, cond_r = self._sample_real(cfg.disc_batch)
            fidx = self.np_rng.integers(0, fake_all.shape[0], size=cfg.disc_batch)
            fake_b = torch.as_tensor(fake_all[fidx], dtype=torch.float32)
            cond_f = None if fake_cond is None else torch.as_tensor(
                fake_cond[fidx], dtype=torch.float32
            )
            disc_stats = discriminator_update(
                self.disc, self.disc_opt, real_b, fake_b, cfg.gp_weight,
                condition_real=cond_r, condition_fake=cond_f,
            )

        # style rewards from the updated discriminator
        with torch.no_grad():
            scores = self.disc.score(
                torch.as_tensor(fake_all, dtype=torch.float32),
                None if fake_cond is None else torch.as_tensor(fake_cond, dtype=torch.float32),
            )
        rewards = style_reward(scores.numpy()).reshape(cfg.horizon, cfg.num_envs)
        if self.task is not None:
            rewards = (1.0 - self.task_weight) * rewards \
                + self.task_weight * buf.get("task_rewards")
        buf.data["rewards"][...] = rewards

        critic_obs = np.concatenate(
            [buf.flat("states"), buf.flat("flags")]
            + ([buf.flat("task_obs")] if self.task is not None else []),
            axis=-1,
        )
        values = self._value(critic_obs).reshape(cfg.horizon, cfg.num_envs)
        bootstrap = self._value(final_critic_obs)
        adv, returns = compute_gae(
            rewards, values, buf.get("dones"), bootstrap, cfg.gamma, cfg.gae_tau
        )
        if cfg.normalize_advantages:
            adv = normalize_advantages(adv)

        states_flat = buf.flat("states")
        null_flags = np.zeros((states_flat.shape[0], self.N))
        full_parts = [states_flat, null_flags]
        if self.task is not None:
            full_parts.append(buf.flat("task_obs"))
        tensors = {
            "obs": torch.as_tensor(buf.flat("obs"), dtype=torch.float32),
            "full_obs": torch.as_tensor(
                np.concatenate(full_parts, axis=-1), dtype=torch.float32
            ),
            "actions": torch.as_tensor(buf.flat("actions"), dtype=torch.float32),
        }
        tensors.update(self._extra_epoch_tensors(buf))
        critic_obs_t = torch.as_tensor(critic_obs, dtype=torch.float32)
        logp_old_t = torch.as_tensor(buf.flat("logp"), dtype=torch.float32)
        adv_t = torch.as_tensor(adv.reshape(-1), dtype=torch.float32)
        ret_t = torch.as_tensor(returns.reshape(-1), dtype=torch.float32)

        policy_losses, mi_losses, value_losses = [], [], []
        for _ in range(cfg.policy_epochs):
            for idx in buf.minibatch_indices(self.np_rng, cfg.minibatch_size):
                sel = torch.as_tensor(idx, dtype=torch.long)
                logp_new = self._logp_new(tensors, sel)
                l_ppo = clipped_surrogate_loss(logp_new, logp_old_t[sel], adv_t[sel], cfg.clip_eps)
                l_mi = self._mi_term(tensors, sel)
                loss = l_ppo + cfg.mi_weight * l_mi
                self.actor_opt.zero_grad()
                loss.backward()
                self.actor_opt.step()

                v = self._critic_values(critic_obs_t[sel])
                v_loss = cfg.critic_weight * F.mse_loss(v, ret_t[sel])
                self.critic_opt.zero_grad()
                v_loss.backward()
                self.critic_opt.step()

                policy_losses.append(float(l_ppo.detach()))
                mi_losses.append(float(l_mi.detach()))
                value_losses.append(float(v_loss.detach()))

        self.iteration += 1
        entry = {
            "iter": self.iteration,
            "reward_mean": float(rewards.mean()),
            "policy_loss": float(np.mean(policy_losses)),
            "mi_loss": float(np.mean(mi_losses)),
            "value_loss": float(np.mean(value_losses)),
            "episodes": float(episodes),
            "masked_frac": float((self.mask_flags.sum(axis=1) > 0).mean()),
            **disc_stats,
        }
        self.log.append(entry)
        return entry

    def train(self, iterations: int | None = None, progress: bool = False) -> list[dict]:
        n = self.cfg.iterations if iterations is None else iterations
        start = time.time()
        for k in range(n):
            entry = self.train_iteration()
            if progress:
                print(
                    f"[{self.STAGE}] iter {entry['iter']} reward {entry['reward_mean']:.3f} "
                    f"({time.time() - start:.1f}s)",
                    file=sys.stderr,
                )
        return self.log

    # ------------------------------------------------------------- checkpoints
    def _modules(self) -> dict:
        return {"policy": self.policy, "critic": self.critic, "disc": self.disc}

    def _manifest(self, parent: str | None) -> dict:
        return {
            "stage": self.STAGE,
            "character": self.spec.to_dict(),
            "partition": self.partition.to_dict(),
            "train_config": self.cfg.to_dict(),
            "env_config": dataclasses.asdict(self.env_config),
            "dims": {
                "state": self.S,
                "obs": self.obs_dim,
                "action": self.D,
                "groups": self.N,
                "task_obs": self.task_dim,
            },
            "task": None if self.task is None else self.task.describe(),
            "task_weight": self.task_weight,
            "iteration": self.iteration,
            "parent": parent,
        }

    def _train_state(self) -> dict:
        return {
            "iteration": self.iteration,
            "log": self.log,
            "actor_opt": self.actor_opt.state_dict(),
            "critic_opt": self.critic_opt.state_dict(),
            "disc_opt": self.disc_opt.state_dict(),
            "np_rng": self.np_rng.bit_generator.state,
            "torch_gen": self.torch_gen.get_state(),
            "env": self.env.snapshot().arrays,
            "tracker": self.tracker.snapshot(),
            "mask_flags": self.mask_flags.copy(),
            "mask_dense": self.mask_dense.copy(),
            "task_obs": self.task_obs.copy(),
            "task_state": None if self.task is None else self.task.snapshot(),
            "states": self._states.copy(),
        }

    def save(self, out_dir: str | Path, parent: str | None = None) -> Path:
        return save_checkpoint(out_dir, self._manifest(parent), self._modules(), self._train_state())

    def _restore_train_state(self, ts: dict) -> None:
        from .envs import EnvSnapshot

        self.iteration = ts["iteration"]
        self.log = list(ts["log"])
        self.actor_opt.load_state_dict(ts["actor_opt"])
        self.critic_opt.load_state_dict(ts["critic_opt"])
        self.disc_opt.load_state_dict(ts["disc_opt"])
        self.np_rng.bit_generator.state = ts["np_rng"]
        self.torch_gen.set_state(ts["torch_gen"])
        self.env.restore(EnvSnapshot(ts["env"]))
        self.tracker.restore(ts["tracker"])
        self.mask_flags[...] = ts["mask_flags"]
        self.mask_dense[...] = ts["mask_dense"]
        self.task_obs = ts["task_obs"].copy()
        if self.task is not None and ts["task_state"] is not None:
            self.task.restore(ts["task_state"])
        self._states = ts["states"].copy()

    @classmethod
    def load(
        cls,
        ckpt_dir: str | Path,
        clips: list[MotionClip],
        task=None,
        resume: bool = True,
    ) -> "BaseTrainer":
        manifest = load_manifest(ckpt_dir)
        if manifest.get("stage") != cls.STAGE:
            raise CheckpointError(
                f"{ckpt_dir}: stage {manifest.get('stage')!r}, expected {cls.STAGE!r}"
            )
        spec = CharacterSpec.from_dict(manifest["character"])
        partition = BodyPartition.from_dict(manifest["partition"])
        cfg = TrainConfig.from_dict(manifest["train_config"])
        env_config = None
        if manifest.get("env_config") is not None:
            env_config = EnvConfig(**manifest["env_config"])
        trainer = cls(spec, partition, clips, cfg, task=task,
                      task_weight=manifest.get("task_weight", 0.5),
                      env_config=env_config)
        load_params_into(ckpt_dir, trainer._modules())
        if resume:
            ts = load_train_state(ckpt_dir)
            if ts is not None:
                trainer._restore_train_state(ts)
        return trainer


def write_log(log: list[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
