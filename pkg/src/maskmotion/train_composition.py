"""Stage-two residual training for motion composition.

A frozen stage-one policy keeps producing the carrier motion; a residual
policy, conditioned on the full state, the base action, and the mask flags,
shifts the action so the masked parts follow a second clip's style. The
composed action distribution is

    mean = gate * (gain * a_base + mu_residual) + (1 - gate) * a_base

with gate = 1 for non-null masks, a learnable scalar gain (init 1), and a
zero-initialized residual mean head, so training starts exactly at the base
policy and null masks always pass the base action through unchanged.

Supervision comes from a mask-conditioned discriminator. Its real windows are
kinematic blends: for each configured part subset, the carrier clip with the
subset's joints replaced by the second clip's local rotations. Null-mask
windows come from the raw carrier clip. Masks are drawn from exactly that
schedule (null with probability 1-rho, otherwise a uniform configured subset),
so fake and real conditions match in distribution.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from torch import nn

from .character import CharacterSpec, MotionClip
from .checkpoint import load_manifest, load_params_into, load_train_state, params_digest
from .envs import EnvConfig, action_dim
from .errors import CheckpointError, ConfigError
from .kinematics import blend_compose, clip_states, state_dim
from .masking import BodyPartition, sample_mask
from .nets import Discriminator, GaussianPolicy
from .ppo import RolloutBuffer, TrainConfig, reference_windows
from .train_base import BaseTrainer


class CompositePolicy(nn.Module):
    """Distribution over composed actions given (obs, base action, gate)."""

    def __init__(
        self,
        obs_dim: int,
        action_dim: int,
        hidden_dims: tuple[int, ...],
        activation: str,
        log_std_init: float,
    ) -> None:
        super().__init__()
        self.net = GaussianPolicy(obs_dim, action_dim, hidden_dims, activation, log_std_init)
        self.net.zero_mean_head()
        self.gain = nn.Parameter(torch.ones(()))

    def forward(
        self, obs: torch.Tensor, base_actions: torch.Tensor, gate: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        mu_r, std = self.net(obs)
        g = gate.unsqueeze(-1)
        mean = g * (self.gain * base_actions + mu_r) + (1.0 - g) * base_actions
        return mean, std

    def sample(
        self,
        obs: torch.Tensor,
        base_actions: torch.Tensor,
        gate: torch.Tensor,
        generator: torch.Generator | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        mean, std = self(obs, base_actions, gate)
        eps = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
        actions = mean + std * eps
        return actions, GaussianPolicy._log_prob(mean, std, actions)

    def log_prob(
        self,
        obs: torch.Tensor,
        base_actions: torch.Tensor,
        gate: torch.Tensor,
        actions: torch.Tensor,
    ) -> torch.Tensor:
        mean, std = self(obs, base_actions, gate)
        return GaussianPolicy._log_prob(mean, std, actions)

    def act_deterministic(
        self, obs: torch.Tensor, base_actions: torch.Tensor, gate: torch.Tensor
    ) -> torch.Tensor:
        mean, _ = self(obs, base_actions, gate)
        return mean


def load_frozen_policy(ckpt_dir: str | Path) -> tuple[GaussianPolicy, dict]:
    """Rebuild the stage-one policy from its checkpoint and freeze it."""
    manifest = load_manifest(ckpt_dir)
    if manifest.get("stage") != "base":
        raise CheckpointError(
            f"{ckpt_dir}: stage {manifest.get('stage')!r}, expected 'base'"
        )
    if manifest["dims"].get("task_obs", 0):
        raise CheckpointError(f"{ckpt_dir}: base policy was trained with a task head")
    cfg = TrainConfig.from_dict(manifest["train_config"])
    policy = GaussianPolicy(
        manifest["dims"]["obs"],
        manifest["dims"]["action"],
        cfg.hidden_dims,
        cfg.activation,
        cfg.log_std_init,
    )
    load_params_into(ckpt_dir, {"policy": policy})
    policy.requires_grad_(False)
    policy.eval()
    return policy, manifest


class CompositionTrainer(BaseTrainer):
    """Residual training that splices a second clip's style onto masked parts."""

    STAGE = "compose"

    def __init__(
        self,
        base_ckpt: str | Path,
        clip_a: MotionClip,
        clip_b: MotionClip,
        cfg: TrainConfig,
        subsets: tuple[tuple[str, ...], ...] = (("LeftArm", "RightArm"),),
        env_config: EnvConfig | None = None,
    ) -> None:
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
        if not clip_a.spec.matches(spec) or not clip_b.spec.matches(spec):
            raise ConfigError("composition clips must use the base policy's skeleton")
        if base_manifest["dims"]["state"] != state_dim(len(spec.joint_names)):
            raise CheckpointError("base checkpoint state dim mismatch")
        if not subsets:
            raise ConfigError("composition needs at least one part subset")
        self.subset_names = tuple(tuple(s) for s in subsets)
        self.subset_idx = tuple(
            tuple(partition.group_index(name) for name in s) for s in self.subset_names
        )
        self.clip_b = clip_b
        # the env rolls out from the carrier clip only
        super().__init__(spec, partition, [clip_a], cfg, env_config=env_config)
        if base_manifest["dims"]["action"] != self.D:
            raise CheckpointError("base checkpoint action dim mismatch")

        self._build_real_pools()
        self.base_digest = params_digest({"policy": self.base_policy})

    def _build_real_pools(self) -> None:
        """Pool 0 is the raw carrier (null mask); then one blend per subset."""
        clip_a = self.clips[0]
        pools = [self.real_windows]
        conditions = [np.zeros((self.real_windows.shape[0], self.N))]
        for names, idx in zip(self.subset_names, self.subset_idx):
            blended = blend_compose(clip_a, self.clip_b, self.partition, names)
            wins = reference_windows([clip_states(blended)], self.cfg.disc_window)
            pools.append(torch.as_tensor(wins, dtype=torch.float32))
            flags = np.zeros(self.N)
            flags[list(idx)] = 1.0
            conditions.append(np.tile(flags, (wins.shape[0], 1)))
        self.real_pools = pools
        self.real_conditions = [
            torch.as_tensor(c, dtype=torch.float32) for c in conditions
        ]

    # ------------------------------------------------------------ net shapes
    def _policy_obs_dim(self) -> int:
        # full state + mask flags + base action
        return self.S + self.N + self.D

    def _build_policy(self):
        cfg = self.cfg
        return CompositePolicy(
            self.obs_dim, self.D, cfg.hidden_dims, cfg.activation, cfg.log_std_init
        )

    def _build_disc(self) -> Discriminator:
        cfg = self.cfg
        return Discriminator(
            self.S,
            cfg.disc_window,
            cfg.disc_hidden_dims,
            activation=cfg.activation,
            condition_dim=self.N,
        )

    # -------------------------------------------------------------- sampling
    def _draw_mask(self):
        return sample_mask(
            self.np_rng,
            self.N,
            self.index_map,
            rho=self.cfg.rho,
            max_parts=self.cfg.max_parts,
            subsets=self.subset_idx,
        )

    def _act(self, states: np.ndarray) -> tuple[np.ndarray, dict]:
        masked = states * (1.0 - self.mask_dense)
        base_obs = np.concatenate([masked, self.mask_flags], axis=-1)
        with torch.no_grad():
            a_base = self.base_policy.act_deterministic(
                torch.as_tensor(base_obs, dtype=torch.float32)
            )
        base_actions = a_base.numpy().astype(np.float64)
        obs = np.concatenate([states, self.mask_flags, base_actions], axis=-1)
        gate = (self.mask_flags.sum(axis=-1) > 0).astype(np.float64)
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
        }

    # ---------------------------------------------------------------- update
    def _sample_real(self, n: int) -> tuple[torch.Tensor, torch.Tensor | None]:
        # match the mask schedule: null w.p. 1-rho, else a uniform subset
        u = self.np_rng.random(n)
        pool_ids = np.where(
            u < self.cfg.rho, 1 + self.np_rng.integers(0, len(self.subset_idx), size=n), 0
        )
        rows = np.empty((n, self.real_pools[0].shape[1]), dtype=np.float32)
        conds = np.empty((n, self.N), dtype=np.float32)
        for p, (pool, cond) in enumerate(zip(self.real_pools, self.real_conditions)):
            sel = np.flatnonzero(pool_ids == p)
            if sel.size == 0:
                continue
            ridx = self.np_rng.integers(0, pool.shape[0], size=sel.size)
            rows[sel] = pool[torch.as_tensor(ridx, dtype=torch.long)].numpy()
            conds[sel] = cond[torch.as_tensor(ridx, dtype=torch.long)].numpy()
        return torch.as_tensor(rows), torch.as_tensor(conds)

    def _fake_conditions(self, buf: RolloutBuffer) -> np.ndarray | None:
        return buf.flat("flags")

    def _extra_epoch_tensors(self, buf: RolloutBuffer) -> dict:
        return {
            "base_actions": torch.as_tensor(buf.flat("base_actions"), dtype=torch.float32),
            "gate": torch.as_tensor(buf.flat("gate"), dtype=torch.float32),
        }

    def _logp_new(self, tensors: dict, sel: torch.Tensor) -> torch.Tensor:
        return self.policy.log_prob(
            tensors["obs"][sel],
            tensors["base_actions"][sel],
            tensors["gate"][sel],
            tensors["actions"][sel],
        )

    def _mi_term(self, tensors: dict, sel: torch.Tensor) -> torch.Tensor:
        # invariance is a stage-one property; the residual is mask-conditioned
        # on purpose
        return torch.zeros(())

    # ----------------------------------------------------------- checkpoints
    def _modules(self) -> dict:
        mods = super()._modules()
        mods["base_policy"] = self.base_policy
        return mods

    def _manifest(self, parent: str | None) -> dict:
        m = super()._manifest(parent)
        m["subsets"] = [list(s) for s in self.subset_names]
        m["base_digest"] = self.base_digest
        m["base_policy"] = dict(self.base_arch)
        return m

    def verify_base_frozen(self) -> bool:
        return params_digest({"policy": self.base_policy}) == self.base_digest

    @classmethod
    def load(
        cls,
        ckpt_dir: str | Path,
        clip_a: MotionClip,
        clip_b: MotionClip,
        resume: bool = True,
    ) -> "CompositionTrainer":
        manifest = load_manifest(ckpt_dir)
        if manifest.get("stage") != cls.STAGE:
            raise CheckpointError(
                f"{ckpt_dir}: stage {manifest.get('stage')!r}, expected {cls.STAGE!r}"
            )
        # rebuild a temporary base-policy holder for the constructor by
        # pointing it at this checkpoint's own stored base parameters
        trainer = cls.__new__(cls)
        spec = CharacterSpec.from_dict(manifest["character"])
        partition = BodyPartition.from_dict(manifest["partition"])
        cfg = TrainConfig.from_dict(manifest["train_config"])
        bp = manifest["base_policy"]
        base_policy = GaussianPolicy(
            bp["obs"], manifest["dims"]["action"], tuple(bp["hidden_dims"]),
            bp["activation"], bp["log_std_init"],
        )
        env_config = None
        if manifest.get("env_config") is not None:
            env_config = EnvConfig(**manifest["env_config"])
        trainer.base_policy = base_policy
        trainer.base_arch = dict(bp)
        if not clip_a.spec.matches(spec) or not clip_b.spec.matches(spec):
            raise ConfigError("composition clips must use the checkpoint's skeleton")
        trainer.subset_names = tuple(tuple(s) for s in manifest["subsets"])
        trainer.subset_idx = tuple(
            tuple(partition.group_index(n) for n in s) for s in trainer.subset_names
        )
        trainer.clip_b = clip_b
        BaseTrainer.__init__(trainer, spec, partition, [clip_a], cfg, env_config=env_config)
        trainer._build_real_pools()
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


def compose_rollout_action(
    base_policy: GaussianPolicy,
    residual: CompositePolicy,
    states: np.ndarray,
    mask_flags: np.ndarray,
    mask_dense: np.ndarray,
) -> np.ndarray:
    """Deterministic composed action for evaluation/serving."""
    masked = states * (1.0 - mask_dense)
    base_obs = np.concatenate([masked, mask_flags], axis=-1)
    with torch.no_grad():
        a_base = base_policy.act_deterministic(torch.as_tensor(base_obs, dtype=torch.float32))
        obs = np.concatenate([states, mask_flags, a_base.numpy()], axis=-1)
        gate = torch.as_tensor(
            (mask_flags.sum(axis=-1) > 0).astype(np.float64), dtype=torch.float32
        )
        act = residual.act_deterministic(
            torch.as_tensor(obs, dtype=torch.float32), a_base, gate
        )
    return act.numpy().astype(np.float64)
