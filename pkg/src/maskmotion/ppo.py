"""PPO plumbing shared by all training stages: config, rollout storage,
GAE, the clipped surrogate, style-reward transform, and transition-window
tracking for the discriminator.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np
import torch

from .errors import ConfigError, InvalidInputError


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training stage.

    Defaults are desk scale; paper_scale() swaps in the large-run values.
    """

    iterations: int = 200
    num_envs: int = 64
    horizon: int = 32
    minibatch_size: int = 512
    policy_epochs: int = 6
    gamma: float = 0.99
    gae_tau: float = 0.95
    clip_eps: float = 0.2
    critic_weight: float = 5.0
    mi_weight: float = 1.0
    gp_weight: float = 5.0
    rho: float = 0.8
    max_parts: int = 3
    actor_lr: float = 1e-5
    critic_lr: float = 1e-4
    disc_lr: float = 1e-4
    hidden_dims: tuple[int, ...] = (256, 256, 128)
    disc_hidden_dims: tuple[int, ...] = (256, 256, 128)
    activation: str = "silu"
    disc_window: int = 5
    disc_batch: int = 256
    disc_updates: int = 2
    log_std_init: float = -1.0
    mask_mode: str = "episode"
    normalize_advantages: bool = True
    seed: int = 0
    checkpoint_every: int = 0
    env_backend: str = "surrogate"
    max_steps: int = 300

    def __post_init__(self) -> None:
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        for name in ("num_envs", "horizon", "minibatch_size", "policy_epochs",
                     "disc_batch", "disc_updates", "disc_window", "max_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError("rho must be in [0, 1]")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must be in (0, 1]")
        if not 0.0 <= self.gae_tau <= 1.0:
            raise ConfigError("gae_tau must be in [0, 1]")
        if self.clip_eps <= 0.0:
            raise ConfigError("clip_eps must be positive")
        if self.max_parts < 1:
            raise ConfigError("max_parts must be >= 1")
        if self.mask_mode not in ("episode", "step"):
            raise ConfigError("mask_mode must be 'episode' or 'step'")
        for name in ("actor_lr", "critic_lr", "disc_lr"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive")
        if self.mi_weight < 0.0 or self.gp_weight < 0.0 or self.critic_weight < 0.0:
            raise ConfigError("loss weights must be non-negative")

    def paper_scale(self) -> "TrainConfig":
        return replace(
            self,
            num_envs=4096,
            minibatch_size=4096,
            hidden_dims=(1024, 1024, 512),
            disc_hidden_dims=(1024, 1024, 512),
        )

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        kwargs = dict(d)
        for key in ("hidden_dims", "disc_hidden_dims"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(int(x) for x in kwargs[key])
        return cls(**kwargs)


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    bootstrap: np.ndarray,
    gamma: float,
    tau: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation in float64.

    rewards/values/dones are (T, B); dones[t] marks episodes that ended at
    step t (no bootstrapping across them); bootstrap is V(s_T) per env.
    Returns (advantages, returns), both (T, B).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    bootstrap = np.asarray(bootstrap, dtype=np.float64)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise InvalidInputError("rewards, values, dones must share shape (T, B)")
    T, B = rewards.shape
    if bootstrap.shape != (B,):
        raise InvalidInputError(f"bootstrap must be ({B},)")
    adv = np.zeros((T, B))
    gae = np.zeros(B)
    next_values = bootstrap
    for t in range(T - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values * nonterminal - values[t]
        gae = delta + gamma * tau * nonterminal * gae
        adv[t] = gae
        next_values = values[t]
    return adv, adv + values


def normalize_advantages(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    adv = np.asarray(adv, dtype=np.float64)
    return (adv - adv.mean()) / (adv.std() + eps)


def clipped_surrogate_loss(
    logp_new: torch.Tensor,
    logp_old: torch.Tensor,
    advantages: torch.Tensor,
    clip_eps: float,
) -> torch.Tensor:
    """Negative clipped PPO objective (to minimize)."""
    ratio = torch.exp(logp_new - logp_old)
    unclipped = ratio * advantages
    clipped = torch.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantages
    return -torch.minimum(unclipped, clipped).mean()


def style_reward(scores: np.ndarray) -> np.ndarray:
    """r = -log(1 - d) with d clamped into [1e-4, 1 - 1e-4]; always finite."""
    d = np.clip(np.asarray(scores, dtype=np.float64), 1e-4, 1.0 - 1e-4)
    return -np.log(1.0 - d)


class WindowTracker:
    """Rolling per-env history of the last window+1 full states.

    windows() returns the flattened stack oldest-to-newest, the discriminator
    input for the transition that just happened.
    """

    def __init__(self, num_envs: int, state_dim: int, window: int) -> None:
        self.window = window
        self.hist = np.zeros((num_envs, window + 1, state_dim))

    def push(self, states: np.ndarray) -> None:
        if states.shape != self.hist[:, 0].shape:
            raise InvalidInputError(
                f"expected states {self.hist[:, 0].shape}, got {states.shape}"
            )
        self.hist[:, :-1] = self.hist[:, 1:]
        self.hist[:, -1] = states

    def seed_rows(self, indices: np.ndarray, history: np.ndarray) -> None:
        """Fill rows with (k, window+1, S) known history (e.g. clip frames)."""
        if history.shape[1:] != self.hist.shape[1:]:
            raise InvalidInputError(
                f"history must be (k, {self.hist.shape[1]}, {self.hist.shape[2]})"
            )
        self.hist[indices] = history

    def windows(self) -> np.ndarray:
        B = self.hist.shape[0]
        return self.hist.reshape(B, -1).copy()

    def snapshot(self) -> np.ndarray:
        return self.hist.copy()

    def restore(self, hist: np.ndarray) -> None:
        if hist.shape != self.hist.shape:
            raise InvalidInputError("tracker snapshot shape mismatch")
        self.hist[...] = hist


def reference_windows(state_seqs: list[np.ndarray], window: int) -> np.ndarray:
    """All stride-1 windows of window+1 consecutive states from each sequence,
    flattened to (num_windows, (window+1)*S)."""
    out = []
    for seq in state_seqs:
        T = seq.shape[0]
        if T < window + 1:
            raise InvalidInputError(
                f"sequence of {T} states is shorter than window+1 = {window + 1}"
            )
        for t in range(T - window):
            out.append(seq[t : t + window + 1].reshape(-1))
    return np.stack(out, axis=0)


@dataclass
class RolloutBuffer:
    """Fixed-horizon on-policy storage: named arrays shaped (T, B, ...)."""

    horizon: int
    num_envs: int
    data: dict[str, np.ndarray] = field(default_factory=dict)

    def allocate(self, name: str, trailing: tuple[int, ...], dtype=np.float64) -> None:
        self.data[name] = np.zeros((self.horizon, self.num_envs) + trailing, dtype=dtype)

    def set(self, name: str, t: int, values: np.ndarray) -> None:
        self.data[name][t] = values

    def get(self, name: str) -> np.ndarray:
        return self.data[name]

    def flat(self, name: str) -> np.ndarray:
        arr = self.data[name]
        return arr.reshape(arr.shape[0] * arr.shape[1], *arr.shape[2:])

    def minibatch_indices(
        self, rng: np.random.Generator, minibatch_size: int
    ) -> list[np.ndarray]:
        n = self.horizon * self.num_envs
        perm = rng.permutation(n)
        size = min(minibatch_size, n)
        return [perm[i : i + size] for i in range(0, n, size)]
