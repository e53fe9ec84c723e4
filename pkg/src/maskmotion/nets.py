"""Networks and losses: Gaussian policy, transition discriminator, critics with
per-stream return normalization, diagonal-Gaussian KL, and the discriminator
gradient penalty.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import InvalidInputError

_ACTIVATIONS = {"relu": nn.ReLU, "tanh": nn.Tanh, "silu": nn.SiLU, "elu": nn.ELU}

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LOGIT_CLAMP = 10.0


@dataclass(frozen=True)
class MLPSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activation: str = "silu"

    def __post_init__(self) -> None:
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise InvalidInputError("mlp dims must be positive")
        if not self.hidden_dims or any(h <= 0 for h in self.hidden_dims):
            raise InvalidInputError("hidden_dims must be non-empty and positive")
        if self.activation not in _ACTIVATIONS:
            raise InvalidInputError(
                f"unknown activation {self.activation!r}; choose from {sorted(_ACTIVATIONS)}"
            )


def build_mlp(spec: MLPSpec) -> nn.Sequential:
    act = _ACTIVATIONS[spec.activation]
    layers: list[nn.Module] = []
    prev = spec.input_dim
    for h in spec.hidden_dims:
        layers += [nn.Linear(prev, h), act()]
        prev = h
    layers.append(nn.Linear(prev, spec.output_dim))
    return nn.Sequential(*layers)


class GaussianPolicy(nn.Module):
    """Diagonal-Gaussian policy with state-independent log-std.

    Log-std starts at log_std_init and is clamped to [-5, 2] on use.
    """

    def __init__(
        self,
        obs_dim: int,
        action_dim: int,
        hidden_dims: tuple[int, ...] = (1024, 1024, 512),
        activation: str = "silu",
        log_std_init: float = -1.0,
    ) -> None:
        super().__init__()
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.net = build_mlp(MLPSpec(obs_dim, hidden_dims, action_dim, activation))
        self.log_std = nn.Parameter(torch.full((action_dim,), float(log_std_init)))

    def forward(self, obs: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if obs.shape[-1] != self.obs_dim:
            raise InvalidInputError(f"expected obs dim {self.obs_dim}, got {obs.shape[-1]}")
        mean = self.net(obs)
        std = torch.clamp(self.log_std, LOG_STD_MIN, LOG_STD_MAX).exp()
        std = std.expand_as(mean)
        return mean, std

    def sample(
        self, obs: torch.Tensor, generator: torch.Generator | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Draw actions and their log-probs; RNG explicit for reproducibility."""
        mean, std = self(obs)
        eps = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
        actions = mean + std * eps
        return actions, self._log_prob(mean, std, actions)

    def act_deterministic(self, obs: torch.Tensor) -> torch.Tensor:
        mean, _ = self(obs)
        return mean

    def log_prob(self, obs: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        mean, std = self(obs)
        return self._log_prob(mean, std, actions)

    @staticmethod
    def _log_prob(mean: torch.Tensor, std: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        var = std * std
        logp = -0.5 * ((actions - mean) ** 2 / var + 2.0 * std.log() + torch.log(
            torch.tensor(2.0 * torch.pi, dtype=mean.dtype)
        ))
        return logp.sum(dim=-1)

    def zero_mean_head(self) -> None:
        """Zero the final linear layer so the initial mean output is exactly 0."""
        last = self.net[-1]
        assert isinstance(last, nn.Linear)
        with torch.no_grad():
            last.weight.zero_()
            last.bias.zero_()


class Discriminator(nn.Module):
    """Transition discriminator over stacked state windows.

    A window is window_transitions consecutive transitions, i.e. a flattened
    stack of window_transitions+1 states, optionally concatenated with a
    condition vector. Logits are clamped to +-LOGIT_CLAMP, which bounds both
    scores and the derived style reward.
    """

    def __init__(
        self,
        feature_dim: int,
        window_transitions: int = 5,
        hidden_dims: tuple[int, ...] = (1024, 1024, 512),
        condition_dim: int = 0,
        activation: str = "silu",
    ) -> None:
        super().__init__()
        if window_transitions < 1:
            raise InvalidInputError("window_transitions must be >= 1")
        self.feature_dim = feature_dim
        self.window_transitions = window_transitions
        self.condition_dim = condition_dim
        self.input_dim = (window_transitions + 1) * feature_dim + condition_dim
        self.net = build_mlp(MLPSpec(self.input_dim, hidden_dims, 1, activation))

    def _stack(self, windows: torch.Tensor, condition: torch.Tensor | None) -> torch.Tensor:
        expected = (self.window_transitions + 1) * self.feature_dim
        if windows.shape[-1] != expected:
            raise InvalidInputError(
                f"expected flattened windows of dim {expected}, got {windows.shape[-1]}"
            )
        if self.condition_dim:
            if condition is None or condition.shape[-1] != self.condition_dim:
                raise InvalidInputError(
                    f"expected condition of dim {self.condition_dim}"
                )
            return torch.cat([windows, condition], dim=-1)
        if condition is not None:
            raise InvalidInputError("discriminator is unconditional; no condition expected")
        return windows

    def logits(self, windows: torch.Tensor, condition: torch.Tensor | None = None) -> torch.Tensor:
        out = self.net(self._stack(windows, condition)).squeeze(-1)
        return torch.clamp(out, -LOGIT_CLAMP, LOGIT_CLAMP)

    def score(self, windows: torch.Tensor, condition: torch.Tensor | None = None) -> torch.Tensor:
        """Sigmoid of the clamped logit: strictly inside (0, 1)."""
        return torch.sigmoid(self.logits(windows, condition))


class PopArtCritic(nn.Module):
    """Value network with per-stream output normalization.

    Tracks bias-corrected running mean/std of each target stream, normalizes
    regression targets, and rescales the output head whenever the statistics
    move so denormalized predictions are preserved.
    """

    def __init__(
        self,
        obs_dim: int,
        hidden_dims: tuple[int, ...] = (1024, 1024, 512),
        num_streams: int = 1,
        activation: str = "silu",
        beta: float = 1e-2,
        sigma_floor: float = 1e-4,
    ) -> None:
        super().__init__()
        if num_streams < 1:
            raise InvalidInputError("num_streams must be >= 1")
        self.obs_dim = obs_dim
        self.num_streams = num_streams
        self.beta = beta
        self.sigma_floor = sigma_floor
        act = _ACTIVATIONS[activation]
        layers: list[nn.Module] = []
        prev = obs_dim
        for h in hidden_dims:
            layers += [nn.Linear(prev, h), act()]
            prev = h
        self.trunk = nn.Sequential(*layers)
        self.head = nn.Linear(prev, num_streams)
        self.register_buffer("m1", torch.zeros(num_streams, dtype=torch.float64))
        self.register_buffer("m2", torch.zeros(num_streams, dtype=torch.float64))
        self.register_buffer("steps", torch.zeros((), dtype=torch.int64))

    def _stats(self) -> tuple[torch.Tensor, torch.Tensor]:
        if int(self.steps) == 0:
            mu = torch.zeros(self.num_streams, dtype=torch.float64)
            sigma = torch.ones(self.num_streams, dtype=torch.float64)
            return mu, sigma
        debias = 1.0 - (1.0 - self.beta) ** int(self.steps)
        mu = self.m1 / debias
        nu = self.m2 / debias
        var = torch.clamp(nu - mu * mu, min=0.0)
        sigma = torch.clamp(var.sqrt(), min=self.sigma_floor)
        return mu, sigma

    @property
    def mu(self) -> torch.Tensor:
        return self._stats()[0]

    @property
    def sigma(self) -> torch.Tensor:
        return self._stats()[1]

    def normalized_values(self, obs: torch.Tensor) -> torch.Tensor:
        if obs.shape[-1] != self.obs_dim:
            raise InvalidInputError(f"expected obs dim {self.obs_dim}, got {obs.shape[-1]}")
        return self.head(self.trunk(obs))

    def values(self, obs: torch.Tensor) -> torch.Tensor:
        mu, sigma = self._stats()
        return self.normalized_values(obs) * sigma.to(torch.float32) + mu.to(torch.float32)

    def normalize_targets(self, targets: torch.Tensor) -> torch.Tensor:
        mu, sigma = self._stats()
        return ((targets.to(torch.float64) - mu) / sigma).to(torch.float32)

    @torch.no_grad()
    def update_stats(self, targets: torch.Tensor) -> None:
        """Fold a batch of raw targets (B, num_streams) into the running stats
        and rescale the head to preserve denormalized outputs."""
        if targets.ndim != 2 or targets.shape[1] != self.num_streams:
            raise InvalidInputError(
                f"targets must be (B, {self.num_streams}), got {tuple(targets.shape)}"
            )
        mu_old, sigma_old = self._stats()
        t64 = targets.to(torch.float64)
        self.m1.mul_(1.0 - self.beta).add_(self.beta * t64.mean(dim=0))
        self.m2.mul_(1.0 - self.beta).add_(self.beta * (t64 * t64).mean(dim=0))
        self.steps.add_(1)
        mu_new, sigma_new = self._stats()
        scale = (sigma_old / sigma_new).to(torch.float32)
        shift = ((mu_old - mu_new) / sigma_new).to(torch.float32)
        self.head.weight.mul_(scale[:, None])
        self.head.bias.mul_(scale).add_(shift)


def gaussian_kl(
    mean_p: torch.Tensor,
    std_p: torch.Tensor,
    mean_q: torch.Tensor,
    std_q: torch.Tensor,
) -> torch.Tensor:
    """KL(p || q) between diagonal Gaussians, summed over the last axis."""
    if torch.any(std_p <= 0) or torch.any(std_q <= 0):
        raise InvalidInputError("standard deviations must be positive")
    var_p, var_q = std_p * std_p, std_q * std_q
    term = torch.log(std_q / std_p) + (var_p + (mean_p - mean_q) ** 2) / (2.0 * var_q) - 0.5
    return term.sum(dim=-1)


def gradient_penalty(
    disc: Discriminator,
    windows: torch.Tensor,
    condition: torch.Tensor | None = None,
) -> torch.Tensor:
    """Mean squared L2 norm of d logit / d input over the batch.

    The gradient is taken with respect to the full discriminator input: the
    window and, for conditional discriminators, the condition vector too.
    """
    windows = windows.detach().clone().requires_grad_(True)
    inputs = [windows]
    if condition is not None:
        condition = condition.detach().clone().requires_grad_(True)
        inputs.append(condition)
    logits = disc.logits(windows, condition)
    grads = torch.autograd.grad(logits.sum(), inputs, create_graph=True)
    sq = sum(g.pow(2).reshape(g.shape[0], -1).sum(dim=1) for g in grads)
    return sq.mean()
