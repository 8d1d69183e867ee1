"""Latent Brownian-bridge transport: interpolant, drift targets, losses, few-step sampler.

All operations are elementwise over latent tensors and dtype-agnostic; given an
explicit torch.Generator they are deterministic.
"""

from dataclasses import dataclass, field
from typing import Callable

import torch


class BridgeConfigError(ValueError):
    pass


class BridgeDomainError(ValueError):
    """Raised when t is outside the valid domain of an operation."""


@dataclass(frozen=True)
class BridgeConfig:
    sigma: float = 0.008
    timesteps: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75)
    stochastic_sampling: bool = False

    def validate(self) -> None:
        if self.sigma < 0:
            raise BridgeConfigError("sigma must be >= 0")
        if len(self.timesteps) == 0:
            raise BridgeConfigError("timestep list must be nonempty")
        if any(not (0.0 <= t < 1.0) for t in self.timesteps):
            raise BridgeConfigError("all timesteps must lie in [0, 1)")
        if any(b <= a for a, b in zip(self.timesteps, self.timesteps[1:])):
            raise BridgeConfigError("timesteps must be strictly increasing")


@dataclass(frozen=True)
class BridgeSample:
    z_t: torch.Tensor
    t: float
    target_drift: torch.Tensor
    noise: torch.Tensor


def _check_shapes(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def interpolate(z0: torch.Tensor, z1: torch.Tensor, t, sigma: float,
                eps: torch.Tensor) -> torch.Tensor:
    """Bridge interpolant (1-t)*z0 + t*z1 + sigma*sqrt(t*(1-t))*eps.

    Exact at the endpoints: t=0 returns z0, t=1 returns z1, for any sigma/eps.
    `t` may be a scalar or a per-batch tensor broadcastable against z0.
    """
    _check_shapes(z0, z1)
    t = torch.as_tensor(t, dtype=z0.dtype)
    while t.dim() < z0.dim():
        t = t[..., None]
    return (1.0 - t) * z0 + t * z1 + sigma * torch.sqrt(t * (1.0 - t)) * eps


def target_drift(z1: torch.Tensor, z_t: torch.Tensor, t) -> torch.Tensor:
    """Regression target (z1 - z_t) / (1 - t); undefined at t = 1."""
    _check_shapes(z1, z_t)
    t_ = torch.as_tensor(t, dtype=z1.dtype)
    if bool((t_ >= 1.0).any()):
        raise BridgeDomainError("target drift undefined at t >= 1")
    while t_.dim() < z1.dim():
        t_ = t_[..., None]
    return (z1 - z_t) / (1.0 - t_)


def predict_terminal(v: torch.Tensor, z_t: torch.Tensor, t) -> torch.Tensor:
    """Terminal latent prediction (1 - t) * v + z_t."""
    _check_shapes(v, z_t)
    t_ = torch.as_tensor(t, dtype=z_t.dtype)
    if bool((t_ >= 1.0).any()):
        raise BridgeDomainError("terminal prediction undefined at t >= 1")
    while t_.dim() < z_t.dim():
        t_ = t_[..., None]
    return (1.0 - t_) * v + z_t


def latent_loss(v_pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared error between predicted and target drift fields."""
    _check_shapes(v_pred, target)
    return ((v_pred - target) ** 2).mean()


def draw_sample(z0: torch.Tensor, z1: torch.Tensor, cfg: BridgeConfig,
                rng: torch.Generator) -> BridgeSample:
    """Draw one training sample: t uniform over cfg.timesteps, eps ~ N(0, I)."""
    cfg.validate()
    _check_shapes(z0, z1)
    idx = int(torch.randint(len(cfg.timesteps), (1,), generator=rng))
    t = cfg.timesteps[idx]
    eps = torch.randn(z0.shape, generator=rng, dtype=z0.dtype)
    z_t = interpolate(z0, z1, t, cfg.sigma, eps)
    return BridgeSample(z_t=z_t, t=t, target_drift=target_drift(z1, z_t, t), noise=eps)


def sample(z0: torch.Tensor,
           drift_fn: Callable[[torch.Tensor, float], torch.Tensor],
           cfg: BridgeConfig,
           rng: torch.Generator | None = None) -> torch.Tensor:
    """Few-step sampler: repeatedly predict the terminal latent and re-embed.

    At each timestep t_k the drift network gives a terminal estimate
    z1_hat = (1-t_k)*v + z; between steps the state is re-interpolated toward
    z1_hat with local time (t_{k+1}-t_k)/(1-t_k). The final step returns z1_hat
    directly, so with a single timestep this is the one-shot terminal
    prediction, and an oracle drift recovers z1 exactly for any schedule.
    Deterministic unless cfg.stochastic_sampling is set.
    """
    cfg.validate()
    ts = cfg.timesteps
    z = z0
    for k, t_k in enumerate(ts):
        v = drift_fn(z, t_k)
        z1_hat = predict_terminal(v, z, t_k)
        if k == len(ts) - 1:
            return z1_hat
        s = (ts[k + 1] - t_k) / (1.0 - t_k)
        if cfg.stochastic_sampling:
            if rng is None:
                raise BridgeConfigError("stochastic sampling requires an rng")
            eps = torch.randn(z.shape, generator=rng, dtype=z.dtype)
            z = interpolate(z, z1_hat, s, cfg.sigma, eps)
        else:
            z = interpolate(z, z1_hat, s, 0.0, torch.zeros_like(z))
    raise AssertionError("unreachable")
