"""Drift-prediction network v(z_t, t): a tiny U-shaped conv net with sinusoidal
time embedding and one tumor-biased attention block at the bottleneck.

The final layer is zero-initialized, so a freshly initialized network predicts
zero drift and the terminal estimate starts at z_t.
"""

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import tubam
from .preprocess import SizeError
from .tubam import AttentionConfig


@dataclass(frozen=True)
class DenoiserConfig:
    in_channels: int = 1
    base_channels: int = 16
    depth: int = 2
    time_embed_dim: int = 32
    attention_at_bottleneck: bool = True
    attention: AttentionConfig = field(default_factory=AttentionConfig)

    def validate(self) -> None:
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.base_channels < 1 or self.in_channels < 1:
            raise ValueError("channel counts must be >= 1")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be an even number >= 2")
        self.attention.validate()

    def bottleneck_shape(self, latent_hw: tuple[int, int]) -> tuple[int, int]:
        f = 2 ** self.depth
        if latent_hw[0] % f or latent_hw[1] % f:
            raise SizeError(f"latent dims {latent_hw} not divisible by 2^depth = {f}")
        return (latent_hw[0] // f, latent_hw[1] // f)


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sin/cos features of t at geometrically spaced frequencies; shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        torch.arange(half, dtype=t.dtype) * (-math.log(1000.0) / max(half - 1, 1))
    )
    args = t[:, None] * freqs[None, :] * 2 * math.pi
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class ConvBlock(nn.Module):
    """Two 3x3 convs with the time embedding added after the first."""

    def __init__(self, in_ch: int, out_ch: int, time_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.t_proj = nn.Linear(time_dim, out_ch)

    def forward(self, x, temb):
        h = F.silu(self.conv1(x) + self.t_proj(temb)[:, :, None, None])
        return F.silu(self.conv2(h))


class AttnBlock(nn.Module):
    """Multi-head self-attention over latent tokens with optional tumor bias."""

    def __init__(self, channels: int, cfg: AttentionConfig):
        super().__init__()
        self.cfg = cfg
        inner = cfg.heads * cfg.head_dim
        self.q = nn.Conv2d(channels, inner, 1)
        self.k = nn.Conv2d(channels, inner, 1)
        self.v = nn.Conv2d(channels, inner, 1)
        self.proj = nn.Conv2d(inner, channels, 1)

    def forward(self, x, mask=None):
        b, _, h, w = x.shape
        n = h * w

        def split(t):
            return t.reshape(b, self.cfg.heads, self.cfg.head_dim, n).transpose(-2, -1)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        out = tubam.attend(q, k, v, mask=mask, alpha=self.cfg.alpha_tumor)
        out = out.transpose(-2, -1).reshape(b, -1, h, w)
        return x + self.proj(out)


class Denoiser(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        td = cfg.time_embed_dim
        self.time_mlp = nn.Sequential(nn.Linear(td, td), nn.SiLU(), nn.Linear(td, td))
        self.in_conv = nn.Conv2d(cfg.in_channels, cfg.base_channels, 3, padding=1)

        ch = cfg.base_channels
        downs, skips = [], []
        for _ in range(cfg.depth):
            downs.append(ConvBlock(ch, ch * 2, td))
            skips.append(ch * 2)
            ch *= 2
        self.downs = nn.ModuleList(downs)
        self.mid = ConvBlock(ch, ch, td)
        # Constructed even when disabled so the config fully determines the
        # parameter table; the forward pass skips it when turned off.
        self.attn = AttnBlock(ch, cfg.attention)
        ups = []
        for skip_ch in reversed(skips):
            ups.append(ConvBlock(ch + skip_ch, skip_ch // 2, td))
            ch = skip_ch // 2
        self.ups = nn.ModuleList(ups)
        self.out_conv = nn.Conv2d(ch, cfg.in_channels, 3, padding=1)
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    def forward(self, z_t: torch.Tensor, t, mask: torch.Tensor | None = None) -> torch.Tensor:
        """Predict the drift field for latent state z_t at time t.

        z_t: (C, H, W) or (B, C, H, W); t: scalar or per-batch tensor;
        mask: optional binary latent mask at the bottleneck resolution,
        (H_b, W_b) or (B, H_b, W_b), routed to the attention block only.
        """
        single = z_t.dim() == 3
        x = z_t[None] if single else z_t
        if x.shape[1] != self.cfg.in_channels:
            raise SizeError(f"expected {self.cfg.in_channels} channels, got {x.shape[1]}")
        b = x.shape[0]
        t_vec = torch.as_tensor(t, dtype=x.dtype)
        if t_vec.dim() == 0:
            t_vec = t_vec.expand(b)
        temb = self.time_mlp(sinusoidal_embedding(t_vec, self.cfg.time_embed_dim))

        h = self.in_conv(x)
        skips = []
        for block in self.downs:
            h = block(h, temb)
            skips.append(h)
            h = F.avg_pool2d(h, 2)
        h = self.mid(h, temb)
        if self.cfg.attention_at_bottleneck:
            h = self.attn(h, mask=mask)
        for block, skip in zip(self.ups, reversed(skips)):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = block(torch.cat([h, skip], dim=1), temb)
        out = self.out_conv(h)
        return out[0] if single else out

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def init(cfg: DenoiserConfig, seed: int = 0) -> Denoiser:
    """Deterministically initialize a denoiser from (cfg, seed)."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return Denoiser(cfg)
