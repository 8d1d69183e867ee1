"""Image <-> latent codecs: identity, block-pooled, and a small learned autoencoder.

The bridge runs in the codec's latent space; codec parameters are frozen
during bridge training.
"""

import hashlib
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .preprocess import SizeError


class CodecUsageError(RuntimeError):
    """Raised when an operation is invalid for the codec mode."""


@dataclass(frozen=True)
class CodecConfig:
    mode: str = "pooled"  # identity | pooled | learned
    downscale_factor: int = 4
    latent_channels: int = 1

    def validate(self) -> None:
        if self.mode not in ("identity", "pooled", "learned"):
            raise ValueError(f"unknown codec mode {self.mode!r}")
        if self.downscale_factor < 1:
            raise ValueError("downscale_factor must be >= 1")
        if self.mode == "identity" and (self.downscale_factor != 1 or self.latent_channels != 1):
            raise ValueError("identity mode requires downscale_factor=1 and latent_channels=1")
        if self.mode == "pooled" and self.latent_channels != 1:
            raise ValueError("pooled mode is single-channel")


def _as_batch(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if x.dim() == 2:
        return x[None, None], True
    if x.dim() == 4:
        return x, False
    raise SizeError(f"expected (H, W) or (B, 1, H, W), got shape {tuple(x.shape)}")


class Codec(nn.Module):
    """Base codec: encode (B,1,H,W) -> (B,C,Hl,Wl) and decode back."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg

    def encode(self, img: torch.Tensor) -> torch.Tensor:
        x, single = _as_batch(img)
        if x.shape[-1] % self.cfg.downscale_factor or x.shape[-2] % self.cfg.downscale_factor:
            raise SizeError(
                f"image dims {tuple(x.shape[-2:])} not divisible by factor {self.cfg.downscale_factor}"
            )
        z = self._encode(x)
        return z[0] if single else z

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        single = z.dim() == 3
        zb = z[None] if single else z
        if zb.shape[1] != self.cfg.latent_channels:
            raise SizeError(f"latent has {zb.shape[1]} channels, expected {self.cfg.latent_channels}")
        x = self._decode(zb)
        return x[0, 0] if single else x

    def latent_shape(self, image_hw: tuple[int, int]) -> tuple[int, int, int]:
        f = self.cfg.downscale_factor
        return (self.cfg.latent_channels, image_hw[0] // f, image_hw[1] // f)

    def param_digest(self) -> str:
        h = hashlib.sha256()
        for name, p in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().tobytes())
        return h.hexdigest()

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad_(False)


class IdentityCodec(Codec):
    def __init__(self):
        super().__init__(CodecConfig(mode="identity", downscale_factor=1, latent_channels=1))

    def _encode(self, x):
        return x

    def _decode(self, z):
        return z


class PooledCodec(Codec):
    """Block-mean downsampling; decode is nearest-neighbor upsampling."""

    def __init__(self, factor: int = 4):
        super().__init__(CodecConfig(mode="pooled", downscale_factor=factor, latent_channels=1))

    def _encode(self, x):
        return F.avg_pool2d(x, self.cfg.downscale_factor)

    def _decode(self, z):
        f = self.cfg.downscale_factor
        return z.repeat_interleave(f, dim=-2).repeat_interleave(f, dim=-1)


class LearnedCodec(Codec):
    """Tiny convolutional autoencoder (no KL term), trained by pretrain_codec."""

    def __init__(self, factor: int = 2, channels: int = 4, seed: int = 0):
        super().__init__(CodecConfig(mode="learned", downscale_factor=factor, latent_channels=channels))
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.enc = nn.Sequential(
                nn.Conv2d(1, 8, 3, padding=1),
                nn.SiLU(),
                nn.Conv2d(8, channels, factor, stride=factor),
            )
            self.dec = nn.Sequential(
                nn.ConvTranspose2d(channels, 8, factor, stride=factor),
                nn.SiLU(),
                nn.Conv2d(8, 1, 3, padding=1),
            )

    def _encode(self, x):
        return self.enc(x)

    def _decode(self, z):
        return self.dec(z)


def make_codec(mode: str, factor: int = 4, channels: int = 4, seed: int = 0) -> Codec:
    if mode == "identity":
        return IdentityCodec()
    if mode == "pooled":
        return PooledCodec(factor)
    if mode == "learned":
        return LearnedCodec(factor=factor, channels=channels, seed=seed)
    raise ValueError(f"unknown codec mode {mode!r}")


def pretrain_codec(
    codec: Codec,
    images: list[np.ndarray] | list[torch.Tensor],
    steps: int,
    lr: float = 1e-3,
    batch_size: int = 16,
    seed: int = 0,
) -> list[float]:
    """Minimize L2 reconstruction of `codec` over `images`; freezes it afterward.

    Returns the per-step loss curve. Deterministic for a fixed seed.
    """
    if codec.cfg.mode != "learned":
        raise CodecUsageError("pretrain_codec requires a learned codec")
    from .optim import AdamW

    data = torch.stack([torch.as_tensor(np.asarray(im), dtype=torch.float32) for im in images])
    data = data[:, None]  # (N, 1, H, W)
    opt = AdamW(codec.parameters(), lr=lr, weight_decay=0.0)
    gen = torch.Generator().manual_seed(seed)
    losses = []
    for _ in range(steps):
        idx = torch.randint(len(data), (batch_size,), generator=gen)
        batch = data[idx]
        recon = codec._decode(codec._encode(batch))
        loss = F.mse_loss(recon, batch)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
    codec.freeze()
    return losses
