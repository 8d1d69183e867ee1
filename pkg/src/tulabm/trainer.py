"""End-to-end optimization of the combined latent/pixel/boundary objective.

The total loss is latent_mse + lambda_pixel * pixel_l1 + lambda_boundary *
boundary_l1. Ablations: `no_bl` zeroes the boundary term; `no_bl_no_tubam`
additionally withholds the tumor mask from the denoiser, disabling the
attention bias. Per-step RNG streams are keyed by (seed, step) so resuming
from a checkpoint is bit-deterministic.
"""

import hashlib
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import torch

from . import bridge
from .boundary import BoundaryConfig, boundary_weights
from .bridge import BridgeConfig
from .codec import Codec
from .denoiser import Denoiser, DenoiserConfig
from .metrics import MetricsReport
from .optim import AdamW
from .phantoms import PhantomPair
from .preprocess import mask_to_latent

logger = logging.getLogger(__name__)

ABLATIONS = ("full", "no_bl", "no_bl_no_tubam")


class TrainingDivergedError(RuntimeError):
    def __init__(self, report):
        super().__init__(f"non-finite loss at step {report.step}")
        self.report = report


class CodecMutatedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lambda_pixel: float = 18.0
    lambda_boundary: float = 14.0
    lr: float = 4e-5
    batch_size: int = 8
    steps: int = 2000
    seed: int = 0
    ablation: str = "full"
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    eps: float = 1e-8
    bridge: BridgeConfig = field(default_factory=BridgeConfig)
    boundary: BoundaryConfig = field(default_factory=BoundaryConfig)

    def validate(self) -> None:
        if self.lambda_pixel < 0 or self.lambda_boundary < 0:
            raise ValueError("loss weights must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}")
        self.bridge.validate()
        self.boundary.validate()

    @property
    def effective_lambda_boundary(self) -> float:
        return 0.0 if self.ablation in ("no_bl", "no_bl_no_tubam") else self.lambda_boundary

    @property
    def use_mask(self) -> bool:
        return self.ablation != "no_bl_no_tubam"


@dataclass(frozen=True)
class StepReport:
    step: int
    latent_loss: float
    pixel_loss: float
    boundary_loss: float
    total_loss: float
    wall_time: float


@dataclass
class PreparedData:
    """Dataset tensors precomputed once before the step loop."""

    x0: torch.Tensor        # (N, 1, H, W)
    x1: torch.Tensor        # (N, 1, H, W)
    weights: torch.Tensor   # (N, H, W) boundary weight maps
    latent_masks: torch.Tensor  # (N, Hb, Wb) masks at the attention resolution

    def __len__(self) -> int:
        return self.x0.shape[0]


def prepare(dataset: list[PhantomPair], cfg: TrainConfig, codec: Codec,
            denoiser_cfg: DenoiserConfig) -> PreparedData:
    x0 = torch.stack([torch.from_numpy(p.nc) for p in dataset])[:, None]
    x1 = torch.stack([torch.from_numpy(p.ce) for p in dataset])[:, None]
    weights = torch.stack([
        torch.as_tensor(boundary_weights(p.mask, cfg.boundary), dtype=torch.float32)
        for p in dataset
    ])
    hw = dataset[0].nc.shape
    _, hl, wl = codec.latent_shape(hw)
    hb, wb = denoiser_cfg.bottleneck_shape((hl, wl))
    latent_masks = torch.stack([
        torch.as_tensor(mask_to_latent(p.mask, (hb, wb)), dtype=torch.float32)
        for p in dataset
    ])
    return PreparedData(x0, x1, weights, latent_masks)


def step_seed(seed: int, step: int) -> int:
    h = hashlib.sha256(f"{seed}:{step}".encode()).digest()
    return int.from_bytes(h[:8], "little")


def compute_losses(model: Denoiser, codec: Codec, cfg: TrainConfig,
                   x0: torch.Tensor, x1: torch.Tensor, weights: torch.Tensor,
                   masks: torch.Tensor | None, t_vec: torch.Tensor,
                   eps: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor,
                                               torch.Tensor, torch.Tensor]:
    """Differentiable (latent, pixel, boundary, total) losses for one batch."""
    z0, z1 = codec.encode(x0), codec.encode(x1)
    z_t = bridge.interpolate(z0, z1, t_vec, cfg.bridge.sigma, eps)
    target = bridge.target_drift(z1, z_t, t_vec)

    v = model(z_t, t_vec, mask=masks if cfg.use_mask else None)

    latent = bridge.latent_loss(v, target)
    z1_hat = bridge.predict_terminal(v, z_t, t_vec)
    x1_hat = codec.decode(z1_hat)
    pixel = (x1_hat - x1).abs().mean()
    lam_b = cfg.effective_lambda_boundary
    if lam_b > 0:
        w = weights.to(x1.dtype)[:, None]
        bnd = (w * x1_hat - w * x1).abs().mean()
    else:
        bnd = torch.zeros((), dtype=x1.dtype)
    total = latent + cfg.lambda_pixel * pixel + lam_b * bnd
    return latent, pixel, bnd, total


def train_step(model: Denoiser, opt: AdamW, data: PreparedData, step: int,
               cfg: TrainConfig, codec: Codec) -> StepReport:
    """One optimization step over a freshly drawn batch; pure function of (params, seed, step)."""
    t0 = time.perf_counter()
    gen = torch.Generator().manual_seed(step_seed(cfg.seed, step))
    idx = torch.randint(len(data), (cfg.batch_size,), generator=gen)
    ts = torch.tensor(cfg.bridge.timesteps, dtype=torch.float32)
    t_vec = ts[torch.randint(len(ts), (cfg.batch_size,), generator=gen)]
    latent_shape = codec.latent_shape(data.x0.shape[-2:])
    eps = torch.randn((cfg.batch_size, *latent_shape), generator=gen, dtype=torch.float32)

    latent, pixel, bnd, total = compute_losses(
        model, codec, cfg, data.x0[idx], data.x1[idx], data.weights[idx],
        data.latent_masks[idx], t_vec, eps)
    lam_b = cfg.effective_lambda_boundary

    latent_val = float(latent.detach())
    pixel_val = float(pixel.detach())
    bnd_val = float(bnd.detach())
    report = StepReport(
        step=step,
        latent_loss=latent_val,
        pixel_loss=pixel_val,
        boundary_loss=bnd_val,
        total_loss=latent_val + cfg.lambda_pixel * pixel_val + lam_b * bnd_val,
        wall_time=0.0,
    )
    if not np.isfinite(report.total_loss):
        raise TrainingDivergedError(report)

    opt.zero_grad()
    total.backward()
    opt.step()
    return replace(report, wall_time=time.perf_counter() - t0)


def train(dataset: list[PhantomPair], cfg: TrainConfig, codec: Codec,
          model: Denoiser, opt: AdamW | None = None, start_step: int = 0,
          checkpoint_sink: Callable[[int, Denoiser, AdamW], None] | None = None,
          checkpoint_every: int = 0) -> tuple[AdamW, list[StepReport]]:
    """Run cfg.steps optimization steps; returns the optimizer and step reports.

    The codec must already be frozen; its parameters are hash-checked before
    and after the run. Passing the checkpointed optimizer and start_step
    resumes bit-deterministically.
    """
    cfg.validate()
    if not dataset:
        raise ValueError("dataset must be nonempty")
    codec_digest = codec.param_digest()
    data = prepare(dataset, cfg, codec, model.cfg)
    if opt is None:
        opt = AdamW(model.parameters(), lr=cfg.lr, betas=cfg.betas,
                    eps=cfg.eps, weight_decay=cfg.weight_decay)
    reports = []
    for step in range(start_step, cfg.steps):
        report = train_step(model, opt, data, step, cfg, codec)
        reports.append(report)
        if checkpoint_sink and checkpoint_every and (step + 1) % checkpoint_every == 0:
            checkpoint_sink(step + 1, model, opt)
        if step % 200 == 0:
            logger.info("step %d total=%.5f latent=%.5f pixel=%.5f boundary=%.5f",
                        step, report.total_loss, report.latent_loss,
                        report.pixel_loss, report.boundary_loss)
    if checkpoint_sink:
        checkpoint_sink(cfg.steps, model, opt)
    if codec.param_digest() != codec_digest:
        raise CodecMutatedError("codec parameters changed during bridge training")
    return opt, reports


def evaluate(model: Denoiser, dataset: list[PhantomPair], bridge_cfg: BridgeConfig,
             codec: Codec) -> MetricsReport:
    """Sample each pair from its NC image and score PSNR/SSIM, whole and tumor region.

    The drift function receives only (z, t): no inference path sees a mask.
    """
    report = MetricsReport()
    with torch.no_grad():
        x0 = torch.stack([torch.from_numpy(p.nc) for p in dataset])[:, None]
        z0 = codec.encode(x0)
        z1_hat = bridge.sample(z0, lambda z, t: model(z, t), bridge_cfg)
        x1_hat = codec.decode(z1_hat).clamp(0.0, 1.0)
    for i, pair in enumerate(dataset):
        pred = x1_hat[i, 0].numpy().astype(np.float64)
        report.add(pred, pair.ce.astype(np.float64), pair.mask)
    return report


def checkpoint_params(model: Denoiser, opt: AdamW | None = None,
                      codec: Codec | None = None) -> dict[str, np.ndarray]:
    """Flat name -> float32 array table for the checkpoint format."""
    out = {f"model.{k}": v.detach().cpu().numpy().astype(np.float32)
           for k, v in model.state_dict().items()}
    if opt is not None:
        out.update({f"opt.{k}": v.detach().cpu().numpy().astype(np.float32)
                    for k, v in opt.state_tensors().items()})
    if codec is not None:
        out.update({f"codec.{k}": v.detach().cpu().numpy().astype(np.float32)
                    for k, v in codec.state_dict().items()})
    return out


def load_checkpoint_params(params: dict[str, np.ndarray], model: Denoiser,
                           opt: AdamW | None = None, codec: Codec | None = None) -> None:
    model.load_state_dict({
        k[len("model."):]: torch.from_numpy(v.copy())
        for k, v in params.items() if k.startswith("model.")
    })
    if opt is not None:
        opt.load_state_tensors({
            k[len("opt."):]: torch.from_numpy(v.copy())
            for k, v in params.items() if k.startswith("opt.")
        })
    codec_entries = {k[len("codec."):]: torch.from_numpy(v.copy())
                     for k, v in params.items() if k.startswith("codec.")}
    if codec is not None and codec_entries:
        codec.load_state_dict(codec_entries)
