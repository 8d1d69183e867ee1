"""Intensity normalization, centered padding, and mask projection to latent resolution."""

from dataclasses import dataclass

import numpy as np


class SizeError(ValueError):
    """Raised on incompatible spatial dimensions."""


@dataclass(frozen=True)
class NormalizeConfig:
    lo_percentile: float = 0.001
    hi_percentile: float = 0.999
    pad_to: int = 64

    def validate(self) -> None:
        if not 0.0 <= self.lo_percentile < self.hi_percentile <= 1.0:
            raise ValueError(
                f"need 0 <= lo < hi <= 1, got ({self.lo_percentile}, {self.hi_percentile})"
            )


def nearest_rank_percentile(values: np.ndarray, p: float) -> float:
    """Nearest-rank percentile over the flattened value multiset (rank = ceil(p*N), min 1)."""
    flat = np.sort(values, axis=None)
    rank = max(1, int(np.ceil(p * flat.size)))
    return float(flat[rank - 1])


def normalize(img: np.ndarray, cfg: NormalizeConfig = NormalizeConfig()) -> np.ndarray:
    """Clip to [p_lo, p_hi] nearest-rank percentiles, then rescale affinely to [0, 1].

    A degenerate image with p_lo == p_hi maps to all zeros.
    """
    cfg.validate()
    if img.size == 0:
        raise SizeError("empty image")
    lo = nearest_rank_percentile(img, cfg.lo_percentile)
    hi = nearest_rank_percentile(img, cfg.hi_percentile)
    if hi <= lo:
        return np.zeros_like(img, dtype=img.dtype)
    out = (np.clip(img, lo, hi) - lo) / (hi - lo)
    return out.astype(img.dtype)


def pad(img: np.ndarray, to: int | tuple[int, int]) -> tuple[np.ndarray, tuple[int, int]]:
    """Center `img` in a zero canvas of shape `to`; returns (padded, (row_off, col_off))."""
    th, tw = (to, to) if isinstance(to, int) else to
    h, w = img.shape
    if th < h or tw < w:
        raise SizeError(f"cannot pad {img.shape} into ({th}, {tw})")
    r0 = (th - h) // 2
    c0 = (tw - w) // 2
    out = np.zeros((th, tw), dtype=img.dtype)
    out[r0:r0 + h, c0:c0 + w] = img
    return out, (r0, c0)


def crop_back(padded: np.ndarray, offsets: tuple[int, int], shape: tuple[int, int]) -> np.ndarray:
    """Exact inverse of pad for the recorded offsets and original shape."""
    r0, c0 = offsets
    h, w = shape
    return padded[r0:r0 + h, c0:c0 + w].copy()


def mask_to_latent(mask: np.ndarray, latent_dims: tuple[int, int]) -> np.ndarray:
    """Block-wise max-pool of a binary mask down to latent resolution.

    A latent cell is 1 iff any pixel it covers is 1, so small tumors survive
    the downsampling. Mask dims must divide evenly by the latent dims.
    """
    hl, wl = latent_dims
    h, w = mask.shape
    if h % hl != 0 or w % wl != 0:
        raise SizeError(f"mask shape {mask.shape} not divisible by latent dims {latent_dims}")
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask must be binary")
    blocks = mask.reshape(hl, h // hl, wl, w // wl)
    return blocks.max(axis=(1, 3)).astype(np.uint8)
