"""Distance-to-boundary maps, exponential boundary weights, and the boundary-aware loss.

The boundary set is the tumor pixels with at least one non-tumor 4-neighbor;
the image border counts as non-tumor, so tumors touching the edge keep full
weight there.
"""

from dataclasses import dataclass

import numpy as np
import torch
from scipy.ndimage import distance_transform_edt


@dataclass(frozen=True)
class BoundaryConfig:
    d_max: int = 8
    tau: float = 0.25
    norm: str = "l1"  # l1 | l2

    def validate(self) -> None:
        if self.d_max < 1:
            raise ValueError("d_max must be >= 1")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.norm not in ("l1", "l2"):
            raise ValueError(f"unknown norm {self.norm!r}")


def _check_binary(mask: np.ndarray) -> np.ndarray:
    m = np.asarray(mask)
    if not np.isin(m, (0, 1)).all():
        raise ValueError("mask must be binary")
    return m.astype(bool)


def boundary_set(mask: np.ndarray) -> np.ndarray:
    """Tumor pixels with a non-tumor 4-neighbor (image border counts as non-tumor)."""
    m = _check_binary(mask)
    padded = np.pad(m, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return m & ~interior


def distance_map(mask: np.ndarray, d_max: int = 8) -> np.ndarray:
    """Normalized Euclidean distance of each tumor pixel to the nearest boundary pixel.

    Distances are clipped to d_max and divided by d_max; non-tumor pixels get 0.
    """
    m = _check_binary(mask)
    out = np.zeros(m.shape, dtype=np.float64)
    if not m.any():
        return out
    b = boundary_set(m)
    # EDT of the complement of the boundary set = distance to nearest boundary pixel.
    dist = distance_transform_edt(~b)
    out[m] = np.minimum(dist[m], d_max) / d_max
    return out


def distance_map_bruteforce(mask: np.ndarray, d_max: int = 8) -> np.ndarray:
    """O(P * |B|) all-pairs oracle for distance_map; exact reference."""
    m = _check_binary(mask)
    out = np.zeros(m.shape, dtype=np.float64)
    if not m.any():
        return out
    b_coords = np.argwhere(boundary_set(m)).astype(np.float64)
    p_coords = np.argwhere(m).astype(np.float64)
    d2 = ((p_coords[:, None, :] - b_coords[None, :, :]) ** 2).sum(axis=-1)
    dist = np.sqrt(d2.min(axis=1))
    out[m] = np.minimum(dist, d_max) / d_max
    return out


def boundary_weights(mask: np.ndarray, cfg: BoundaryConfig = BoundaryConfig()) -> np.ndarray:
    """w(p) = exp(-D(p)/tau) * m(p): 1 on the tumor boundary, decaying inward."""
    cfg.validate()
    m = _check_binary(mask)
    d = distance_map(m, cfg.d_max)
    return np.exp(-d / cfg.tau) * m


def boundary_loss(pred: torch.Tensor, target: torch.Tensor,
                  weights: torch.Tensor | np.ndarray, norm: str = "l1") -> torch.Tensor:
    """Configured norm between W*pred and W*target, mean-reduced over all pixels."""
    w = torch.as_tensor(np.asarray(weights), dtype=pred.dtype) \
        if not isinstance(weights, torch.Tensor) else weights
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    diff = w * pred - w * target
    if norm == "l1":
        return diff.abs().mean()
    if norm == "l2":
        return (diff ** 2).mean()
    raise ValueError(f"unknown norm {norm!r}")
