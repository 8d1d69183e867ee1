"""Self-attention with an additive tumor-bias term on the logits.

The bias alpha * m~ m~^T reinforces interactions between tumor tokens; it is
supplied only during training (the caller omits the mask at inference).
"""

from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class AttentionConfig:
    alpha_tumor: float = 0.5
    head_dim: int = 32
    heads: int = 2

    def validate(self) -> None:
        if self.alpha_tumor < 0:
            raise ValueError("alpha_tumor must be >= 0")
        if self.head_dim < 1 or self.heads < 1:
            raise ValueError("head_dim and heads must be >= 1")


def _flat_mask(mask: torch.Tensor, n: int) -> torch.Tensor:
    m = mask.reshape(*mask.shape[:-2], -1) if mask.dim() >= 2 else mask
    if m.shape[-1] != n:
        raise ValueError(f"mask has {m.shape[-1]} tokens, expected {n}")
    if not bool(((m == 0) | (m == 1)).all()):
        raise ValueError("mask must be binary")
    return m.to(torch.get_default_dtype()) if not m.is_floating_point() else m


def bias_matrix(mask: torch.Tensor, alpha: float) -> torch.Tensor:
    """alpha * outer(m~, m~): entry (i, j) is alpha iff tokens i and j are both tumor."""
    m = _flat_mask(mask.reshape(-1), mask.numel())
    return alpha * (m[:, None] * m[None, :])


def attend(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
           mask: torch.Tensor | None = None, alpha: float = 0.5) -> torch.Tensor:
    """Scaled dot-product attention with optional tumor-biased logits.

    q, k, v have shape (..., N, d); mask, when present, is a binary field with
    N tokens (leading dims broadcast against the batch dims of q). Softmax uses
    per-row max subtraction, which leaves the output unchanged.
    """
    if q.shape != k.shape or q.shape[:-1] != v.shape[:-1]:
        raise ValueError(f"inconsistent shapes q{tuple(q.shape)} k{tuple(k.shape)} v{tuple(v.shape)}")
    n, d = q.shape[-2], q.shape[-1]
    logits = q @ k.transpose(-2, -1) / (d ** 0.5)
    if mask is not None and alpha != 0.0:
        m = _flat_mask(mask, n).to(logits.dtype)
        bias = alpha * (m[..., :, None] * m[..., None, :])
        while bias.dim() < logits.dim():
            bias = bias.unsqueeze(-3)  # broadcast over heads / leading batch dims
        logits = logits + bias
    logits = logits - logits.max(dim=-1, keepdim=True).values
    weights = torch.softmax(logits, dim=-1)
    return weights @ v
