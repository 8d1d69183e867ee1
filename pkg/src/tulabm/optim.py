"""Decoupled-weight-decay Adam (AdamW)."""

import torch
from torch.optim import Optimizer


class AdamW(Optimizer):
    def __init__(self, params, lr=4e-5, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        if lr <= 0:
            raise ValueError(f"invalid learning rate {lr}")
        defaults = dict(lr=lr, betas=betas, eps=eps, weight_decay=weight_decay)
        super().__init__(params, defaults)

    @torch.no_grad()
    def step(self, closure=None):
        loss = closure() if closure is not None else None
        for group in self.param_groups:
            beta1, beta2 = group["betas"]
            for p in group["params"]:
                if p.grad is None:
                    continue
                grad = p.grad
                state = self.state[p]
                if len(state) == 0:
                    state["step"] = 0
                    state["exp_avg"] = torch.zeros_like(p)
                    state["exp_avg_sq"] = torch.zeros_like(p)
                exp_avg, exp_avg_sq = state["exp_avg"], state["exp_avg_sq"]
                state["step"] += 1

                exp_avg.mul_(beta1).add_(grad, alpha=1 - beta1)
                exp_avg_sq.mul_(beta2).addcmul_(grad, grad, value=1 - beta2)

                bias_correction1 = 1 - beta1 ** state["step"]
                bias_correction2 = 1 - beta2 ** state["step"]
                denom = (exp_avg_sq.sqrt() / (bias_correction2 ** 0.5)).add_(group["eps"])

                if group["weight_decay"] != 0:
                    p.mul_(1 - group["lr"] * group["weight_decay"])
                p.addcdiv_(exp_avg, denom, value=-group["lr"] / bias_correction1)
        return loss

    def state_tensors(self) -> dict[str, torch.Tensor]:
        """Flat snapshot of moment buffers and step counts, for checkpointing."""
        out = {}
        i = 0
        for group in self.param_groups:
            for p in group["params"]:
                state = self.state.get(p, {})
                if state:
                    out[f"{i}.step"] = torch.tensor(float(state["step"]))
                    out[f"{i}.exp_avg"] = state["exp_avg"]
                    out[f"{i}.exp_avg_sq"] = state["exp_avg_sq"]
                i += 1
        return out

    def load_state_tensors(self, tensors: dict[str, torch.Tensor]) -> None:
        i = 0
        for group in self.param_groups:
            for p in group["params"]:
                if f"{i}.step" in tensors:
                    self.state[p] = {
                        "step": int(tensors[f"{i}.step"].item()),
                        "exp_avg": tensors[f"{i}.exp_avg"].clone().to(p.dtype),
                        "exp_avg_sq": tensors[f"{i}.exp_avg_sq"].clone().to(p.dtype),
                    }
                i += 1
