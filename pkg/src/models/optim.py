"""
Adam configuration and update helpers.
"""
from dataclasses import dataclass, asdict
from typing import Any, Dict, Iterable, List

import torch


@dataclass(frozen=True)
class AdamConfig:
    """Learning rates per network and shared Adam moments settings."""
    lr_value: float = 1e-3
    lr_costate: float = 1e-3
    lr_policy: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        for name in ("lr_value", "lr_costate", "lr_policy", "eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")

    def lr_for(self, net_name: str) -> float:
        return {"value": self.lr_value, "costate": self.lr_costate, "policy": self.lr_policy}[net_name]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def make_adam(params: Iterable[torch.nn.Parameter], lr: float, cfg: AdamConfig) -> torch.optim.Adam:
    """Adam optimizer with the configured moments; no weight decay, no amsgrad."""
    return torch.optim.Adam(list(params), lr=lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)


def adam_step(
    params: List[torch.nn.Parameter],
    grads: List[torch.Tensor],
    optimizer: torch.optim.Optimizer,
) -> None:
    """
    Apply one bias-corrected Adam update from explicit gradients.

    The optimizer holds the moment accumulators and the step counter.
    """
    if len(params) != len(grads):
        raise ValueError(f"got {len(grads)} gradients for {len(params)} parameters")
    for param, grad in zip(params, grads):
        if param.shape != grad.shape:
            raise ValueError(f"gradient shape {tuple(grad.shape)} != parameter shape {tuple(param.shape)}")
        param.grad = grad.detach().clone()
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)
