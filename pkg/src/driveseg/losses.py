"""Training objective: soft overlap loss, focal loss, and their weighted sum.

All losses take probabilities in [0, 1] and binary {0, 1} targets of the
same shape and reduce to a scalar. The combined objective optionally adds
the same weighted pair on each auxiliary decoder output against a
nearest-neighbor-downsampled target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .core import ConfigError, SegmentationOutput, check_same_shape


@dataclass
class LossParams:
    alpha: float = 0.25       # focal class-balance factor
    gamma: float = 2.0        # focal focusing exponent
    lambda1: float = 1.0      # overlap-loss weight
    lambda2: float = 1.0      # focal-loss weight
    aux_weight: float = 0.0   # 0 keeps auxiliary outputs observe-only
    epsilon: float = 1e-6

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        for name in ("gamma", "lambda1", "lambda2", "aux_weight"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0.0):
                raise ConfigError(f"{name} must be finite and >= 0, got {value}")


def dice_loss(probs: torch.Tensor, target: torch.Tensor,
              eps: float = 1e-6) -> torch.Tensor:
    """1 - (2*sum(p*g) + eps) / (sum(p^2) + sum(g^2) + eps).

    The smoothing term defines the all-background case (loss 0) and keeps
    gradients finite; the value always lies in [0, 1].
    """
    check_same_shape(probs, target, ("probs", "target"))
    p = probs.reshape(-1)
    g = target.reshape(-1)
    intersection = (p * g).sum()
    denom = (p * p).sum() + (g * g).sum()
    return 1.0 - (2.0 * intersection + eps) / (denom + eps)


def focal_loss(probs: torch.Tensor, target: torch.Tensor, alpha: float = 0.25,
               gamma: float = 2.0, eps: float = 1e-6) -> torch.Tensor:
    """Mean per-pixel focal term; hard pixels dominate as gamma grows."""
    check_same_shape(probs, target, ("probs", "target"))
    p = probs.clamp(eps, 1.0 - eps)
    g = target
    pos = -alpha * g * (1.0 - p).pow(gamma) * torch.log(p)
    neg = -(1.0 - alpha) * (1.0 - g) * p.pow(gamma) * torch.log(1.0 - p)
    return (pos + neg).mean()


def total_loss(out: SegmentationOutput, target: torch.Tensor,
               params: LossParams) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted sum lambda1*overlap + lambda2*focal, plus auxiliary terms.

    With ``aux_weight > 0`` every decoder stage output contributes the same
    weighted pair against the target downsampled (nearest-neighbor, so
    labels stay binary) to that stage's resolution. Returns the scalar and
    a per-component breakdown.
    """
    check_same_shape(out.final_prob, target, ("final_prob", "target"))
    d = dice_loss(out.final_prob, target, params.epsilon)
    f = focal_loss(out.final_prob, target, params.alpha, params.gamma,
                   params.epsilon)
    total = params.lambda1 * d + params.lambda2 * f
    components = {"dice": float(d.detach()), "focal": float(f.detach()), "aux": 0.0}
    if params.aux_weight > 0.0 and out.aux_logits:
        aux_sum = out.final_prob.new_zeros(())
        for logits in out.aux_logits:
            small = F.interpolate(target, size=logits.shape[-2:], mode="nearest")
            probs = torch.sigmoid(logits)
            aux_sum = aux_sum + params.lambda1 * dice_loss(probs, small, params.epsilon) \
                + params.lambda2 * focal_loss(probs, small, params.alpha,
                                              params.gamma, params.epsilon)
        total = total + params.aux_weight * aux_sum
        components["aux"] = float(aux_sum.detach())
    components["total"] = float(total.detach())
    return total, components
