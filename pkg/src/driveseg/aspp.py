"""Lightweight multi-scale context module.

Parallel 3x3 convolutions at increasing dilation rates (default 1, 6, 12)
with 128 filters each, BN+ReLU, concatenated and fused by a 1x1 convolution.
There is deliberately no global-average-pooling branch: pooling to 1x1 and
broadcasting back blurs exactly the border detail this model cares about.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import ConfigError, ShapeError, check_feature_map
from .layers import ConvBNAct


@dataclass
class AsppLiteSpec:
    in_channels: int
    out_channels: int
    filters_per_branch: int = 128
    dilations: tuple[int, ...] = (1, 6, 12)

    def __post_init__(self):
        if not self.dilations:
            raise ConfigError("dilations must be nonempty")
        if any(d < 1 for d in self.dilations):
            raise ConfigError(f"dilations must all be >= 1, got {list(self.dilations)}")


def dilated_conv(x: torch.Tensor, weights: torch.Tensor, dilation: int,
                 bias: torch.Tensor | None = None) -> torch.Tensor:
    """3x3 convolution with padding equal to the dilation rate.

    Output spatial dims equal the input's; the effective receptive field is
    (2*dilation + 1) squared.
    """
    if dilation < 1:
        raise ConfigError(f"dilation must be >= 1, got {dilation}")
    if tuple(weights.shape[-2:]) != (3, 3):
        raise ShapeError(f"expected a 3x3 kernel, got {tuple(weights.shape[-2:])}")
    check_feature_map(x, channels=weights.shape[1], name="dilated conv input")
    return F.conv2d(x, weights, bias, padding=dilation, dilation=dilation)


class AsppLite(nn.Module):
    """Dilated-branch context head over the deepest encoder level."""

    def __init__(self, spec: AsppLiteSpec):
        super().__init__()
        self.spec = spec
        # Branch order is fixed by ascending dilation rate.
        dilations = sorted(spec.dilations)
        self.branches = nn.ModuleList([
            ConvBNAct(spec.in_channels, spec.filters_per_branch, kernel_size=3,
                      dilation=d)
            for d in dilations
        ])
        concat_channels = spec.filters_per_branch * len(dilations)
        self.fuse = ConvBNAct(concat_channels, spec.out_channels, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_feature_map(x, channels=self.spec.in_channels, name="context input")
        outs = [branch(x) for branch in self.branches]
        fused = self.fuse(torch.cat(outs, dim=1))
        if fused.shape[-2:] != x.shape[-2:]:
            raise ShapeError(
                f"context module changed spatial dims: {tuple(x.shape[-2:])} -> "
                f"{tuple(fused.shape[-2:])}")
        return fused


def build_aspp(in_channels: int, out_channels: int, filters: int = 128,
               dilations: tuple[int, ...] = (1, 6, 12)) -> AsppLite:
    return AsppLite(AsppLiteSpec(in_channels, out_channels, filters, tuple(dilations)))
