"""Attention-guided progressive upsampling decoder.

Each stage projects the deeper stream and the encoder skip to a common
width with 1x1 convolutions, bilinearly upsamples the deeper stream 2x,
sums the two, applies channel attention then spatial attention, and
finishes with a 3x3 conv. Every stage also emits auxiliary logits at its
native resolution so intermediate predictions can be inspected or
supervised.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .core import FeaturePyramid, ShapeError, check_feature_map
from .layers import ConvBNAct

SE_REDUCTION = 16
SPATIAL_KERNEL = 7


@dataclass
class ApudStage:
    in_channels: int
    skip_channels: int
    out_channels: int
    upsample_factor: int = 2
    se_reduction: int = SE_REDUCTION


class SqueezeExcitation(nn.Module):
    """Channel gates: sigmoid(W2 @ relu(W1 @ global_avg_pool(x))).

    The bottleneck uses 1x1 convolutions on the pooled [B, C, 1, 1] map;
    unlike a Linear layer this keeps per-sample results bit-identical
    across batch sizes.
    """

    def __init__(self, channels: int, reduction: int = SE_REDUCTION):
        super().__init__()
        reduced = max(channels // reduction, 4)
        self.channels = channels
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc1 = nn.Conv2d(channels, reduced, 1)
        self.act = nn.ReLU(inplace=True)
        self.fc2 = nn.Conv2d(reduced, channels, 1)
        self.gate = nn.Sigmoid()

    def gates(self, x: torch.Tensor) -> torch.Tensor:
        """Per-channel gate vector in (0, 1), shape [B, C]."""
        squeezed = self.pool(x)
        return self.gate(self.fc2(self.act(self.fc1(squeezed)))).flatten(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_feature_map(x, channels=self.channels, name="se input")
        g = self.gates(x)
        return x * g.unsqueeze(-1).unsqueeze(-1)


class SpatialAttention(nn.Module):
    """Single-channel mask from channel-max and channel-mean cues."""

    def __init__(self, kernel_size: int = SPATIAL_KERNEL):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2,
                              bias=False)
        self.gate = nn.Sigmoid()

    def mask(self, x: torch.Tensor) -> torch.Tensor:
        """Spatial mask in (0, 1), shape [B, 1, H, W]."""
        cues = torch.cat([x.amax(dim=1, keepdim=True),
                          x.mean(dim=1, keepdim=True)], dim=1)
        return self.gate(self.conv(cues))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_feature_map(x, name="spatial attention input")
        return x * self.mask(x)


class DecoderStage(nn.Module):
    """One 2x upsampling step with skip fusion and both attentions."""

    def __init__(self, stage: ApudStage, num_classes: int):
        super().__init__()
        self.stage = stage
        self.below_proj = ConvBNAct(stage.in_channels, stage.out_channels,
                                    kernel_size=1)
        self.up = nn.Upsample(scale_factor=stage.upsample_factor,
                              mode="bilinear", align_corners=False)
        self.skip_proj = ConvBNAct(stage.skip_channels, stage.out_channels,
                                   kernel_size=1)
        self.se = SqueezeExcitation(stage.out_channels, stage.se_reduction)
        self.spatial = SpatialAttention()
        self.fuse = ConvBNAct(stage.out_channels, stage.out_channels,
                              kernel_size=3)
        self.aux_head = nn.Conv2d(stage.out_channels, num_classes, 1)

    def forward(self, below: torch.Tensor,
                skip: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        check_feature_map(below, channels=self.stage.in_channels, name="below")
        check_feature_map(skip, channels=self.stage.skip_channels, name="skip")
        factor = self.stage.upsample_factor
        expect = (below.shape[-2] * factor, below.shape[-1] * factor)
        if tuple(skip.shape[-2:]) != expect:
            raise ShapeError(
                f"skip spatial {tuple(skip.shape[-2:])} is not exactly "
                f"{factor}x the deeper stream {tuple(below.shape[-2:])}")
        fused = self.up(self.below_proj(below)) + self.skip_proj(skip)
        fused = self.se(fused)
        fused = self.spatial(fused)
        out = self.fuse(fused)
        return out, self.aux_head(out)


class AttentionDecoder(nn.Module):
    """Chain of decoder stages from the deepest stride up to stride 2.

    Consumes the context map (stride 32) plus encoder skips at strides
    16, 8, 4, 2 and produces full-resolution logits together with the
    per-stage auxiliary logits ordered deep to shallow.
    """

    def __init__(self, context_channels: int, skip_channels: tuple[int, ...],
                 decoder_channels: tuple[int, ...], num_classes: int):
        super().__init__()
        if len(skip_channels) != len(decoder_channels):
            raise ShapeError(
                f"{len(skip_channels)} skips vs {len(decoder_channels)} stages")
        self.stages = nn.ModuleList()
        in_ch = context_channels
        for skip_ch, out_ch in zip(skip_channels, decoder_channels):
            self.stages.append(
                DecoderStage(ApudStage(in_ch, skip_ch, out_ch), num_classes))
            in_ch = out_ch
        self.final_up = nn.Upsample(scale_factor=2, mode="bilinear",
                                    align_corners=False)
        self.head = nn.Conv2d(decoder_channels[-1], num_classes, 1)

    def forward(self, context: torch.Tensor,
                pyramid: FeaturePyramid) -> tuple[torch.Tensor, list[torch.Tensor]]:
        # Skips pair with stages deepest-first: strides 16, 8, 4, 2.
        skip_strides = pyramid.strides[-2::-1]
        feat = context
        aux = []
        for stage, stride in zip(self.stages, skip_strides):
            feat, stage_aux = stage(feat, pyramid.at_stride(stride))
            aux.append(stage_aux)
        coarse = self.head(self.final_up(feat))
        return coarse, aux


class PlainUpsampleHead(nn.Module):
    """Ablation fallback: 1x1 head and a straight bilinear blow-up.

    The 1x1 conv runs at the deepest resolution before upsampling; a 1x1
    conv and bilinear interpolation commute, so this matches upsampling
    first at a fraction of the memory.
    """

    def __init__(self, in_channels: int, num_classes: int, total_stride: int = 32):
        super().__init__()
        self.head = nn.Conv2d(in_channels, num_classes, 1)
        self.up = nn.Upsample(scale_factor=total_stride, mode="bilinear",
                              align_corners=False)

    def forward(self, context: torch.Tensor,
                pyramid: FeaturePyramid) -> tuple[torch.Tensor, list[torch.Tensor]]:
        return self.up(self.head(context)), []
