"""Cross-stage-partial convolutional encoder.

A stride-2 stem followed by four downsampling stages. Each stage splits its
channels in half: one half runs through residual bottlenecks, the other
bypasses, and a 1x1 convolution fuses the re-concatenated halves. The
encoder emits a five-level pyramid at strides 2, 4, 8, 16, 32.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .core import (ConfigError, FeaturePyramid, ModelConfig,
                   check_divisible, check_feature_map, validate_config)
from .layers import ConvBNAct

# Bottleneck count per stage for the default small variant.
STAGE_BLOCKS = (1, 2, 2, 1)


@dataclass
class CspStageSpec:
    out_channels: int
    num_blocks: int
    stride: int = 2

    def __post_init__(self):
        if self.out_channels % 2:
            raise ConfigError(
                f"stage out_channels must be even for the channel split, "
                f"got {self.out_channels}")


class Bottleneck(nn.Module):
    """1x1 reduce, 3x3 expand, residual add, ReLU."""

    def __init__(self, channels: int):
        super().__init__()
        self.reduce = ConvBNAct(channels, channels, kernel_size=1)
        self.conv = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.bn = nn.BatchNorm2d(channels)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act(x + self.bn(self.conv(self.reduce(x))))


class CspBlock(nn.Module):
    """Channel-split block: half transformed, half bypassed, 1x1 fused.

    The first half of the channels runs through ``num_blocks`` residual
    bottlenecks; the second half bypasses untouched. The halves are
    concatenated (transformed first) and fused back to ``out_channels``.
    """

    def __init__(self, in_channels: int, out_channels: int, num_blocks: int = 1):
        super().__init__()
        if in_channels % 2:
            raise ConfigError(
                f"csp block needs even in_channels to split, got {in_channels}")
        self.in_channels = in_channels
        self.half = in_channels // 2
        self.bottlenecks = nn.Sequential(
            *[Bottleneck(self.half) for _ in range(num_blocks)])
        self.fuse = ConvBNAct(in_channels, out_channels, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_feature_map(x, channels=self.in_channels, name="csp block input")
        transformed, bypass = x[:, :self.half], x[:, self.half:]
        transformed = self.bottlenecks(transformed)
        return self.fuse(torch.cat([transformed, bypass], dim=1))


class CspStage(nn.Module):
    """Stride-2 downsampling conv followed by cross-stage-partial blocks."""

    def __init__(self, in_channels: int, spec: CspStageSpec):
        super().__init__()
        self.down = ConvBNAct(in_channels, spec.out_channels, kernel_size=3,
                              stride=spec.stride)
        self.blocks = nn.Sequential(
            *[CspBlock(spec.out_channels, spec.out_channels)
              for _ in range(spec.num_blocks)])

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.blocks(self.down(x))


class Backbone(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg = validate_config(cfg)
        channels = cfg.encoder_channels
        self.in_channels = cfg.in_channels
        self.out_channels = tuple(channels)
        self.strides = tuple(cfg.encoder_strides)
        self.stem = ConvBNAct(cfg.in_channels, channels[0], kernel_size=3, stride=2)
        self.stages = nn.ModuleList()
        for i, (out_ch, blocks) in enumerate(zip(channels[1:], STAGE_BLOCKS)):
            self.stages.append(CspStage(channels[i], CspStageSpec(out_ch, blocks)))

    def forward(self, x: torch.Tensor) -> FeaturePyramid:
        check_feature_map(x, channels=self.in_channels, name="backbone input")
        check_divisible(x, self.strides[-1], name="backbone input")
        levels = []
        feat = self.stem(x)
        levels.append((self.strides[0], feat))
        for stride, stage in zip(self.strides[1:], self.stages):
            feat = stage(feat)
            levels.append((stride, feat))
        pyramid = FeaturePyramid(levels)
        pyramid.validate_against_input(tuple(x.shape[-2:]))
        for (stride, fmap), expect in zip(pyramid.levels, self.out_channels):
            check_feature_map(fmap, channels=expect,
                              name=f"pyramid level stride {stride}")
        return pyramid


def build_backbone(cfg: ModelConfig) -> Backbone:
    return Backbone(cfg)
