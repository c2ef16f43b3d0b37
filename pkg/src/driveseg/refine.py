"""Residual boundary refinement.

A small secondary encoder-decoder that reads the coarse segmentation
logits and predicts an additive residual. The encoder halves resolution
with stride-2 convolutions while doubling channels; the decoder walks back
up with bilinear upsampling plus the matching encoder skip at every level.
The final 1x1 head is zero-initialized, so at initialization the module is
an exact identity on the logits.

Also provides ``boundary_error_map``, an evaluation aid that measures how
much of a prediction's error mass sits near the ground-truth boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
from scipy import ndimage

from .core import ConfigError, ShapeError, check_feature_map
from .layers import ConvBNAct


@dataclass
class RbrmSpec:
    in_channels: int = 1
    out_channels: int = 1
    depth: int = 4
    base_channels: int = 16

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")


class BoundaryRefiner(nn.Module):
    """Predicts ``refined = coarse + residual(coarse)``."""

    def __init__(self, spec: RbrmSpec):
        super().__init__()
        self.spec = spec
        widths = [spec.base_channels * (2 ** i) for i in range(spec.depth)]
        self.encoder = nn.ModuleList()
        in_ch = spec.in_channels
        for width in widths:
            self.encoder.append(ConvBNAct(in_ch, width, kernel_size=3, stride=2))
            in_ch = width
        self.up = nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False)
        # Each decoder level reduces to the width of the skip it will add.
        self.decoder = nn.ModuleList()
        for width in reversed(widths[:-1]):
            self.decoder.append(ConvBNAct(in_ch, width, kernel_size=3))
            in_ch = width
        self.out_conv = ConvBNAct(in_ch, in_ch, kernel_size=3)
        self.head = nn.Conv2d(in_ch, spec.out_channels, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def residual(self, coarse: torch.Tensor) -> torch.Tensor:
        skips = []
        feat = coarse
        for enc in self.encoder:
            feat = enc(feat)
            skips.append(feat)
        for dec, skip in zip(self.decoder, reversed(skips[:-1])):
            feat = self.up(dec(feat)) + skip
        feat = self.up(self.out_conv(feat))
        return self.head(feat)

    def forward(self, coarse_logits: torch.Tensor) -> torch.Tensor:
        check_feature_map(coarse_logits, channels=self.spec.in_channels,
                          name="refiner input")
        h, w = coarse_logits.shape[-2:]
        div = 2 ** self.spec.depth
        if h % div or w % div:
            raise ShapeError(
                f"refiner input spatial ({h}, {w}) not divisible by {div}")
        return coarse_logits + self.residual(coarse_logits)


def boundary_error_map(pred_mask: np.ndarray, gt_mask: np.ndarray,
                       radius: int) -> float:
    """Fraction of misclassified pixels within ``radius`` of the gt boundary.

    Boundary pixels are those with at least one 4-neighbor of differing
    value in the ground truth; "within radius" uses Chebyshev (chessboard)
    distance. Returns 0.0 when the prediction is perfect.
    """
    pred = np.asarray(pred_mask).astype(bool)
    gt = np.asarray(gt_mask).astype(bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    if radius < 1:
        raise ConfigError(f"radius must be >= 1, got {radius}")
    errors = pred != gt
    n_errors = int(errors.sum())
    if n_errors == 0:
        return 0.0
    boundary = _boundary_pixels(gt)
    if not boundary.any():
        return 0.0
    dist = ndimage.distance_transform_cdt(~boundary, metric="chessboard")
    near = dist <= radius
    return float((errors & near).sum()) / n_errors


def _boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Pixels whose value differs from at least one 4-neighbor."""
    boundary = np.zeros_like(mask, dtype=bool)
    boundary[:-1, :] |= mask[:-1, :] != mask[1:, :]
    boundary[1:, :] |= mask[1:, :] != mask[:-1, :]
    boundary[:, :-1] |= mask[:, :-1] != mask[:, 1:]
    boundary[:, 1:] |= mask[:, 1:] != mask[:, :-1]
    return boundary
