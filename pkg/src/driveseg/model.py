"""Full network assembly: encoder, context, decoder, refinement."""

from __future__ import annotations

import torch
import torch.nn as nn

from .aspp import AsppLite, AsppLiteSpec
from .backbone import Backbone
from .core import (ModelConfig, SegmentationOutput, check_divisible,
                   check_feature_map, validate_config)
from .decoder import AttentionDecoder, PlainUpsampleHead
from .refine import BoundaryRefiner, RbrmSpec

# The context fusion widens the deepest level 2x before the decoder.
CONTEXT_WIDTH_FACTOR = 2


class Segmenter(nn.Module):
    """Binary drivable-area segmentation network with ablation switches."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg = validate_config(cfg)
        enc = cfg.encoder_channels
        self.backbone = Backbone(cfg)

        if cfg.use_aspp:
            context_channels = enc[-1] * CONTEXT_WIDTH_FACTOR
            self.aspp = AsppLite(AsppLiteSpec(
                in_channels=enc[-1],
                out_channels=context_channels,
                filters_per_branch=cfg.aspp_filters,
                dilations=cfg.aspp_dilations,
            ))
        else:
            context_channels = enc[-1]
            self.aspp = None

        if cfg.use_apud:
            skip_channels = tuple(reversed(enc[:-1]))
            self.decoder = AttentionDecoder(
                context_channels, skip_channels, cfg.decoder_channels,
                cfg.num_classes)
        else:
            self.decoder = PlainUpsampleHead(
                context_channels, cfg.num_classes,
                total_stride=cfg.encoder_strides[-1])

        if cfg.use_rbrm:
            self.refine = BoundaryRefiner(RbrmSpec(
                in_channels=cfg.num_classes, out_channels=cfg.num_classes))
        else:
            self.refine = None

    @property
    def num_decoder_stages(self) -> int:
        return len(self.cfg.decoder_channels) if self.cfg.use_apud else 0

    def forward(self, x: torch.Tensor) -> SegmentationOutput:
        check_feature_map(x, channels=self.cfg.in_channels, name="model input")
        check_divisible(x, self.cfg.encoder_strides[-1], name="model input")
        pyramid = self.backbone(x)
        context = self.aspp(pyramid.deepest) if self.aspp is not None \
            else pyramid.deepest
        coarse, aux = self.decoder(context, pyramid)
        refined = self.refine(coarse) if self.refine is not None else None
        logits = refined if refined is not None else coarse
        out = SegmentationOutput(
            final_prob=torch.sigmoid(logits),
            coarse_logits=coarse,
            refined_logits=refined,
            aux_logits=aux,
        )
        out.validate(tuple(x.shape[-2:]), self.cfg.num_classes,
                     self.num_decoder_stages)
        return out


def build_model(cfg: ModelConfig, seed: int | None = None,
                dtype: torch.dtype = torch.float32) -> Segmenter:
    """Construct a Segmenter; seeding makes the initialization reproducible."""
    if seed is not None:
        torch.manual_seed(seed)
    model = Segmenter(cfg)
    if dtype is not torch.float32:
        model = model.to(dtype)
    return model
