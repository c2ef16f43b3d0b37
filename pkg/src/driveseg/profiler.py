"""Analytic parameter/FLOP counting, FPS measurement, ablation table.

FLOP conventions (documented because they vary across reports):
  - FLOPs = 2 x multiply-accumulates.
  - Conv2d: MACs = k_h*k_w*(C_in/groups)*C_out*H_out*W_out, plus
    C_out*H_out*W_out FLOPs when a bias is present.
  - Linear: MACs = in_features*out_features, plus out_features for bias.
  - BatchNorm2d (inference, affine): 2 FLOPs per element.
  - ReLU: 1 FLOP per element. Sigmoid: 4 FLOPs per element.
  - Bilinear upsample: 8 FLOPs per output element (4 taps).
  - Global average pool: 1 FLOP per input element.
  - Attention gating: channel max/mean cues cost 2 FLOPs per input element
    and applying a gate costs 1, so spatial attention adds 3 per element
    and channel attention adds 1 on top of its hooked pool/linear/sigmoid.

Parameter counts cover learnable parameters only (BatchNorm running
statistics are buffers and excluded). FPS is measured single-image, as
a deployment-style figure, on an otherwise idle process.
"""

from __future__ import annotations

import platform
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn as nn

from .core import ModelConfig, validate_config
from .decoder import SpatialAttention, SqueezeExcitation
from .model import Segmenter, build_model

VARIANT_FLAGS = (
    ("base", dict(use_aspp=False, use_apud=False, use_rbrm=False)),
    ("+context", dict(use_aspp=True, use_apud=False, use_rbrm=False)),
    ("+context+decoder", dict(use_aspp=True, use_apud=True, use_rbrm=False)),
    ("+context+decoder+refine", dict(use_aspp=True, use_apud=True, use_rbrm=True)),
)


@dataclass
class ProfileCount:
    total: int
    per_module: dict[str, int] = field(default_factory=dict)


def count_parameters(model: nn.Module) -> ProfileCount:
    """Learnable-parameter tally grouped by top-level submodule."""
    per_module: dict[str, int] = {}
    total = 0
    for name, param in model.named_parameters():
        if not param.requires_grad:
            continue
        top = name.split(".", 1)[0]
        per_module[top] = per_module.get(top, 0) + param.numel()
        total += param.numel()
    return ProfileCount(total=total, per_module=per_module)


def _conv_flops(m: nn.Conv2d, x: torch.Tensor, y: torch.Tensor) -> int:
    kh, kw = m.kernel_size
    macs = kh * kw * (m.in_channels // m.groups) * m.out_channels \
        * y.shape[-2] * y.shape[-1]
    flops = 2 * macs
    if m.bias is not None:
        flops += m.out_channels * y.shape[-2] * y.shape[-1]
    return flops * y.shape[0]


def _linear_flops(m: nn.Linear, x: torch.Tensor, y: torch.Tensor) -> int:
    batch = int(np.prod(x.shape[:-1]))
    flops = 2 * m.in_features * m.out_features
    if m.bias is not None:
        flops += m.out_features
    return flops * batch


def _bn_flops(m, x, y) -> int:
    return 2 * x.numel()


def _relu_flops(m, x, y) -> int:
    return x.numel()


def _sigmoid_flops(m, x, y) -> int:
    return 4 * x.numel()


def _upsample_flops(m, x, y) -> int:
    return 8 * y.numel()


def _gap_flops(m, x, y) -> int:
    return x.numel()


FLOP_FORMULAS = {
    nn.Conv2d: _conv_flops,
    nn.Linear: _linear_flops,
    nn.BatchNorm2d: _bn_flops,
    nn.ReLU: _relu_flops,
    nn.Sigmoid: _sigmoid_flops,
    nn.Upsample: _upsample_flops,
    nn.AdaptiveAvgPool2d: _gap_flops,
}

# Cue pooling and gate application use tensor ops rather than submodules;
# the hooked pool/linear/sigmoid children are counted separately.
EXTRA_FORMULAS = {
    SpatialAttention: lambda m, x, y: 3 * x.numel(),
    SqueezeExcitation: lambda m, x, y: x.numel(),
}


def flops_of(module: nn.Module, x: torch.Tensor) -> ProfileCount:
    """Hooked forward pass applying the closed-form per-layer formulas."""
    flops_by_path: dict[str, int] = {}
    handles = []

    def add_hook(path: str, mod: nn.Module, formula):
        def hook(m, inputs, output):
            inp = inputs[0]
            out = output if isinstance(output, torch.Tensor) else output[0]
            flops_by_path[path] = flops_by_path.get(path, 0) + formula(m, inp, out)
        handles.append(mod.register_forward_hook(hook))

    for path, mod in module.named_modules():
        cls = type(mod)
        if cls in FLOP_FORMULAS:
            add_hook(path, mod, FLOP_FORMULAS[cls])
        elif cls in EXTRA_FORMULAS:
            add_hook(path, mod, EXTRA_FORMULAS[cls])

    was_training = module.training
    module.eval()
    with torch.no_grad():
        module(x)
    for handle in handles:
        handle.remove()
    if was_training:
        module.train()

    per_module: dict[str, int] = {}
    total = 0
    for path, flops in flops_by_path.items():
        top = path.split(".", 1)[0] if path else "<self>"
        per_module[top] = per_module.get(top, 0) + flops
        total += flops
    return ProfileCount(total=total, per_module=per_module)


def count_flops(model: Segmenter, input_size: tuple[int, int] | None = None) -> ProfileCount:
    """Analytic FLOPs of one full forward pass at the given input size."""
    if input_size is None:
        input_size = model.cfg.input_size
    dtype = next(model.parameters()).dtype
    x = torch.zeros(1, model.cfg.in_channels, *input_size, dtype=dtype)
    return flops_of(model, x)


@dataclass
class FpsStats:
    mean_fps: float
    p50: float
    p95: float
    hardware: str
    iters: int


def measure_fps(model: Segmenter, input_size: tuple[int, int] | None = None,
                warmup: int = 5, iters: int = 30) -> FpsStats:
    """Wall-clock single-image throughput after warmup."""
    if iters < 10:
        raise ValueError(f"iters must be >= 10, got {iters}")
    if input_size is None:
        input_size = model.cfg.input_size
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    x = torch.zeros(1, model.cfg.in_channels, *input_size, dtype=dtype)
    times = []
    with torch.no_grad():
        for _ in range(warmup):
            model(x)
        for _ in range(iters):
            start = time.perf_counter()
            model(x)
            times.append(time.perf_counter() - start)
    if was_training:
        model.train()
    fps = np.sort(1.0 / np.asarray(times))
    hardware = f"{platform.machine()} cpu x{torch.get_num_threads()} threads"
    return FpsStats(
        mean_fps=float(len(times) / sum(times)),
        p50=float(np.percentile(fps, 50)),
        p95=float(np.percentile(fps, 95)),
        hardware=hardware,
        iters=iters,
    )


def ablation_variants(cfg: ModelConfig) -> list[tuple[str, ModelConfig]]:
    """The four-step chain from bare encoder to the full model."""
    cfg = validate_config(cfg)
    return [(name, replace(cfg, **flags)) for name, flags in VARIANT_FLAGS]


def ablation_table(cfg: ModelConfig, input_size: tuple[int, int] | None = None,
                   measure: bool = False, warmup: int = 3,
                   iters: int = 10) -> list[dict]:
    """Params/GFLOPs (and optionally FPS) for each ablation variant."""
    rows = []
    for name, variant_cfg in ablation_variants(cfg):
        model = build_model(variant_cfg, seed=0)
        model.eval()
        size = input_size or variant_cfg.input_size
        row = {
            "variant": name,
            "params": count_parameters(model).total,
            "gflops": count_flops(model, size).total / 1e9,
        }
        if measure:
            stats = measure_fps(model, size, warmup=warmup, iters=iters)
            row["fps"] = stats.mean_fps
            row["hardware"] = stats.hardware
        rows.append(row)
    return rows


def render_table(rows: list[dict]) -> str:
    """Aligned text table with Variant / Params / FPS / GFLOPs columns."""
    headers = ["Variant", "Params", "FPS", "GFLOPs"]
    table = [headers]
    for row in rows:
        table.append([
            row["variant"],
            f"{row['params']:,}",
            f"{row['fps']:.1f}" if "fps" in row else "-",
            f"{row['gflops']:.2f}",
        ])
    extra = [key for key in rows[0] if key not in
             ("variant", "params", "fps", "gflops", "hardware")] if rows else []
    for key in extra:
        table[0].append(key)
        for i, row in enumerate(rows, start=1):
            value = row.get(key)
            table[i].append(f"{value:.4f}" if isinstance(value, float) else str(value))
    widths = [max(len(r[c]) for r in table) for c in range(len(table[0]))]
    lines = []
    for i, row in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
