"""Shared tensor contracts, model configuration, and the error taxonomy.

Feature maps are plain ``torch.Tensor`` objects laid out ``[batch, channels,
height, width]``; the helpers here assert that contract at module boundaries
instead of wrapping tensors in a new type.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Optional

import torch

MAX_STRIDE = 32
ENCODER_STRIDES = (2, 4, 8, 16, 32)


class DrivesegError(Exception):
    """Base class for all package errors."""


class ConfigError(DrivesegError):
    """A configuration invariant is violated."""


class ShapeError(DrivesegError):
    """A tensor does not satisfy its shape contract."""


class FormatError(DrivesegError):
    """A text input (manifest, config file) is malformed."""


class DecodeError(DrivesegError):
    """An image file cannot be decoded."""


class DataError(DrivesegError):
    """A dataset is unusable (e.g. an empty split)."""


class NumericsError(DrivesegError):
    """Training produced a non-finite value."""


class LayoutError(DrivesegError):
    """A dataset directory does not match the expected layout."""


def check_feature_map(x: torch.Tensor, channels: Optional[int] = None,
                      name: str = "input") -> torch.Tensor:
    """Assert that ``x`` is a 4-D [B, C, H, W] map with positive dims."""
    if not isinstance(x, torch.Tensor):
        raise ShapeError(f"{name}: expected a tensor, got {type(x).__name__}")
    if x.dim() != 4:
        raise ShapeError(f"{name}: expected 4-D [B, C, H, W], got {tuple(x.shape)}")
    if min(x.shape) < 1:
        raise ShapeError(f"{name}: all dims must be >= 1, got {tuple(x.shape)}")
    if channels is not None and x.shape[1] != channels:
        raise ShapeError(
            f"{name}: expected {channels} channels, got {x.shape[1]} "
            f"(shape {tuple(x.shape)})")
    return x


def check_divisible(x: torch.Tensor, divisor: int, name: str = "input") -> torch.Tensor:
    """Assert spatial dims of ``x`` are divisible by ``divisor``."""
    h, w = x.shape[-2], x.shape[-1]
    if h % divisor != 0 or w % divisor != 0:
        raise ShapeError(
            f"{name}: spatial dims ({h}, {w}) not divisible by {divisor}")
    return x


def check_same_shape(a: torch.Tensor, b: torch.Tensor,
                     names: tuple[str, str] = ("a", "b")) -> None:
    if a.shape != b.shape:
        raise ShapeError(
            f"{names[0]} shape {tuple(a.shape)} != {names[1]} shape {tuple(b.shape)}")


@dataclass
class FeaturePyramid:
    """Ordered multi-scale encoder outputs: (stride, map) with strides increasing."""

    levels: list[tuple[int, torch.Tensor]]

    def __post_init__(self):
        strides = [s for s, _ in self.levels]
        if any(b <= a for a, b in zip(strides, strides[1:])):
            raise ShapeError(f"pyramid strides must strictly increase, got {strides}")
        for stride, fmap in self.levels:
            if stride < 1 or stride & (stride - 1):
                raise ShapeError(f"stride {stride} is not a power of two")
            check_feature_map(fmap, name=f"pyramid level stride {stride}")

    @property
    def strides(self) -> list[int]:
        return [s for s, _ in self.levels]

    def at_stride(self, stride: int) -> torch.Tensor:
        for s, fmap in self.levels:
            if s == stride:
                return fmap
        raise ShapeError(f"no pyramid level at stride {stride}; have {self.strides}")

    @property
    def deepest(self) -> torch.Tensor:
        return self.levels[-1][1]

    def validate_against_input(self, input_hw: tuple[int, int]) -> None:
        """Every level must sit at exactly input_dims / stride."""
        h, w = input_hw
        for stride, fmap in self.levels:
            expect = (h // stride, w // stride)
            got = tuple(fmap.shape[-2:])
            if h % stride or w % stride or got != expect:
                raise ShapeError(
                    f"level at stride {stride}: expected spatial {expect}, got {got}")


@dataclass
class ModelConfig:
    """Architecture switches and widths for the segmentation network."""

    in_channels: int = 3
    num_classes: int = 1
    encoder_channels: tuple[int, ...] = (32, 64, 128, 192, 256)
    encoder_strides: tuple[int, ...] = ENCODER_STRIDES
    use_aspp: bool = True
    use_apud: bool = True
    use_rbrm: bool = True
    aspp_filters: int = 128
    aspp_dilations: tuple[int, ...] = (1, 6, 12)
    decoder_channels: tuple[int, ...] = (256, 128, 64, 32)
    input_size: tuple[int, int] = (512, 512)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        kwargs = dict(d)
        for key in ("encoder_channels", "encoder_strides", "aspp_dilations",
                    "decoder_channels", "input_size"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def validate_config(cfg: ModelConfig) -> ModelConfig:
    """Check every ModelConfig invariant; return a normalized copy.

    Normalization: sequences become tuples and an over-long decoder channel
    list is truncated to the number of upsampling stages. Violations raise
    ConfigError naming the offending field.
    """
    cfg = replace(
        cfg,
        encoder_channels=tuple(cfg.encoder_channels),
        encoder_strides=tuple(cfg.encoder_strides),
        aspp_dilations=tuple(cfg.aspp_dilations),
        decoder_channels=tuple(cfg.decoder_channels),
        input_size=tuple(cfg.input_size),
    )
    if cfg.in_channels < 1:
        raise ConfigError(f"in_channels must be >= 1, got {cfg.in_channels}")
    if cfg.num_classes < 1:
        raise ConfigError(f"num_classes must be >= 1, got {cfg.num_classes}")
    if cfg.encoder_strides != ENCODER_STRIDES:
        raise ConfigError(
            f"encoder_strides are fixed at {list(ENCODER_STRIDES)}, "
            f"got {list(cfg.encoder_strides)}")
    n_levels = len(ENCODER_STRIDES)
    if len(cfg.encoder_channels) != n_levels:
        raise ConfigError(
            f"encoder_channels needs {n_levels} entries (one per stride), "
            f"got {len(cfg.encoder_channels)}")
    if any(c < 1 for c in cfg.encoder_channels):
        raise ConfigError("encoder_channels must all be >= 1")
    if any(c % 2 for c in cfg.encoder_channels[1:]):
        raise ConfigError(
            "stage channels must be even (the cross-stage split halves them); "
            f"got {list(cfg.encoder_channels)}")
    h, w = cfg.input_size
    if h % MAX_STRIDE or w % MAX_STRIDE:
        raise ConfigError(
            f"input_size {cfg.input_size} not divisible by {MAX_STRIDE}")
    if not cfg.aspp_dilations:
        raise ConfigError("aspp_dilations must be nonempty")
    if any(d < 1 for d in cfg.aspp_dilations):
        raise ConfigError(f"aspp_dilations must all be >= 1, got {list(cfg.aspp_dilations)}")
    if cfg.aspp_filters < 1:
        raise ConfigError(f"aspp_filters must be >= 1, got {cfg.aspp_filters}")
    if cfg.use_rbrm and not cfg.use_apud:
        raise ConfigError(
            "use_rbrm requires use_apud (refinement consumes the attention "
            "decoder's output)")
    n_stages = n_levels - 1
    if len(cfg.decoder_channels) > n_stages:
        cfg = replace(cfg, decoder_channels=cfg.decoder_channels[:n_stages])
    if len(cfg.decoder_channels) != n_stages:
        raise ConfigError(
            f"decoder_channels needs {n_stages} entries, got {len(cfg.decoder_channels)}")
    if any(c < 1 for c in cfg.decoder_channels):
        raise ConfigError("decoder_channels must all be >= 1")
    return cfg


@dataclass
class SegmentationOutput:
    """Full forward-pass result.

    final_prob     [B, num_classes, H, W] in [0, 1]
    coarse_logits  pre-refinement logits at full resolution
    refined_logits present only when boundary refinement is enabled
    aux_logits     one map per decoder stage (deep to shallow), native resolution
    """

    final_prob: torch.Tensor
    coarse_logits: torch.Tensor
    refined_logits: Optional[torch.Tensor] = None
    aux_logits: list[torch.Tensor] = field(default_factory=list)

    def validate(self, input_hw: tuple[int, int], num_classes: int,
                 n_stages: int) -> None:
        check_feature_map(self.final_prob, channels=num_classes, name="final_prob")
        if tuple(self.final_prob.shape[-2:]) != tuple(input_hw):
            raise ShapeError(
                f"final_prob spatial {tuple(self.final_prob.shape[-2:])} != "
                f"input {tuple(input_hw)}")
        probs = self.final_prob.detach()
        lo = float(probs.min())
        hi = float(probs.max())
        if lo < 0.0 or hi > 1.0:
            raise ShapeError(f"final_prob values outside [0, 1]: [{lo}, {hi}]")
        if len(self.aux_logits) != n_stages:
            raise ShapeError(
                f"expected {n_stages} aux maps, got {len(self.aux_logits)}")


def format_flat(items: dict[str, object]) -> str:
    """Render a flat key-value document (one ``key = value`` line per entry)."""
    lines = []
    for key, value in items.items():
        lines.append(f"{key} = {format_value(value)}")
    return "\n".join(lines) + "\n"


def format_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def parse_flat(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse a flat key-value document into raw string values.

    Lines are ``key = value``; ``#`` starts a comment; blank lines are
    ignored. Malformed lines raise FormatError with their line number.
    """
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise FormatError(f"{source}:{lineno}: empty key")
        out[key] = value.strip()
    return out


def coerce_value(raw: str, annotation: object, key: str) -> object:
    """Convert a raw config string to the type named by a dataclass field."""
    text = str(annotation)
    try:
        if "Optional[float]" in text or text == "float | None":
            return None if raw.lower() in ("none", "") else float(raw)
        if "tuple[int" in text or "Sequence[int]" in text or "list[int]" in text:
            return tuple(int(v.strip()) for v in raw.split(",") if v.strip())
        if "tuple[float" in text or "list[float]" in text:
            return tuple(float(v.strip()) for v in raw.split(",") if v.strip())
        if annotation in (bool, "bool"):
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if annotation in (int, "int"):
            return int(raw)
        if annotation in (float, "float"):
            return float(raw)
        if annotation in (str, "str"):
            return raw
    except ValueError as exc:
        raise ConfigError(f"config key '{key}': cannot parse {raw!r} as {text}") from exc
    raise ConfigError(f"config key '{key}': unsupported field type {text}")


def apply_flat_to_dataclass(obj, prefix: str, flat: dict[str, str]):
    """Apply ``prefix.field = value`` entries from ``flat`` onto a dataclass copy."""
    updates = {}
    by_name = {f.name: f for f in fields(obj)}
    for key, raw in flat.items():
        if not key.startswith(prefix + "."):
            continue
        name = key[len(prefix) + 1:]
        if name not in by_name:
            raise ConfigError(
                f"unknown config key '{key}' (valid {prefix} fields: "
                f"{sorted(by_name)})")
        updates[name] = coerce_value(raw, by_name[name].type, key)
    return replace(obj, **updates) if updates else obj
