"""Flat key-value experiment configuration.

A config file holds ``namespace.field = value`` lines with namespaces
``model``, ``trainer``, ``loss``, and ``data``; the same dotted keys work
as command-line overrides. Serialization round-trips field-for-field.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .core import (ConfigError, ModelConfig, apply_flat_to_dataclass,
                   format_flat, parse_flat, validate_config)
from .data import DataConfig
from .losses import LossParams
from .trainer import TrainConfig

NAMESPACES = ("model", "trainer", "loss", "data")


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    trainer: TrainConfig = field(default_factory=TrainConfig)
    loss: LossParams = field(default_factory=LossParams)
    data: DataConfig = field(default_factory=DataConfig)

    def to_flat(self) -> dict[str, object]:
        flat: dict[str, object] = {}
        for ns in NAMESPACES:
            obj = getattr(self, ns)
            for f in fields(obj):
                flat[f"{ns}.{f.name}"] = getattr(obj, f.name)
        return flat

    def dump(self) -> str:
        return format_flat(self.to_flat())


def experiment_from_flat(flat: dict[str, str]) -> ExperimentConfig:
    for key in flat:
        ns = key.split(".", 1)[0]
        if ns not in NAMESPACES or "." not in key:
            raise ConfigError(
                f"unknown config key {key!r} (namespaces: {NAMESPACES})")
    base = ExperimentConfig()
    return ExperimentConfig(
        model=validate_config(apply_flat_to_dataclass(base.model, "model", flat)),
        trainer=apply_flat_to_dataclass(base.trainer, "trainer", flat),
        loss=apply_flat_to_dataclass(base.loss, "loss", flat),
        data=apply_flat_to_dataclass(base.data, "data", flat),
    )


def load_experiment_config(path: str | Path | None,
                           overrides: list[str] | None = None) -> ExperimentConfig:
    """Load a config file (optional) and apply ``key=value`` overrides."""
    flat: dict[str, str] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        flat = parse_flat(path.read_text(encoding="utf-8"), source=str(path))
    for override in overrides or []:
        if "=" not in override:
            raise ConfigError(
                f"override {override!r} must look like namespace.field=value")
        key, value = override.split("=", 1)
        flat[key.strip()] = value.strip()
    return experiment_from_flat(flat)


def write_resolved_config(cfg: ExperimentConfig, out_dir: str | Path) -> Path:
    """Reproducibility snapshot every command drops in its output dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "resolved_config.cfg"
    path.write_text(cfg.dump(), encoding="utf-8")
    return path
