"""Training loop: AdamW, reduce-on-plateau LR, early stopping, checkpoints.

The monitored metric (validation mIoU by default) drives both schedules:
the learning rate is multiplied by ``lr_reduce_factor`` after
``lr_reduce_patience`` consecutive epochs without improvement, and training
stops after ``patience`` consecutive epochs without improvement. The best
checkpoint by monitor value is kept.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .core import (ConfigError, DataError, ModelConfig, NumericsError,
                   validate_config)
from .data import DataConfig, DatasetBundle, iterate_batches
from .losses import LossParams, total_loss
from .metrics import MetricsReport, build_report
from .model import Segmenter, build_model

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-2
    batch_size: int = 4
    max_epochs: int = 200
    patience: int = 20
    lr_reduce_factor: float = 0.5
    lr_reduce_patience: int = 5
    seed: int = 0
    monitor: str = "val_miou"            # or "train_miou"
    monitor_goal: Optional[float] = None  # stop once monitor reaches this
    precision: str = "float32"           # or "float64"

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.patience <= self.lr_reduce_patience:
            raise ConfigError(
                f"patience ({self.patience}) must exceed lr_reduce_patience "
                f"({self.lr_reduce_patience})")
        if self.monitor not in ("val_miou", "train_miou"):
            raise ConfigError(f"unknown monitor {self.monitor!r}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"unknown precision {self.precision!r}")

    @property
    def dtype(self) -> torch.dtype:
        return torch.float64 if self.precision == "float64" else torch.float32


@dataclass
class TrainState:
    """Bookkeeping for plateau scheduling and early stopping."""

    epoch: int = 0
    best_monitor_value: float = -math.inf
    epochs_since_improvement: int = 0
    lr_stagnant_epochs: int = 0
    current_lr: float = 0.0
    rng_state: object = None

    def update(self, value: float, patience: int,
               lr_reduce_patience: int) -> tuple[bool, bool, bool]:
        """Record one epoch's monitor value.

        Returns (improved, reduce_lr, stop). Counters reset exactly when the
        monitor strictly improves; the LR counter also resets after each
        reduction so reductions happen every ``lr_reduce_patience`` stagnant
        epochs, not every epoch thereafter.
        """
        improved = value > self.best_monitor_value
        if improved:
            self.best_monitor_value = value
            self.epochs_since_improvement = 0
            self.lr_stagnant_epochs = 0
            return True, False, False
        self.epochs_since_improvement += 1
        self.lr_stagnant_epochs += 1
        stop = self.epochs_since_improvement >= patience
        reduce_lr = not stop and self.lr_stagnant_epochs >= lr_reduce_patience
        if reduce_lr:
            self.lr_stagnant_epochs = 0
        return False, reduce_lr, stop


def make_checkpoint(model: Segmenter, optimizer, state: TrainState,
                    model_cfg: ModelConfig) -> dict:
    state.rng_state = torch.get_rng_state()
    return {
        "version": CHECKPOINT_VERSION,
        "model_config": model_cfg.to_dict(),
        "model_state": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "train_state": asdict(state),
    }


def save_checkpoint(checkpoint: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(checkpoint, path)
    return path


def load_checkpoint(path: str | Path) -> dict:
    checkpoint = torch.load(path, map_location="cpu", weights_only=False)
    version = checkpoint.get("version")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(
            f"checkpoint version {version!r} unsupported "
            f"(expected {CHECKPOINT_VERSION})")
    return checkpoint


def model_from_checkpoint(checkpoint: dict,
                          dtype: torch.dtype = torch.float32) -> Segmenter:
    cfg = validate_config(ModelConfig.from_dict(checkpoint["model_config"]))
    model = build_model(cfg, dtype=dtype)
    state = {k: v.to(dtype) for k, v in checkpoint["model_state"].items()}
    model.load_state_dict(state)
    model.eval()
    return model


def evaluate(model: Segmenter, dataset, data_cfg: DataConfig | None = None,
             batch_size: int = 4, threshold: float = 0.5) -> MetricsReport:
    """Deterministic full-split report at a fixed threshold plus max-F sweep."""
    if len(dataset) == 0:
        raise DataError("cannot evaluate an empty split")
    data_cfg = data_cfg or DataConfig()
    dtype = next(model.parameters()).dtype
    was_training = model.training
    model.eval()
    pairs = []
    with torch.no_grad():
        for batch in iterate_batches(dataset, data_cfg, batch_size, dtype):
            out = model(batch.images)
            probs = out.final_prob.cpu().numpy()
            gts = batch.masks.cpu().numpy()
            for i in range(probs.shape[0]):
                pairs.append((probs[i, 0], gts[i, 0].astype(np.uint8)))
    if was_training:
        model.train()
    return build_report(pairs, threshold=threshold)


def train(model_cfg: ModelConfig, train_cfg: TrainConfig,
          dataset: DatasetBundle, loss_params: LossParams | None = None,
          data_cfg: DataConfig | None = None,
          out_dir: str | Path | None = None) -> tuple[dict, list[dict]]:
    """Run the full loop; returns (best checkpoint, per-epoch history).

    When ``out_dir`` is given, the best checkpoint is written to
    ``best.ckpt`` and history to ``history.log`` (one JSON record per line).
    """
    model_cfg = validate_config(model_cfg)
    loss_params = loss_params or LossParams()
    data_cfg = data_cfg or DataConfig()
    dataset.non_empty("train", "val")

    dtype = train_cfg.dtype
    model = build_model(model_cfg, seed=train_cfg.seed, dtype=dtype)
    optimizer = torch.optim.AdamW(model.parameters(), lr=train_cfg.lr,
                                  weight_decay=train_cfg.weight_decay)
    state = TrainState(current_lr=train_cfg.lr)
    history: list[dict] = []
    best_checkpoint: dict | None = None

    for epoch in range(1, train_cfg.max_epochs + 1):
        state.epoch = epoch
        model.train()
        shuffle_rng = np.random.default_rng((train_cfg.seed, epoch))
        augment_rng = np.random.default_rng((train_cfg.seed, epoch, 1)) \
            if (data_cfg.hflip or data_cfg.brightness_jitter > 0) else None
        sums = {"total": 0.0, "dice": 0.0, "focal": 0.0, "aux": 0.0}
        n_batches = 0
        for step, batch in enumerate(iterate_batches(
                dataset.train, data_cfg, train_cfg.batch_size, dtype,
                shuffle_rng=shuffle_rng, augment_rng=augment_rng)):
            optimizer.zero_grad()
            out = model(batch.images)
            loss, components = total_loss(out, batch.masks, loss_params)
            if not torch.isfinite(loss):
                raise NumericsError(
                    f"non-finite loss at epoch {epoch} step {step}: "
                    f"{components}")
            loss.backward()
            optimizer.step()
            for key in sums:
                sums[key] += components[key]
            n_batches += 1

        record = {"epoch": epoch, "lr": state.current_lr}
        for key, value in sums.items():
            record[f"loss_{key}"] = value / max(n_batches, 1)

        val_report = evaluate(model, dataset.val, data_cfg,
                              train_cfg.batch_size)
        record["val_miou"] = val_report.aggregate["miou"]
        record["val_f1"] = val_report.aggregate["f1"]
        if train_cfg.monitor == "train_miou":
            train_report = evaluate(model, dataset.train, data_cfg,
                                    train_cfg.batch_size)
            record["train_miou"] = train_report.aggregate["miou"]
        monitor_value = record[train_cfg.monitor]

        improved, reduce_lr, stop = state.update(
            monitor_value, train_cfg.patience, train_cfg.lr_reduce_patience)
        if improved:
            best_checkpoint = make_checkpoint(model, optimizer, state, model_cfg)
        if reduce_lr:
            state.current_lr *= train_cfg.lr_reduce_factor
            for group in optimizer.param_groups:
                group["lr"] = state.current_lr
        record["monitor"] = monitor_value
        record["best_monitor"] = state.best_monitor_value
        history.append(record)
        log.info("epoch %d: loss=%.4f %s=%.4f lr=%.2e", epoch,
                 record["loss_total"], train_cfg.monitor, monitor_value,
                 state.current_lr)

        reached_goal = (train_cfg.monitor_goal is not None
                        and monitor_value >= train_cfg.monitor_goal)
        if stop or reached_goal:
            break

    if best_checkpoint is None:
        best_checkpoint = make_checkpoint(model, optimizer, state, model_cfg)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(best_checkpoint, out_dir / "best.ckpt")
        write_history(history, out_dir / "history.log")
    return best_checkpoint, history


def write_history(history: list[dict], path: str | Path) -> None:
    import json
    with open(path, "w", encoding="utf-8") as fh:
        for record in history:
            fh.write(json.dumps(record) + "\n")
