"""Overfit the full model on the 8-image toy set and report metrics.

Usage: python scripts/overfit_toy.py [out_dir]
"""

import sys
import time
from pathlib import Path

from driveseg import LossParams, ModelConfig, TrainConfig, evaluate, train
from driveseg.data import DataConfig, build_dataset
from driveseg.trainer import model_from_checkpoint

out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("runs/overfit_toy")

model_cfg = ModelConfig(input_size=(64, 64))
data_cfg = DataConfig(toy_size=(64, 64), toy_count=8, toy_val_count=4,
                      toy_test_count=4, toy_seed=7)
train_cfg = TrainConfig(lr=3e-3, batch_size=4, max_epochs=200,
                        monitor="train_miou", monitor_goal=0.95, seed=0)

dataset = build_dataset(data_cfg, model_cfg.input_size)
start = time.perf_counter()
checkpoint, history = train(model_cfg, train_cfg, dataset, LossParams(),
                            data_cfg, out_dir=out_dir)
elapsed = time.perf_counter() - start

model = model_from_checkpoint(checkpoint)
for split in ("train", "val", "test"):
    report = evaluate(model, getattr(dataset, split), data_cfg)
    agg = report.aggregate
    print(f"{split:5s} mIoU={agg['miou']:.4f} F1={agg['f1']:.4f} "
          f"P={agg['precision']:.4f} R={agg['recall']:.4f} "
          f"maxF={report.max_f:.4f}@{report.max_f_threshold:.3f}")
print(f"{len(history)} epochs in {elapsed:.1f}s; artifacts in {out_dir}")
