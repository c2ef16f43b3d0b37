"""Print the four-variant ablation table (params / FPS / GFLOPs).

Usage: python scripts/ablation_report.py [height width]
Default profiles at 512x512, the configured input size.
"""

import sys

from driveseg import ModelConfig
from driveseg.profiler import ablation_table, render_table

size = (int(sys.argv[1]), int(sys.argv[2])) if len(sys.argv) > 2 else (512, 512)
rows = ablation_table(ModelConfig(input_size=size), measure=True,
                      warmup=3, iters=10)
print(f"input {size[0]}x{size[1]}, FLOPs = 2 x MACs, single-image FPS")
print(render_table(rows))
