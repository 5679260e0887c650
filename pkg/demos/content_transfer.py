"""Move the shape of one toy image into another, at increasing strength.

Run: python3 demos/content_transfer.py [checkpoint] [output.png]

Each row of the output grid is one pair: original, content, then the result
for every injection strength.  The metrics printed below the table count how
often the result's shape is closer to the content image and its colours
closer to the original.
"""

import sys
from pathlib import Path

import numpy as np

from contentinject import toyset
from contentinject.denoiser import load_checkpoint
from contentinject.experiment import prepare_pairs, run_transfer, transfer_metrics
from contentinject.hspace import InjectionConfig
from contentinject.imageio import write_png
from contentinject.schedule import make_plan, make_schedule

ckpt = Path(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parents[1] / "tests/data/toy_denoiser.npz")
out_png = Path(sys.argv[2] if len(sys.argv) > 2 else "content_transfer.png")

model = load_checkpoint(ckpt)
sched = make_schedule()
plan = make_plan(1000, 50, t_edit=400, t_boost=200)

pairs = toyset.make_pairs(6, seed=1)
prepared = prepare_pairs(pairs, model, sched, plan)

gammas = (0.0, 0.3, 0.6, 1.0)
columns = [toyset.stack(prepared.originals), toyset.stack(prepared.contents)]
print(f"{'gamma':>6} {'shape wins':>11} {'colour wins':>12} {'IoU content':>12}")
for g in gammas:
    x0 = np.clip(run_transfer(prepared, InjectionConfig(gamma=g), model, sched, plan).x0, -1, 1)
    m = transfer_metrics(x0, prepared)
    print(f"{g:6.1f} {m.shape_wins.mean():11.0%} {m.color_wins.mean():12.0%} {m.iou_content.mean():12.3f}")
    columns.append(x0)

# (B, C, H, W) columns -> one (C, B*H, n*W) image
rows = np.concatenate(columns, axis=3)
grid = np.concatenate(list(rows), axis=1)
write_png(out_png, grid)
print(f"wrote {out_png}")
