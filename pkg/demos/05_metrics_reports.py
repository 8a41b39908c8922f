"""Score hand-made predictions and walk through the report files.

No training here. Three predictions against the same ground truth: a
perfect copy, a dilated blob, and an empty mask, to show how each of the
five scores reacts. Then the aggregate report files are written and read
back.
"""
import json
from pathlib import Path

import numpy as np
from scipy import ndimage

from lesionseg import generate
from lesionseg.metrics import (aggregate, evaluate_pair, format_summary,
                               write_histogram_csv, write_image_csv,
                               write_summary_json)

OUT = Path(__file__).parent / "output" / "reports"
OUT.mkdir(parents=True, exist_ok=True)

samples = generate(3, 64, seed=33)
records = []
for s, kind in zip(samples, ("perfect", "dilated", "empty")):
    gt = s.mask
    if kind == "perfect":
        pred = gt.copy()
    elif kind == "dilated":
        pred = ndimage.binary_dilation(gt, iterations=4).astype(np.uint8)
    else:
        pred = np.zeros_like(gt)
    rec = evaluate_pair(f"{s.sample_id}-{kind}", s.category, pred, gt)
    records.append(rec)
    m = rec.metrics
    print(f"{kind:8s} JA={m['JA']:.3f} DI={m['DI']:.3f} AC={m['AC']:.3f} "
          f"SE={m['SE']:.3f} SP={m['SP']:.3f}")
    # DI and JA always satisfy DI = 2JA/(1+JA)
    assert abs(m["DI"] - 2 * m["JA"] / (1 + m["JA"])) < 1e-12

report = aggregate(records)
print()
print(format_summary(report))

write_image_csv(OUT / "per_image.csv", report)
write_summary_json(OUT / "summary.json", report)
write_histogram_csv(OUT / "ja_histogram.csv", report)

summary = json.loads((OUT / "summary.json").read_text())
print(f"\nsummary.json says mean JA = {summary['overall']['JA']:.4f} "
      f"over {summary['count']} images")
print("per-image rows:")
for line in (OUT / "per_image.csv").read_text().splitlines():
    print(" ", line)
