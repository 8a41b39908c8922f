"""Peek inside the context cascade and the position-attention map.

Trains a small model for a couple hundred iterations, then runs one image
with capture enabled and visualizes what the gates let through at each
stage, plus one row of the affinity matrix rendered as a heat map.
"""
import tempfile
from pathlib import Path

import numpy as np

from lesionseg import ModelConfig, SegmentationNetwork, generate, train
from lesionseg.imgio import write_png
from lesionseg.tensor import Tensor

OUT = Path(__file__).parent / "output" / "gates"
OUT.mkdir(parents=True, exist_ok=True)


def to_u8(a):
    a = a - a.min()
    peak = a.max()
    return (255 * (a / peak if peak > 0 else a)).astype(np.uint8)


cfg = ModelConfig(input_size=64, total_iters=200, augment=False,
                  seed=5).validate()
samples = generate(4, cfg.input_size, seed=123)
model = SegmentationNetwork(cfg)
with tempfile.TemporaryDirectory() as td:
    train(model, cfg, samples, td)

s = samples[0]
model.set_training(False)
result = model(Tensor._const(s.image.transpose(2, 0, 1)[None]),
               capture=True)

write_png(OUT / "input.png", (s.image * 255).astype(np.uint8))
write_png(OUT / "mask_gt.png", (s.mask * 255).astype(np.uint8))
write_png(OUT / "prob.png", to_u8(result.main_prob.data[0, 0]))

print("gate statistics per cascade stage (channel-mean maps):")
for stage, info in enumerate(result.gate_details, start=2):
    for key in ("gate_image", "gate_context"):
        g = info[key].data[0].mean(axis=0)
        write_png(OUT / f"stage{stage}_{key}.png", to_u8(g))
        print(f"  stage {stage} {key:13s} "
              f"min={g.min():.3f} mean={g.mean():.3f} max={g.max():.3f}")

# affinity rows are distributions over positions; low entropy means the
# position looks at few peers, high entropy means it averages broadly
w = result.affinity_weights.data[0, 0]
ent = -(w * np.log(w)).sum(axis=-1)
n = w.shape[-1]
print(f"\naffinity matrix {w.shape[0]}x{w.shape[1]} "
      f"(uniform entropy would be {np.log(n):.2f})")
print(f"row entropy: min={ent.min():.2f} mean={ent.mean():.2f} "
      f"max={ent.max():.2f}")

side = int(round(np.sqrt(n)))
center_row = w[(side // 2) * side + side // 2].reshape(side, side)
write_png(OUT / "affinity_center_row.png", to_u8(center_row))
print(f"\nwrote visualizations to {OUT}")
